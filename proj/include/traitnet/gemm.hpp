/* Copyright 2026 The traitnet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Row-major GEMM kernels over raw spans, backed by Eigen.

#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace traitnet::gemm {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

/// C[m,n] (+)= A[m,k] * B[k,n]
inline void ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n,
               bool accumulate) {
  ConstMapMat A(a, m, k);
  ConstMapMat B(b, k, n);
  MapMat C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

/// C[m,n] (+)= A[k,m]^T * B[k,n]
inline void atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                bool accumulate) {
  ConstMapMat A(a, k, m);
  ConstMapMat B(b, k, n);
  MapMat C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

/// C[m,n] (+)= A[m,k] * B[n,k]^T
inline void abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t n,
                bool accumulate) {
  ConstMapMat A(a, m, k);
  ConstMapMat B(b, n, k);
  MapMat C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

}  // namespace traitnet::gemm
