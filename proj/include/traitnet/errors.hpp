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

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace traitnet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement. `axis()` names the offending axis.
class DimensionError : public Error {
 public:
  DimensionError(std::string op, std::string axis, const std::string& detail)
      : Error(op + ": dimension mismatch on axis '" + axis + "': " + detail),
        op_(std::move(op)),
        axis_(std::move(axis)) {}

  const std::string& op() const { return op_; }
  const std::string& axis() const { return axis_; }

 private:
  std::string op_;
  std::string axis_;
};

/// Invalid model / layer / training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (checkpoint, manifest, image, report).
class ParseError : public Error {
 public:
  ParseError(std::string what_file, std::string reason)
      : Error(what_file + ": " + reason), file_(std::move(what_file)), reason_(std::move(reason)) {}

  const std::string& file() const { return file_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string file_;
  std::string reason_;
};

/// Dataset content problems (empty split, constant channel, leakage...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, int batch, double loss)
      : Error(message(epoch, batch, loss)), epoch_(epoch), batch_(batch), loss_(loss) {}

  int epoch() const { return epoch_; }
  int batch() const { return batch_; }
  double loss() const { return loss_; }

 private:
  static std::string message(int epoch, int batch, double loss) {
    std::ostringstream os;
    os << "non-finite training loss " << loss << " at epoch " << epoch << ", batch " << batch;
    return os.str();
  }

  int epoch_;
  int batch_;
  double loss_;
};

namespace detail {

template <typename... Args>
std::string concat_message(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

}  // namespace traitnet

#define TRAITNET_CHECK(cond, ExceptionType, ...)                                 \
  do {                                                                           \
    if (!(cond)) {                                                               \
      throw ExceptionType(::traitnet::detail::concat_message(__VA_ARGS__));     \
    }                                                                            \
  } while (0)

#define TRAITNET_CHECK_DIM(cond, op, axis, detail)                             \
  do {                                                                           \
    if (!(cond)) {                                                               \
      throw ::traitnet::DimensionError((op), (axis), (detail));                  \
    }                                                                            \
  } while (0)
