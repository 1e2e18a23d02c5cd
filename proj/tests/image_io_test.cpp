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


#include <gtest/gtest.h>

#include <filesystem>

#include "support/temp_dir.hpp"
#include "traitnet/image_io.hpp"
#include "traitnet/random.hpp"

namespace traitnet {
namespace {

Raster random_raster(int w, int h, int c, int depth, std::uint64_t seed) {
  Rng rng(seed);
  Raster r(w, h, c, depth);
  for (auto& v : r.samples) v = static_cast<std::uint16_t>(rng.below(r.max_value() + 1u));
  return r;
}

TEST(ImageIoTest, PngRoundTripRgb8) {
  const Raster r = random_raster(13, 7, 3, 8, 1);
  EXPECT_EQ(decode_png(encode_png(r)), r);
}

TEST(ImageIoTest, PngRoundTripGray16) {
  Raster r = random_raster(9, 11, 1, 16, 2);
  r.samples[0] = 65535;
  r.samples[1] = 0;
  r.samples[2] = 256;
  EXPECT_EQ(decode_png(encode_png(r)), r);
}

TEST(ImageIoTest, PnmRoundTrip) {
  for (int c : {1, 3})
    for (int d : {8, 16}) {
      const Raster r = random_raster(5, 4, c, d, 3 + c + d);
      EXPECT_EQ(decode_pnm(encode_pnm(r)), r) << c << " channels, " << d << " bit";
    }
}

TEST(ImageIoTest, FileDispatchOnSignature) {
  testing::TempDir dir("imgio");
  const Raster rgb = random_raster(6, 5, 3, 8, 4);
  const Raster gray = random_raster(6, 5, 1, 16, 5);
  write_raster(dir / "a.png", rgb);
  write_raster(dir / "b.pgm", gray);
  EXPECT_EQ(read_raster(dir / "a.png"), rgb);
  EXPECT_EQ(read_raster(dir / "b.pgm"), gray);
}

TEST(ImageIoTest, TruncatedPngIsParseError) {
  const std::string bytes = encode_png(random_raster(16, 16, 3, 8, 6));
  try {
    decode_png(bytes.substr(0, bytes.size() / 2), "half.png");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.file(), "half.png");
  }
}

TEST(ImageIoTest, GarbageIsParseError) {
  EXPECT_THROW(decode_pnm("hello"), ParseError);
  EXPECT_THROW(decode_pnm("P6\n4 4\n255\nab"), ParseError);
  EXPECT_THROW(decode_png("not a png at all"), ParseError);
}

TEST(ImageIoTest, TensorConversionIsChannelMajor) {
  Raster r(2, 1, 3, 8);
  r.samples = {1, 2, 3, 4, 5, 6};  // pixel0 = (1,2,3), pixel1 = (4,5,6)
  const Tensor t = raster_to_tensor(r);
  EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(tensor_to_raster(t, 8), r);
}

TEST(ImageIoTest, TensorToRasterClampsAndRounds) {
  const Tensor t = Tensor::from({1, 1, 3}, {-5.0, 2.6, 300.0});
  const Raster r = tensor_to_raster(t, 8);
  EXPECT_EQ(r.samples, (std::vector<std::uint16_t>{0, 3, 255}));
}

}  // namespace
}  // namespace traitnet
