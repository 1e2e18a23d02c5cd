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


// Raster file I/O: PNG (via libpng) and binary netpbm (PGM/PPM).

#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "traitnet/errors.hpp"
#include "traitnet/tensor.hpp"

namespace traitnet {

/// Interleaved row-major samples. `channels` is 1 (gray) or 3 (RGB);
/// `bit_depth` is 8 or 16 and bounds every sample value.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;

  Raster() = default;
  Raster(int w, int h, int c, int depth)
      : width(w), height(h), channels(c), bit_depth(depth), samples(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint16_t& at(int y, int x, int c) { return samples[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint16_t at(int y, int x, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }

  bool operator==(const Raster&) const = default;
};

namespace detail {

inline void validate_raster(const Raster& r, const std::string& where) {
  if (r.width <= 0 || r.height <= 0) throw Error(where + ": empty raster");
  if (r.channels != 1 && r.channels != 3) throw Error(where + ": raster must have 1 or 3 channels");
  if (r.bit_depth != 8 && r.bit_depth != 16) throw Error(where + ": raster bit depth must be 8 or 16");
  if (r.samples.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw Error(where + ": raster sample count does not match its size");
}

struct PngReadResult {
  bool ok = false;
  char message[256] = {};
};

inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* result = static_cast<PngReadResult*>(png_get_error_ptr(png));
  std::snprintf(result->message, sizeof(result->message), "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

struct MemoryCursor {
  const std::string* bytes;
  std::size_t pos;
};

inline void png_read_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<MemoryCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes->size()) png_error(png, "unexpected end of file");
  std::copy_n(cur->bytes->data() + cur->pos, n, reinterpret_cast<char*>(out));
  cur->pos += n;
}

inline void png_write_memory(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

inline void png_flush_noop(png_structp) {}

// Only trivially destructible state is touched between setjmp and a possible
// longjmp; C++ objects live in the caller.
inline bool decode_png_raw(const std::string& bytes, Raster& out, PngReadResult& result) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &result, png_error_handler, png_warning_handler);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  MemoryCursor cursor{&bytes, 0};
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  std::vector<png_byte>* buffer = new std::vector<png_byte>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    delete buffer;
    return false;
  }
  png_set_read_fn(png, &cursor, png_read_memory);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if ((channels != 1 && channels != 3) || (depth != 8 && depth != 16)) png_error(png, "unsupported PNG layout");
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer->resize(row_bytes * h);
  rows->resize(h);
  for (png_uint_32 y = 0; y < h; ++y) (*rows)[y] = buffer->data() + y * row_bytes;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.channels = channels;
  out.bit_depth = depth;
  out.samples.resize(static_cast<std::size_t>(w) * h * channels);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (depth == 8) {
      out.samples[i] = (*buffer)[i];
    } else {
      out.samples[i] = static_cast<std::uint16_t>((*buffer)[2 * i] | ((*buffer)[2 * i + 1] << 8));
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  delete rows;
  delete buffer;
  result.ok = true;
  return true;
}

inline bool encode_png_raw(const Raster& r, std::string& out, PngReadResult& result) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &result, png_error_handler, png_warning_handler);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  std::vector<png_byte>* buffer = new std::vector<png_byte>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    delete buffer;
    return false;
  }
  png_set_write_fn(png, &out, png_write_memory, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), r.bit_depth,
               r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t bytes_per = r.bit_depth / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(r.width) * r.channels * bytes_per;
  buffer->resize(row_bytes);
  for (int y = 0; y < r.height; ++y) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(r.width) * r.channels; ++i) {
      const std::uint16_t v = r.samples[static_cast<std::size_t>(y) * r.width * r.channels + i];
      if (bytes_per == 1) {
        (*buffer)[i] = static_cast<png_byte>(v);
      } else {  // PNG stores 16-bit samples big-endian
        (*buffer)[2 * i] = static_cast<png_byte>(v >> 8);
        (*buffer)[2 * i + 1] = static_cast<png_byte>(v & 0xff);
      }
    }
    png_write_row(png, buffer->data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  delete buffer;
  result.ok = true;
  return true;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), "cannot open file");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace detail

inline Raster decode_png(const std::string& bytes, const std::string& source = "<memory>") {
  Raster r;
  detail::PngReadResult result;
  if (!detail::decode_png_raw(bytes, r, result))
    throw ParseError(source, std::string("invalid PNG: ") + (result.message[0] ? result.message : "libpng failure"));
  return r;
}

inline std::string encode_png(const Raster& r) {
  detail::validate_raster(r, "encode_png");
  std::string out;
  detail::PngReadResult result;
  if (!detail::encode_png_raw(r, out, result))
    throw Error(std::string("PNG encoding failed: ") + (result.message[0] ? result.message : "libpng failure"));
  return out;
}

/// Binary PGM (P5) or PPM (P6); maxval above 255 selects 16-bit samples.
inline std::string encode_pnm(const Raster& r) {
  detail::validate_raster(r, "encode_pnm");
  std::ostringstream os;
  os << (r.channels == 3 ? "P6" : "P5") << '\n' << r.width << ' ' << r.height << '\n' << r.max_value() << '\n';
  std::string out = os.str();
  for (auto v : r.samples) {
    if (r.bit_depth == 16) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

inline Raster decode_pnm(const std::string& bytes, const std::string& source = "<memory>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) throw ParseError(source, std::string("netpbm ") + what + " too large");
      ++pos;
    }
    if (pos == start) throw ParseError(source, std::string("netpbm header: missing ") + what);
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError(source, "not a binary PGM/PPM file");
  pos = 2;
  Raster r;
  r.channels = bytes[1] == '6' ? 3 : 1;
  r.width = read_int("width");
  r.height = read_int("height");
  const int maxval = read_int("maxval");
  if (r.width == 0 || r.height == 0 || maxval == 0 || maxval > 65535)
    throw ParseError(source, "netpbm header has invalid size or maxval");
  r.bit_depth = maxval > 255 ? 16 : 8;
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  const std::size_t bytes_per = r.bit_depth / 8;
  if (bytes.size() < pos + n * bytes_per) throw ParseError(source, "netpbm raster truncated");
  r.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + i * bytes_per);
    r.samples[i] = bytes_per == 1 ? p[0] : static_cast<std::uint16_t>((p[0] << 8) | p[1]);
  }
  return r;
}

/// Reads a PNG, PGM or PPM file, dispatching on its signature.
inline Raster read_raster(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0)
    return decode_png(bytes, path.string());
  return decode_pnm(bytes, path.string());
}

/// Writes PNG for a .png extension, netpbm otherwise.
inline void write_raster(const std::filesystem::path& path, const Raster& r) {
  const auto ext = path.extension().string();
  detail::write_file_bytes(path, ext == ".png" || ext == ".PNG" ? encode_png(r) : encode_pnm(r));
}

/// [C,H,W] tensor of raw sample values.
inline Tensor raster_to_tensor(const Raster& r) {
  std::vector<double> v(r.samples.size());
  const std::size_t hw = static_cast<std::size_t>(r.width) * r.height;
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < r.channels; ++c) v[c * hw + p] = r.samples[p * r.channels + c];
  return Tensor::from({r.channels, r.height, r.width}, std::move(v));
}

/// Inverse of raster_to_tensor; values are rounded and clamped to the depth.
inline Raster tensor_to_raster(const Tensor& t, int bit_depth) {
  if (t.ndim() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw DimensionError("tensor_to_raster", "channels", "expected [1|3,H,W], got " + shape_str(t.shape()));
  Raster r(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)), bit_depth);
  const double hi = r.max_value();
  const std::size_t hw = static_cast<std::size_t>(r.width) * r.height;
  auto d = t.data();
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < r.channels; ++c)
      r.samples[p * r.channels + c] = static_cast<std::uint16_t>(std::clamp(std::round(d[c * hw + p]), 0.0, hi));
  return r;
}

}  // namespace traitnet
