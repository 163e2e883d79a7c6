#pragma once

// 8-bit raster images stored interleaved (row-major, channels last), the PNM
// codec used by manifests and the service, and the geometric transforms used
// by augmentation.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "wmc/error.hpp"

namespace wmc {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  bool empty() const { return pixels.empty(); }

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void skip_pnm_space(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
}

inline int read_pnm_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  skip_pnm_space(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) fail(ErrorCode::parse, "PNM: expected integer");
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1 << 24)) fail(ErrorCode::parse, "PNM: value too large");
    ++pos;
  }
  return static_cast<int>(v);
}

}  // namespace detail

/// Decodes P2/P3 (ascii) and P5/P6 (binary) netpbm images with maxval <= 255.
inline Image decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') fail(ErrorCode::parse, "not a PNM image");
  const char kind = static_cast<char>(bytes[1]);
  int channels = 0;
  bool ascii = false;
  switch (kind) {
    case '2': channels = 1; ascii = true; break;
    case '3': channels = 3; ascii = true; break;
    case '5': channels = 1; break;
    case '6': channels = 3; break;
    default: fail(ErrorCode::parse, "unsupported PNM variant");
  }
  std::size_t pos = 2;
  const int w = detail::read_pnm_int(bytes, pos);
  const int h = detail::read_pnm_int(bytes, pos);
  const int maxval = detail::read_pnm_int(bytes, pos);
  if (w <= 0 || h <= 0) fail(ErrorCode::parse, "PNM: empty image");
  if (maxval <= 0 || maxval > 255) fail(ErrorCode::parse, "PNM: only 8-bit images are supported");
  Image img(w, h, channels);
  const std::size_t n = img.pixels.size();
  if (ascii) {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = detail::read_pnm_int(bytes, pos);
      if (v > maxval) fail(ErrorCode::parse, "PNM: sample exceeds maxval");
      img.pixels[i] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  } else {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + n) fail(ErrorCode::parse, "PNM: truncated pixel data");
    for (std::size_t i = 0; i < n; ++i) {
      const int v = bytes[pos + i];
      img.pixels[i] = static_cast<std::uint8_t>(maxval == 255 ? v : std::min(v, maxval) * 255 / maxval);
    }
  }
  return img;
}

/// Binary P5/P6 encoding.
inline std::vector<std::uint8_t> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) fail(ErrorCode::validation, "PNM needs 1 or 3 channels");
  const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline Image read_image_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

inline void write_image_file(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write image " + path.string());
  const auto bytes = encode_pnm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image hflip(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

inline Image vflip(const Image& src) {
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(src.height - 1 - y, x, c);
  return out;
}

/// Exact quarter turn: out[r][c] = in[H-1-c][r]. Swaps width and height.
inline Image rot90(const Image& src) {
  Image out(src.height, src.width, src.channels);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < src.channels; ++ch) out.at(r, c, ch) = src.at(src.height - 1 - c, r, ch);
  return out;
}

/// Rotation by `degrees` about the image centre, same turning direction as
/// rot90. Size preserved, bilinear sampling, out-of-bounds samples replicate
/// the nearest edge pixel.
inline Image rotate(const Image& src, double degrees) {
  Image out(src.width, src.height, src.channels);
  const double theta = degrees * M_PI / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
  for (int r = 0; r < src.height; ++r) {
    for (int c = 0; c < src.width; ++c) {
      const double x = c - cx, y = r - cy;
      const double xs = std::clamp(x * cs + y * sn + cx, 0.0, static_cast<double>(src.width - 1));
      const double ys = std::clamp(-x * sn + y * cs + cy, 0.0, static_cast<double>(src.height - 1));
      const int x0 = static_cast<int>(std::floor(xs)), y0 = static_cast<int>(std::floor(ys));
      const int x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const double fx = xs - x0, fy = ys - y0;
      for (int ch = 0; ch < src.channels; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * src.at(y0, x0, ch) + fx * src.at(y0, x1, ch)) +
                         fy * ((1 - fx) * src.at(y1, x0, ch) + fx * src.at(y1, x1, ch));
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

/// Bilinear resize (align-corners = false) to planar [C, H, W] floats in [0, 1].
/// Gray sources are replicated to 3 channels; RGB sources averaged down to 1.
inline std::vector<float> resize_to_planar(const Image& src, int channels, int height, int width) {
  if (src.empty()) fail(ErrorCode::validation, "image has no pixel data");
  if (channels != 1 && channels != 3) fail(ErrorCode::validation, "target channels must be 1 or 3");
  std::vector<float> out(static_cast<std::size_t>(channels) * height * width);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  auto sample = [&](int y, int x, int ch) -> double {
    if (src.channels == channels) return src.at(y, x, ch);
    if (src.channels == 1) return src.at(y, x, 0);
    return (static_cast<double>(src.at(y, x, 0)) + src.at(y, x, 1) + src.at(y, x, 2)) / 3.0;
  };
  for (int r = 0; r < height; ++r) {
    const double ys = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(ys));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = ys - y0;
    for (int c = 0; c < width; ++c) {
      const double xs = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(xs));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = xs - x0;
      for (int ch = 0; ch < channels; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0, ch) + fx * sample(y0, x1, ch)) +
                         fy * ((1 - fx) * sample(y1, x0, ch) + fx * sample(y1, x1, ch));
        out[(static_cast<std::size_t>(ch) * height + r) * width + c] = static_cast<float>(v / 255.0);
      }
    }
  }
  return out;
}

}  // namespace wmc
