#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

/// 8-bit interleaved RGB frame.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w <= 0 || h <= 0) throw InvalidArgument("Image: dimensions must be positive");
  }

  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  std::array<double, 3> channel_mean() const {
    std::array<double, 3> sum{};
    for (std::size_t i = 0; i < rgb.size(); ++i) sum[i % 3] += rgb[i];
    const double n = static_cast<double>(width) * height;
    for (auto& s : sum) s /= n;
    return sum;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void skip_ppm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_ppm_int(std::istream& in, const std::string& what) {
  skip_ppm_space(in);
  int v = -1;
  if (!(in >> v) || v <= 0) throw FormatError("PPM: bad " + what);
  return v;
}

}  // namespace detail

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("PPM: cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw FormatError("PPM: " + path.string() + " is not binary P6");
  const int w = detail::read_ppm_int(in, "width");
  const int h = detail::read_ppm_int(in, "height");
  const int maxval = detail::read_ppm_int(in, "maxval");
  if (maxval != 255) throw FormatError("PPM: only 8-bit maxval 255 supported (" + path.string() + ")");
  in.get();  // single whitespace before raster
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw FormatError("PPM: truncated raster in " + path.string());
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("PPM: cannot write " + path.string());
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

/// Crops the square window of `crop_geometry(box, out_size, context_factor)` and
/// resamples it bilinearly. Samples outside the frame take the frame's mean color.
/// Output values are in [0,1]; one output channel means luminance (RGB average).
inline Tensor3 crop_and_warp(const Image& frame, const BBox& box, int out_size, double context_factor,
                             std::size_t channels = 3) {
  if (!(box.width() > 1.0) || !(box.height() > 1.0)) {
    throw DegenerateInput("crop_and_warp: box side must exceed 1px (got " + std::to_string(box.width()) + "x" +
                          std::to_string(box.height()) + ")");
  }
  if (out_size <= 0) throw InvalidArgument("crop_and_warp: out_size must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("crop_and_warp: channels must be 1 or 3");

  const auto geo = crop_geometry(box, out_size, context_factor);
  const auto mean = frame.channel_mean();
  const auto pixel = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return mean[c];
    return frame.at(x, y, c);
  };

  const auto n = static_cast<std::size_t>(out_size);
  Tensor3 rgb(3, n, n);
  for (std::size_t v = 0; v < n; ++v) {
    const double sy = geo.to_frame_y(v + 0.5) - 0.5;
    const double y0f = std::floor(sy);
    const double fy = sy - y0f;
    const int y0 = static_cast<int>(y0f);
    for (std::size_t u = 0; u < n; ++u) {
      const double sx = geo.to_frame_x(u + 0.5) - 0.5;
      const double x0f = std::floor(sx);
      const double fx = sx - x0f;
      const int x0 = static_cast<int>(x0f);
      for (int c = 0; c < 3; ++c) {
        const double val = (1.0 - fy) * ((1.0 - fx) * pixel(x0, y0, c) + fx * pixel(x0 + 1, y0, c)) +
                           fy * ((1.0 - fx) * pixel(x0, y0 + 1, c) + fx * pixel(x0 + 1, y0 + 1, c));
        rgb(c, v, u) = val / 255.0;
      }
    }
  }
  if (channels == 3) return rgb;
  Tensor3 gray(1, n, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    gray.data()[i] = (rgb.data()[i] + rgb.data()[n * n + i] + rgb.data()[2 * n * n + i]) / 3.0;
  }
  return gray;
}

}  // namespace patchnet
