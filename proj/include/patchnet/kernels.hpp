#pragma once

// Numeric primitives shared by the correlation layer and the aggregation
// network. All functions are pure; "convolution" means cross-correlation with
// valid padding throughout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "patchnet/error.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

/// For each output channel, the input channels that carry any nonzero mask entry.
using Connectivity = std::vector<std::vector<std::size_t>>;

inline Connectivity dense_connectivity(std::size_t out_channels, std::size_t in_channels) {
  Connectivity conn(out_channels);
  for (auto& row : conn) {
    row.resize(in_channels);
    for (std::size_t i = 0; i < in_channels; ++i) row[i] = i;
  }
  return conn;
}

inline Connectivity connectivity_from_mask(const Tensor4& mask) {
  Connectivity conn(mask.out_channels());
  for (std::size_t o = 0; o < mask.out_channels(); ++o) {
    for (std::size_t i = 0; i < mask.in_channels(); ++i) {
      const auto k = mask.kernel(o, i);
      if (std::any_of(k.begin(), k.end(), [](double m) { return m != 0.0; })) conn[o].push_back(i);
    }
  }
  return conn;
}

namespace detail {

inline std::size_t valid_extent(std::size_t in, std::size_t k, std::size_t stride) { return (in - k) / stride + 1; }

inline void check_conv_shapes(const Tensor3& input, const Tensor4& weights, std::size_t stride) {
  if (stride == 0) throw InvalidArgument("conv2d_valid: stride must be >= 1");
  if (weights.in_channels() != input.channels()) {
    throw InvalidArgument("conv2d_valid: channel axis mismatch, weights.in_channels=" +
                          std::to_string(weights.in_channels()) + " vs input.channels=" +
                          std::to_string(input.channels()));
  }
  if (weights.kernel_h() > input.height() || weights.kernel_w() > input.width()) {
    throw InvalidArgument("conv2d_valid: kernel " + std::to_string(weights.kernel_h()) + "x" +
                          std::to_string(weights.kernel_w()) + " does not fit input height/width " +
                          std::to_string(input.height()) + "x" + std::to_string(input.width()));
  }
}

// Four independent partial sums keep the reduction order fixed while letting
// the compiler pipeline the loop.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Rows: (in_channel, ky, kx); columns: output positions.
inline std::vector<double> im2col(const Tensor3& input, std::size_t kh, std::size_t kw, std::size_t stride,
                                  std::size_t oh, std::size_t ow) {
  const std::size_t npos = oh * ow;
  std::vector<double> col(input.channels() * kh * kw * npos);
  double* dst = col.data();
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) *dst++ = input(c, oy * stride + ky, ox * stride + kx);
        }
      }
    }
  }
  return col;
}

}  // namespace detail

/// Valid-mode cross-correlation restricted to the given channel connectivity.
/// Weights outside `conn` are ignored (treated as zero).
inline Tensor3 conv2d_valid(const Tensor3& input, const Tensor4& weights, std::size_t stride, const Connectivity& conn) {
  detail::check_conv_shapes(input, weights, stride);
  const std::size_t kh = weights.kernel_h(), kw = weights.kernel_w();
  const std::size_t oh = detail::valid_extent(input.height(), kh, stride);
  const std::size_t ow = detail::valid_extent(input.width(), kw, stride);
  const std::size_t W = input.width();
  Tensor3 out(weights.out_channels(), oh, ow);

  if (stride == 1) {
    for (std::size_t o = 0; o < weights.out_channels(); ++o) {
      double* dst = out.plane(o).data();
      for (std::size_t i : conn[o]) {
        const double* src = input.plane(i).data();
        const auto k = weights.kernel(o, i);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double w = k[ky * kw + kx];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const double* row = src + (oy + ky) * W + kx;
              double* orow = dst + oy * ow;
              for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += w * row[ox];
            }
          }
        }
      }
    }
    return out;
  }

  const std::size_t npos = oh * ow, kk = kh * kw;
  const auto col = detail::im2col(input, kh, kw, stride, oh, ow);
  for (std::size_t o = 0; o < weights.out_channels(); ++o) {
    double* dst = out.plane(o).data();
    for (std::size_t i : conn[o]) {
      const auto k = weights.kernel(o, i);
      for (std::size_t t = 0; t < kk; ++t) {
        const double w = k[t];
        const double* src = col.data() + (i * kk + t) * npos;
        for (std::size_t p = 0; p < npos; ++p) dst[p] += w * src[p];
      }
    }
  }
  return out;
}

/// Valid-mode 2D cross-correlation (no kernel flip, no padding).
inline Tensor3 conv2d_valid(const Tensor3& input, const Tensor4& weights, std::size_t stride) {
  detail::check_conv_shapes(input, weights, stride);
  return conv2d_valid(input, weights, stride, dense_connectivity(weights.out_channels(), weights.in_channels()));
}

/// Gradient of conv2d_valid with respect to its input.
inline Tensor3 conv2d_valid_grad_input(const Tensor3& grad_out, const Tensor4& weights, std::size_t stride,
                                       std::size_t in_height, std::size_t in_width, const Connectivity& conn) {
  const std::size_t kh = weights.kernel_h(), kw = weights.kernel_w();
  const std::size_t oh = grad_out.height(), ow = grad_out.width();
  if (grad_out.channels() != weights.out_channels() || detail::valid_extent(in_height, kh, stride) != oh ||
      detail::valid_extent(in_width, kw, stride) != ow) {
    throw InvalidArgument("conv2d_valid_grad_input: grad_out " + grad_out.shape_string() +
                          " inconsistent with weights " + weights.shape_string());
  }
  Tensor3 grad_in(weights.in_channels(), in_height, in_width);
  for (std::size_t o = 0; o < weights.out_channels(); ++o) {
    const double* g = grad_out.plane(o).data();
    for (std::size_t i : conn[o]) {
      double* dst = grad_in.plane(i).data();
      const auto k = weights.kernel(o, i);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double w = k[ky * kw + kx];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            double* row = dst + (oy * stride + ky) * in_width + kx;
            const double* grow = g + oy * ow;
            for (std::size_t ox = 0; ox < ow; ++ox) row[ox * stride] += w * grow[ox];
          }
        }
      }
    }
  }
  return grad_in;
}

/// Gradient of conv2d_valid with respect to its weights; entries outside `conn` stay zero.
inline Tensor4 conv2d_valid_grad_weights(const Tensor3& grad_out, const Tensor3& input, std::size_t stride,
                                         std::size_t kernel_h, std::size_t kernel_w, const Connectivity& conn) {
  const std::size_t oh = grad_out.height(), ow = grad_out.width();
  if (detail::valid_extent(input.height(), kernel_h, stride) != oh ||
      detail::valid_extent(input.width(), kernel_w, stride) != ow) {
    throw InvalidArgument("conv2d_valid_grad_weights: grad_out " + grad_out.shape_string() +
                          " inconsistent with input " + input.shape_string());
  }
  Tensor4 grad(grad_out.channels(), input.channels(), kernel_h, kernel_w);
  const std::size_t npos = oh * ow, kk = kernel_h * kernel_w;
  if (stride == 1) {
    const std::size_t W = input.width();
    for (std::size_t o = 0; o < grad_out.channels(); ++o) {
      const double* g = grad_out.plane(o).data();
      for (std::size_t i : conn[o]) {
        const double* src = input.plane(i).data();
        auto k = grad.kernel(o, i);
        for (std::size_t ky = 0; ky < kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < kernel_w; ++kx) {
            double s = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) s += detail::dot(g + oy * ow, src + (oy + ky) * W + kx, ow);
            k[ky * kernel_w + kx] = s;
          }
        }
      }
    }
    return grad;
  }
  const auto col = detail::im2col(input, kernel_h, kernel_w, stride, oh, ow);
  for (std::size_t o = 0; o < grad_out.channels(); ++o) {
    const double* g = grad_out.plane(o).data();
    for (std::size_t i : conn[o]) {
      auto k = grad.kernel(o, i);
      for (std::size_t t = 0; t < kk; ++t) k[t] = detail::dot(g, col.data() + (i * kk + t) * npos, npos);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// FFT

namespace detail {

inline void fft1d(double* re, double* im, std::size_t n, std::size_t step, bool inverse) {
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i * step], re[j * step]);
      std::swap(im[i * step], im[j * step]);
    }
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const double wr = std::cos(ang), wi = std::sin(ang);
      for (std::size_t s = 0; s < n; s += len) {
        const std::size_t a = (s + k) * step, b = (s + k + half) * step;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

}  // namespace detail

/// Unnormalized forward 2D DFT; the inverse applies 1/(H*W).
inline ComplexPlane fft2d(ComplexPlane plane, bool inverse) {
  const std::size_t h = plane.height(), w = plane.width();
  double* re = plane.re().data();
  double* im = plane.im().data();
  for (std::size_t y = 0; y < h; ++y) detail::fft1d(re + y * w, im + y * w, w, 1, inverse);
  for (std::size_t x = 0; x < w; ++x) detail::fft1d(re + x, im + x, h, w, inverse);
  if (inverse) {
    const double norm = 1.0 / static_cast<double>(h * w);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      re[i] *= norm;
      im[i] *= norm;
    }
  }
  return plane;
}

// ---------------------------------------------------------------------------
// Soft-selection pooling

/// Learned offset added per window position q = 2*i + j (row i, column j of the
/// 2x2 window) and offset component k: element [q * 4 + k].
using PoolBias = std::array<double, 16>;

struct PoolOutput {
  Tensor3 scores;
  Tensor3 offsets;
};

struct PoolGrad {
  Tensor3 scores;
  Tensor3 offsets;
  PoolBias bias{};
};

namespace detail {

inline void check_pool_shapes(const Tensor3& scores, const Tensor3& offsets) {
  if (offsets.channels() != 4 * scores.channels()) {
    throw InvalidArgument("soft_select_pool: offsets.channels (" + std::to_string(offsets.channels()) +
                          ") must be 4 x scores.channels (" + std::to_string(scores.channels()) + ")");
  }
  if (offsets.height() != scores.height() || offsets.width() != scores.width()) {
    throw InvalidArgument("soft_select_pool: spatial dims differ, scores " + scores.shape_string() + " vs offsets " +
                          offsets.shape_string());
  }
  if (scores.height() % 2 != 0 || scores.width() % 2 != 0) {
    throw InvalidArgument("soft_select_pool: spatial dims must be even (got " + std::to_string(scores.height()) +
                          "x" + std::to_string(scores.width()) + ")");
  }
}

struct Window {
  std::array<double, 4> s;
  std::array<double, 4> p;  // softmax
  std::size_t best;
};

inline Window window(const Tensor3& scores, std::size_t c, std::size_t Y, std::size_t X) {
  Window win{};
  for (std::size_t q = 0; q < 4; ++q) win.s[q] = scores(c, 2 * Y + q / 2, 2 * X + q % 2);
  win.best = 0;
  for (std::size_t q = 1; q < 4; ++q) {
    if (win.s[q] > win.s[win.best]) win.best = q;
  }
  const double m = win.s[win.best];
  double z = 0.0;
  for (std::size_t q = 0; q < 4; ++q) z += (win.p[q] = std::exp(win.s[q] - m));
  for (auto& v : win.p) v /= z;
  return win;
}

}  // namespace detail

/// 2x2 stride-2 pooling: scores by max, offsets by softmax(scores)-weighted
/// combination of (offset + position bias).
inline PoolOutput soft_select_pool(const Tensor3& scores, const Tensor3& offsets, const PoolBias& bias) {
  detail::check_pool_shapes(scores, offsets);
  const std::size_t C = scores.channels(), H = scores.height() / 2, W = scores.width() / 2;
  PoolOutput out{Tensor3(C, H, W), Tensor3(4 * C, H, W)};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t Y = 0; Y < H; ++Y) {
      for (std::size_t X = 0; X < W; ++X) {
        const auto win = detail::window(scores, c, Y, X);
        out.scores(c, Y, X) = win.s[win.best];
        for (std::size_t k = 0; k < 4; ++k) {
          double acc = 0.0;
          for (std::size_t q = 0; q < 4; ++q) {
            acc += win.p[q] * (offsets(4 * c + k, 2 * Y + q / 2, 2 * X + q % 2) + bias[q * 4 + k]);
          }
          out.offsets(4 * c + k, Y, X) = acc;
        }
      }
    }
  }
  return out;
}

/// Reverse-mode gradient of soft_select_pool. Max ties route to the first window position.
inline PoolGrad soft_select_pool_backward(const Tensor3& scores, const Tensor3& offsets, const PoolBias& bias,
                                          const Tensor3& grad_scores_out, const Tensor3& grad_offsets_out) {
  detail::check_pool_shapes(scores, offsets);
  const std::size_t C = scores.channels(), H = scores.height() / 2, W = scores.width() / 2;
  PoolGrad g{Tensor3(C, scores.height(), scores.width()), Tensor3(4 * C, scores.height(), scores.width()), {}};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t Y = 0; Y < H; ++Y) {
      for (std::size_t X = 0; X < W; ++X) {
        const auto win = detail::window(scores, c, Y, X);
        std::array<double, 4> dp{};
        for (std::size_t k = 0; k < 4; ++k) {
          const double go = grad_offsets_out(4 * c + k, Y, X);
          for (std::size_t q = 0; q < 4; ++q) {
            const std::size_t y = 2 * Y + q / 2, x = 2 * X + q % 2;
            g.offsets(4 * c + k, y, x) += win.p[q] * go;
            g.bias[q * 4 + k] += win.p[q] * go;
            dp[q] += go * (offsets(4 * c + k, y, x) + bias[q * 4 + k]);
          }
        }
        double mean = 0.0;
        for (std::size_t q = 0; q < 4; ++q) mean += win.p[q] * dp[q];
        for (std::size_t q = 0; q < 4; ++q) {
          g.scores(c, 2 * Y + q / 2, 2 * X + q % 2) += win.p[q] * (dp[q] - mean);
        }
        g.scores(c, 2 * Y + win.best / 2, 2 * X + win.best % 2) += grad_scores_out(c, Y, X);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

/// Elementwise product with a {0,1} mask.
inline Tensor4 apply_mask(Tensor4 weights, const Tensor4& mask) {
  if (!weights.same_shape(mask)) {
    throw InvalidArgument("apply_mask: shape mismatch, weights " + weights.shape_string() + " vs mask " +
                          mask.shape_string());
  }
  for (std::size_t i = 0; i < weights.size(); ++i) weights.data()[i] *= mask.data()[i];
  return weights;
}

struct SpatialPeak {
  std::size_t y = 0;
  std::size_t x = 0;
  double value = 0.0;
};

/// Location of the maximum of a single-channel map; first occurrence in row-major order wins ties.
inline SpatialPeak argmax_spatial(const Tensor3& map) {
  if (map.channels() != 1) {
    throw InvalidArgument("argmax_spatial: expected 1 channel, got " + std::to_string(map.channels()));
  }
  const auto& d = map.data();
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d[i] > d[best]) best = i;
  }
  return {best / map.width(), best % map.width(), d[best]};
}

}  // namespace patchnet
