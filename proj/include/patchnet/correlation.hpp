#pragma once

// Patch correlation layer: the template crop is split into N*N patches of
// K*K pixels, each patch is reweighted in the Fourier domain, and the
// resulting filter bank is correlated against a search crop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/image.hpp"
#include "patchnet/kernels.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

struct CorrelationConfig {
  std::size_t patches_per_side = 8;  // N
  std::size_t patch_size = 8;        // K
  std::size_t template_size = 64;    // N*K
  std::size_t search_size = 156;
  std::size_t corr_stride = 4;
  std::size_t channels = 3;

  /// Template crops span exactly the box's longer side.
  static constexpr double template_context = 1.0;

  /// Aggregation stages: each one merges 2x2 patch groups, so N = 2^stages.
  std::size_t stages() const {
    std::size_t s = 0;
    for (std::size_t n = patches_per_side; n > 1; n >>= 1) ++s;
    return s;
  }
  std::size_t patch_count() const { return patches_per_side * patches_per_side; }
  std::size_t corr_size() const { return (search_size - patch_size) / corr_stride + 1; }
  /// Crop pixels spanned by one response-map cell.
  std::size_t effective_stride() const { return corr_stride << stages(); }
  /// Search context chosen so template and search crops share one pixel scale.
  double search_context() const {
    return template_context * static_cast<double>(search_size) / static_cast<double>(template_size);
  }
  /// Correlation outputs are averages over the K*K*channels filter support.
  double filter_norm() const { return 1.0 / static_cast<double>(patch_size * patch_size * channels); }

  /// Spatial size of the map entering each stage, followed by the final response size.
  std::vector<std::size_t> stage_input_sizes() const {
    std::vector<std::size_t> sizes{corr_size()};
    for (std::size_t s = 0; s < stages(); ++s) {
      const std::size_t in = sizes.back();
      if (in < 3 || (in - 2) % 2 != 0 || in - 2 < 2) {
        throw InvalidArgument("CorrelationConfig: stage " + std::to_string(s + 1) + " input size " +
                              std::to_string(in) + " cannot take a valid 3x3 conv followed by 2x2 pooling");
      }
      sizes.push_back((in - 2) / 2);
    }
    return sizes;
  }
  std::size_t response_size() const { return stage_input_sizes().back(); }

  /// Checks the model-level invariants; throws InvalidArgument naming the violated one.
  void validate() const {
    if (!is_power_of_two(patch_size)) throw InvalidArgument("CorrelationConfig: K must be a power of two");
    if (!is_power_of_two(patches_per_side) || patches_per_side < 4) {
      throw InvalidArgument("CorrelationConfig: N must be a power of two >= 4");
    }
    if (template_size != patches_per_side * patch_size) {
      throw InvalidArgument("CorrelationConfig: template_size must equal N*K");
    }
    if (search_size < template_size) throw InvalidArgument("CorrelationConfig: search_size < template_size");
    if (corr_stride == 0) throw InvalidArgument("CorrelationConfig: corr_stride must be >= 1");
    if (channels != 1 && channels != 3) throw InvalidArgument("CorrelationConfig: channels must be 1 or 3");
    (void)stage_input_sizes();
  }

  friend bool operator==(const CorrelationConfig&, const CorrelationConfig&) = default;
};

/// Reduced geometry used for gradient checks and fast unit tests.
inline CorrelationConfig reduced_config() {
  CorrelationConfig c;
  c.patches_per_side = 4;
  c.patch_size = 4;
  c.template_size = 16;
  c.search_size = 30;
  c.corr_stride = 2;
  c.channels = 3;
  return c;
}

/// Mirror-symmetric K*K spectral weights. Only the (K/2+1)^2 quadrant is stored;
/// the full map reflects it across both axes, so reweighting a real patch keeps it real.
class FourierCoefficients {
 public:
  explicit FourierCoefficients(std::size_t patch_size = 8, double fill = 1.0) : k_(patch_size) {
    if (!is_power_of_two(k_)) throw InvalidArgument("FourierCoefficients: K must be a power of two");
    q_ = k_ / 2 + 1;
    params_.assign(q_ * q_, fill);
  }

  std::size_t patch_size() const { return k_; }
  std::size_t quadrant() const { return q_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::size_t fold(std::size_t u) const { return std::min(u, (k_ - u) % k_); }
  double operator()(std::size_t u, std::size_t v) const { return params_[fold(u) * q_ + fold(v)]; }

  std::vector<double> materialize() const {
    std::vector<double> map(k_ * k_);
    for (std::size_t u = 0; u < k_; ++u) {
      for (std::size_t v = 0; v < k_; ++v) map[u * k_ + v] = (*this)(u, v);
    }
    return map;
  }

  /// Sums a gradient over the full map onto the stored quadrant parameters.
  std::vector<double> fold_gradient(const std::vector<double>& map_grad) const {
    std::vector<double> g(params_.size(), 0.0);
    for (std::size_t u = 0; u < k_; ++u) {
      for (std::size_t v = 0; v < k_; ++v) g[fold(u) * q_ + fold(v)] += map_grad[u * k_ + v];
    }
    return g;
  }

  friend bool operator==(const FourierCoefficients&, const FourierCoefficients&) = default;

 private:
  std::size_t k_;
  std::size_t q_;
  std::vector<double> params_;
};

/// Per-patch correlation filters for one template, immutable once built.
struct TemplateFilterBank {
  Tensor4 filters;  // (N*N, channels, K, K), patch p = row*N + col
  BBox source_box;
};

/// Filter p = row*N + col is the template region [row*K, row*K+K) x [col*K, col*K+K).
inline Tensor4 split_patches(const Tensor3& templ, std::size_t patches_per_side, std::size_t patch_size) {
  const std::size_t side = patches_per_side * patch_size;
  if (templ.height() != side || templ.width() != side) {
    throw InvalidArgument("split_patches: template is " + std::to_string(templ.height()) + "x" +
                          std::to_string(templ.width()) + ", expected N*K = " + std::to_string(side));
  }
  const std::size_t N = patches_per_side, K = patch_size;
  Tensor4 out(N * N, templ.channels(), K, K);
  for (std::size_t r = 0; r < N; ++r) {
    for (std::size_t c = 0; c < N; ++c) {
      for (std::size_t ch = 0; ch < templ.channels(); ++ch) {
        for (std::size_t y = 0; y < K; ++y) {
          for (std::size_t x = 0; x < K; ++x) out(r * N + c, ch, y, x) = templ(ch, r * K + y, c * K + x);
        }
      }
    }
  }
  return out;
}

inline Tensor4 split_patches(const Tensor3& templ, const CorrelationConfig& config) {
  if (templ.channels() != config.channels) {
    throw InvalidArgument("split_patches: template has " + std::to_string(templ.channels()) +
                          " channels, config expects " + std::to_string(config.channels));
  }
  return split_patches(templ, config.patches_per_side, config.patch_size);
}

/// Inverse of split_patches.
inline Tensor3 reassemble_patches(const Tensor4& patches) {
  const std::size_t K = patches.kernel_h();
  const auto N = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches.out_channels()))));
  if (N * N != patches.out_channels() || patches.kernel_w() != K) {
    throw InvalidArgument("reassemble_patches: need a square count of square patches, got " + patches.shape_string());
  }
  Tensor3 out(patches.in_channels(), N * K, N * K);
  for (std::size_t p = 0; p < N * N; ++p) {
    for (std::size_t ch = 0; ch < patches.in_channels(); ++ch) {
      for (std::size_t y = 0; y < K; ++y) {
        for (std::size_t x = 0; x < K; ++x) out(ch, (p / N) * K + y, (p % N) * K + x) = patches(p, ch, y, x);
      }
    }
  }
  return out;
}

namespace detail {

inline void check_coefficient_map(const std::vector<double>& map, std::size_t K) {
  if (map.size() != K * K) throw InvalidArgument("fourier_reweight: coefficient map must be K*K");
  for (std::size_t u = 0; u < K; ++u) {
    for (std::size_t v = 0; v < K; ++v) {
      const double w = map[u * K + v];
      if (w != map[((K - u) % K) * K + v] || w != map[u * K + (K - v) % K]) {
        throw InvariantViolation("fourier_reweight: coefficient map is not mirror-symmetric at (" +
                                 std::to_string(u) + "," + std::to_string(v) + ")");
      }
    }
  }
}

inline ComplexPlane kernel_spectrum(std::span<const double> kernel, std::size_t K) {
  ComplexPlane plane(K, K);
  std::copy(kernel.begin(), kernel.end(), plane.re().begin());
  return fft2d(std::move(plane), false);
}

}  // namespace detail

/// Scales each filter's 2D spectrum by `coeff_map` (K*K, row-major) and returns the real part.
inline Tensor4 fourier_reweight(const Tensor4& filters, const std::vector<double>& coeff_map) {
  const std::size_t K = filters.kernel_h();
  if (filters.kernel_w() != K || !is_power_of_two(K)) {
    throw InvalidArgument("fourier_reweight: kernels must be KxK with K a power of two, got " +
                          filters.shape_string());
  }
  detail::check_coefficient_map(coeff_map, K);
  Tensor4 out(filters.out_channels(), filters.in_channels(), K, K);
  for (std::size_t o = 0; o < filters.out_channels(); ++o) {
    for (std::size_t i = 0; i < filters.in_channels(); ++i) {
      auto spec = detail::kernel_spectrum(filters.kernel(o, i), K);
      for (std::size_t t = 0; t < K * K; ++t) {
        spec.re()[t] *= coeff_map[t];
        spec.im()[t] *= coeff_map[t];
      }
      const auto back = fft2d(std::move(spec), true);
      auto dst = out.kernel(o, i);
      double scale = 1.0;
      for (double v : back.re()) scale = std::max(scale, std::abs(v));
      for (std::size_t t = 0; t < K * K; ++t) {
        if (std::abs(back.im()[t]) >= 1e-6 * scale) {
          throw InvariantViolation("fourier_reweight: imaginary residual " + std::to_string(back.im()[t]));
        }
        dst[t] = back.re()[t];
      }
    }
  }
  return out;
}

inline Tensor4 fourier_reweight(const Tensor4& filters, const FourierCoefficients& coeffs) {
  if (coeffs.patch_size() != filters.kernel_h()) {
    throw InvalidArgument("fourier_reweight: coefficient size does not match kernel size");
  }
  return fourier_reweight(filters, coeffs.materialize());
}

/// Gradient of sum(grad_out * fourier_reweight(filters, map)) with respect to the full K*K map.
inline std::vector<double> fourier_reweight_map_grad(const Tensor4& filters, const Tensor4& grad_out) {
  const std::size_t K = filters.kernel_h();
  std::vector<double> g(K * K, 0.0);
  const double norm = 1.0 / static_cast<double>(K * K);
  for (std::size_t o = 0; o < filters.out_channels(); ++o) {
    for (std::size_t i = 0; i < filters.in_channels(); ++i) {
      const auto P = detail::kernel_spectrum(filters.kernel(o, i), K);
      const auto G = detail::kernel_spectrum(grad_out.kernel(o, i), K);
      // d/dw Re(IFFT(w .* P)) paired with G reduces to Re(P * conj(G)) / K^2.
      for (std::size_t t = 0; t < K * K; ++t) g[t] += norm * (P.re()[t] * G.re()[t] + P.im()[t] * G.im()[t]);
    }
  }
  return g;
}

/// Crops the template at `box`, splits and reweights it, and applies the correlation normalization.
inline TemplateFilterBank build_filter_bank(const Image& frame, const BBox& box, const FourierCoefficients& coeffs,
                                            const CorrelationConfig& config) {
  const auto templ = crop_and_warp(frame, box, static_cast<int>(config.template_size), config.template_context,
                                   config.channels);
  auto filters = fourier_reweight(split_patches(templ, config), coeffs);
  for (auto& v : filters.data()) v *= config.filter_norm();
  return {std::move(filters), box};
}

/// Multi-channel patch correlation map: one output channel per patch.
inline Tensor3 correlate(const Tensor3& search, const TemplateFilterBank& bank, const CorrelationConfig& config) {
  if (search.channels() != config.channels || search.height() != config.search_size ||
      search.width() != config.search_size) {
    throw InvalidArgument("correlate: search crop is " + search.shape_string() + ", expected " +
                          std::to_string(config.channels) + "x" + std::to_string(config.search_size) + "x" +
                          std::to_string(config.search_size));
  }
  return conv2d_valid(search, bank.filters, config.corr_stride);
}

struct CorrelationFlops {
  std::uint64_t conv = 0;
  std::uint64_t fft = 0;
  std::uint64_t total() const { return conv + fft; }
};

/// Multiply and add are counted separately; the FFT term uses the usual 5 n log2 n per transform.
inline CorrelationFlops corr_flops(const CorrelationConfig& config) {
  const std::uint64_t out = (config.search_size - config.patch_size) / config.corr_stride + 1;
  const std::uint64_t nn = config.patch_count();
  const std::uint64_t kk = config.patch_size * config.patch_size;
  std::uint64_t log_kk = 0;
  for (std::uint64_t v = kk; v > 1; v >>= 1) ++log_kk;
  return {2 * out * out * nn * kk * config.channels, 5 * nn * config.channels * kk * log_kk};
}

}  // namespace patchnet
