#pragma once

// Aggregation subnet. Each stage runs two masked 3x3 convolutions in
// parallel (scores: 4 child patches -> 1 parent; offsets: same adjacency,
// per boundary component) and then soft-selection pooling. After the last
// stage a single response channel and four boundary-offset channels remain.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "patchnet/correlation.hpp"
#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/kernels.hpp"
#include "patchnet/tensor.hpp"

namespace patchnet {

/// Boundary-offset component order within each group of four channels.
enum OffsetComponent : std::size_t { kDxMin = 0, kDyMin = 1, kDxMax = 2, kDyMax = 3 };

struct AggregationStage {
  Tensor4 score_conv;   // (C/4, C, 3, 3)
  Tensor4 offset_conv;  // (C, 4C, 3, 3)
  PoolBias pool_bias{};
  Tensor4 score_mask;
  Tensor4 offset_mask;

  friend bool operator==(const AggregationStage&, const AggregationStage&) = default;
};

struct ModelParams {
  CorrelationConfig config;
  FourierCoefficients coeffs;
  std::vector<AggregationStage> stages;
  double loss_alpha = 0.05;
  bool relu = false;  // ReLU on pooled scores between stages

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct CellIndex {
  std::size_t y = 0;
  std::size_t x = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct MatchResult {
  Tensor3 response;  // 1 channel
  Tensor3 offsets;   // 4 channels
  CellIndex peak;
  double confidence = 0.0;
  BBox box;
};

/// Intermediate tensors kept by forward() for the reverse pass.
struct StageTrace {
  Tensor3 score_in;
  Tensor3 offset_in;
  Tensor3 score_conv_out;
  Tensor3 offset_conv_out;
};

struct ForwardTrace {
  std::vector<StageTrace> stages;
};

namespace detail {

// Kernel tap at which child i (0 or 1 along an axis) of a parent patch is read.
// Sibling patches sit K/stride cells apart at every stage; when that displacement
// fits the 3x3 kernel the taps realign the children onto the parent's first child.
inline std::size_t child_tap(std::size_t i, const CorrelationConfig& c) {
  if (c.patch_size % c.corr_stride == 0) {
    const std::size_t d = c.patch_size / c.corr_stride;
    if (d >= 1 && d <= 2) return i * d;
  }
  return 1;
}

inline std::size_t child_channel(std::size_t parent, std::size_t parent_side, std::size_t i, std::size_t j) {
  const std::size_t R = parent / parent_side, C = parent % parent_side;
  return (2 * R + i) * (2 * parent_side) + 2 * C + j;
}

}  // namespace detail

/// Builds parameters realizing plain patch aggregation: each parent averages its four
/// children, offsets average per component, pool biases hold the window displacement.
inline ModelParams init_params(const CorrelationConfig& config, std::uint64_t seed, double noise_sigma = 0.01) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.coeffs = FourierCoefficients(config.patch_size, 1.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma);

  std::size_t side = config.patches_per_side;
  for (std::size_t s = 0; s < config.stages(); ++s, side /= 2) {
    const std::size_t parent_side = side / 2;
    const std::size_t cin = side * side, cout = parent_side * parent_side;
    AggregationStage st{Tensor4(cout, cin, 3, 3), Tensor4(4 * cout, 4 * cin, 3, 3), {}, Tensor4(cout, cin, 3, 3),
                        Tensor4(4 * cout, 4 * cin, 3, 3)};
    for (std::size_t P = 0; P < cout; ++P) {
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
          const std::size_t ch = detail::child_channel(P, parent_side, i, j);
          const std::size_t ty = detail::child_tap(i, config), tx = detail::child_tap(j, config);
          for (auto& m : st.score_mask.kernel(P, ch)) m = 1.0;
          st.score_conv(P, ch, ty, tx) = 0.25;
          for (std::size_t k = 0; k < 4; ++k) {
            for (auto& m : st.offset_mask.kernel(4 * P + k, 4 * ch + k)) m = 1.0;
            st.offset_conv(4 * P + k, 4 * ch + k, ty, tx) = 0.25;
          }
        }
      }
    }
    if (noise_sigma > 0.0) {
      for (std::size_t i = 0; i < st.score_conv.size(); ++i) {
        if (st.score_mask.data()[i] != 0.0) st.score_conv.data()[i] += noise(rng);
      }
    }
    // Window position (i, j) displaces the matched region by (j - 1/2, i - 1/2) cells of this stage.
    const double cell = static_cast<double>(config.corr_stride << s);
    for (std::size_t q = 0; q < 4; ++q) {
      const double dy = (static_cast<double>(q / 2) - 0.5) * cell;
      const double dx = (static_cast<double>(q % 2) - 0.5) * cell;
      st.pool_bias[q * 4 + kDxMin] = dx;
      st.pool_bias[q * 4 + kDyMin] = dy;
      st.pool_bias[q * 4 + kDxMax] = dx;
      st.pool_bias[q * 4 + kDyMax] = dy;
    }
    p.stages.push_back(std::move(st));
  }
  return p;
}

/// Re-applies every sparsity mask in place.
inline void enforce_masks(ModelParams& p) {
  for (auto& st : p.stages) {
    st.score_conv = apply_mask(std::move(st.score_conv), st.score_mask);
    st.offset_conv = apply_mask(std::move(st.offset_conv), st.offset_mask);
  }
}

/// Runs the aggregation stages on an N*N-channel correlation map. `box` is left empty;
/// see compose_box.
inline MatchResult forward(const Tensor3& corr_map, const ModelParams& params, ForwardTrace* trace = nullptr) {
  const auto& cfg = params.config;
  if (corr_map.channels() != cfg.patch_count()) {
    throw InvalidArgument("forward: correlation map has " + std::to_string(corr_map.channels()) +
                          " channels, expected N^2 = " + std::to_string(cfg.patch_count()));
  }
  if (params.stages.size() != cfg.stages()) {
    throw InvalidArgument("forward: params hold " + std::to_string(params.stages.size()) + " stages, config needs " +
                          std::to_string(cfg.stages()));
  }
  Tensor3 scores = corr_map;
  Tensor3 offsets(4 * corr_map.channels(), corr_map.height(), corr_map.width());
  if (trace) trace->stages.clear();
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    const auto& st = params.stages[s];
    if (scores.height() < 4 || (scores.height() - 2) % 2 != 0 || (scores.width() - 2) % 2 != 0) {
      throw InvalidArgument("forward: stage " + std::to_string(s + 1) + " input " + scores.shape_string() +
                            " cannot be convolved (3x3 valid) and pooled (2x2)");
    }
    if (st.score_conv.in_channels() != scores.channels()) {
      throw InvalidArgument("forward: stage " + std::to_string(s + 1) + " expects " +
                            std::to_string(st.score_conv.in_channels()) + " score channels, got " +
                            std::to_string(scores.channels()));
    }
    auto sc = conv2d_valid(scores, apply_mask(st.score_conv, st.score_mask), 1, connectivity_from_mask(st.score_mask));
    auto oc =
        conv2d_valid(offsets, apply_mask(st.offset_conv, st.offset_mask), 1, connectivity_from_mask(st.offset_mask));
    auto pooled = soft_select_pool(sc, oc, st.pool_bias);
    if (trace) trace->stages.push_back({std::move(scores), std::move(offsets), std::move(sc), std::move(oc)});
    scores = std::move(pooled.scores);
    offsets = std::move(pooled.offsets);
    if (params.relu && s + 1 < params.stages.size()) {
      for (auto& v : scores.data()) v = std::max(v, 0.0);
    }
  }
  const auto peak = argmax_spatial(scores);
  MatchResult r{std::move(scores), std::move(offsets), {peak.y, peak.x}, peak.value, {}};
  return r;
}

/// Crop-pixel position of the template's top-left corner when anchored at response cell `cell`.
inline double cell_anchor(std::size_t cell, const CorrelationConfig& c) {
  const double span = static_cast<double>(std::size_t{1} << c.stages());
  return static_cast<double>(c.corr_stride) * (span * static_cast<double>(cell) + 0.5 * (span - 1.0));
}

/// Search-crop window centered at (cx, cy) whose pixel scale equals the template crop of `template_box`.
inline CropGeometry search_geometry(const BBox& template_box, double cx, double cy, const CorrelationConfig& c) {
  const auto b = BBox::from_center(cx, cy, template_box.width(), template_box.height());
  return crop_geometry(b, static_cast<int>(c.search_size), c.search_context());
}

/// Maps a response-map peak and its boundary offsets back to a frame box.
/// `prior` is the box the template was cropped from; `search` must share its crop scale.
inline BBox compose_box(const BBox& prior, CellIndex peak, const std::array<double, 4>& offsets,
                        const CorrelationConfig& config, const CropGeometry& search) {
  const auto tgeo = crop_geometry(prior, static_cast<int>(config.template_size), config.template_context);
  if (std::abs(tgeo.scale - search.scale) > 1e-9 * tgeo.scale) {
    throw InvalidArgument("compose_box: search crop scale differs from template crop scale");
  }
  const auto in_template = tgeo.to_crop(prior);
  const double ax = cell_anchor(peak.x, config), ay = cell_anchor(peak.y, config);
  const BBox crop_box{ax + in_template.x_min + offsets[kDxMin], ay + in_template.y_min + offsets[kDyMin],
                      ax + in_template.x_max + offsets[kDxMax], ay + in_template.y_max + offsets[kDyMax], 0.0};
  auto box = search.to_frame(crop_box);
  if (!box.valid()) throw DegenerateOutput("compose_box: composed box has non-positive area");
  return box;
}

inline std::array<double, 4> offsets_at(const Tensor3& offsets, CellIndex cell) {
  return {offsets(kDxMin, cell.y, cell.x), offsets(kDyMin, cell.y, cell.x), offsets(kDxMax, cell.y, cell.x),
          offsets(kDyMax, cell.y, cell.x)};
}

/// Full matcher pass: crop the search window around (cx, cy), correlate, aggregate, compose.
inline MatchResult match(const Image& frame, const TemplateFilterBank& bank, double cx, double cy,
                         const ModelParams& params) {
  const auto& cfg = params.config;
  const auto geo = search_geometry(bank.source_box, cx, cy, cfg);
  const auto search = crop_and_warp(frame, BBox::from_center(cx, cy, bank.source_box.width(), bank.source_box.height()),
                                    static_cast<int>(cfg.search_size), cfg.search_context(), cfg.channels);
  auto r = forward(correlate(search, bank, cfg), params);
  r.box = compose_box(bank.source_box, r.peak, offsets_at(r.offsets, r.peak), cfg, geo);
  r.box.score = r.confidence;
  return r;
}

// ---------------------------------------------------------------------------
// FLOP accounting

/// Which optional components a model variant carries.
struct ModelVariant {
  bool fourier = true;
  bool bbox = true;
  friend bool operator==(const ModelVariant&, const ModelVariant&) = default;
};

struct FlopReport {
  std::uint64_t correlation = 0;
  std::uint64_t fft = 0;
  std::uint64_t score_path = 0;
  std::uint64_t offset_path = 0;
  std::uint64_t aggregation() const { return score_path + offset_path; }
  std::uint64_t total() const { return correlation + fft + score_path + offset_path; }
};

/// Analytic FLOPs. Convolutions count 2 per connected weight per output position
/// (dense = every channel pair); max pooling 3 compares per window; the offset path
/// adds 8 per window for the softmax and 11 per window and offset channel for the
/// weighted combination (4 bias adds, 4 multiplies, 3 accumulates).
inline FlopReport net_flops(const CorrelationConfig& config, ModelVariant variant = {}, bool dense = false) {
  config.validate();
  const auto corr = corr_flops(config);
  FlopReport r;
  r.correlation = corr.conv;
  r.fft = variant.fourier ? corr.fft : 0;
  const auto sizes = config.stage_input_sizes();
  std::size_t side = config.patches_per_side;
  for (std::size_t s = 0; s < config.stages(); ++s, side /= 2) {
    const std::uint64_t cin = side * side, cout = cin / 4;
    const std::uint64_t conv_px = (sizes[s] - 2) * (sizes[s] - 2);
    const std::uint64_t pooled_px = sizes[s + 1] * sizes[s + 1];
    const std::uint64_t score_links = dense ? cout * cin : cout * 4;
    const std::uint64_t offset_links = dense ? 16 * cout * cin : 4 * cout * 4;
    r.score_path += 2 * score_links * 9 * conv_px + 3 * cout * pooled_px;
    if (variant.bbox) r.offset_path += 2 * offset_links * 9 * conv_px + 8 * cout * pooled_px + 11 * 4 * cout * pooled_px;
  }
  return r;
}

}  // namespace patchnet
