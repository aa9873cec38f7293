#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "patchnet/aggregation.hpp"
#include "patchnet/correlation.hpp"
#include "patchnet/error.hpp"
#include "patchnet/kernels.hpp"
#include "patchnet/parallel.hpp"
#include "patchnet/synth.hpp"

namespace patchnet {

struct TrainConfig {
  double alpha = 0.05;
  double lr = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  double smooth_l1_beta = 1.0;
  double loss_balance = 1.0;
  std::uint64_t seed = 1;
  ModelVariant variant;
  MotionSpec motion;
  SceneSpec scene;

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidArgument("TrainConfig: alpha must be > 0");
    if (!(lr > 0.0)) throw InvalidArgument("TrainConfig: lr must be > 0");
    if (!(smooth_l1_beta > 0.0)) throw InvalidArgument("TrainConfig: smooth_l1_beta must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("TrainConfig: momentum must be in [0, 1)");
    if (batch_size == 0) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  }
};

struct TrainingPair {
  Image template_frame;
  Image search_frame;
  BBox template_box;
  BBox target_box;
  CellIndex gt_center;
  std::array<double, 4> gt_offsets{};
};

struct RegressionTarget {
  CellIndex cell;
  std::array<double, 4> offsets{};
};

/// Groundtruth response cell and boundary offsets for a search window centered on the
/// template box. compose_box(template_box, cell, offsets, ...) reproduces `target`.
inline RegressionTarget regression_target(const BBox& template_box, const BBox& target, const CorrelationConfig& c) {
  const auto tgeo = crop_geometry(template_box, static_cast<int>(c.template_size), c.template_context);
  const auto sgeo = search_geometry(template_box, template_box.center_x(), template_box.center_y(), c);
  const auto in_t = tgeo.to_crop(template_box);
  const auto in_s = sgeo.to_crop(target);
  const auto R = static_cast<double>(c.response_size());
  const double span = static_cast<double>(std::size_t{1} << c.stages());
  const auto pick = [&](double want_anchor) {
    const double cell = std::round((want_anchor / static_cast<double>(c.corr_stride) - 0.5 * (span - 1.0)) / span);
    return static_cast<std::size_t>(std::clamp(cell, 0.0, R - 1.0));
  };
  RegressionTarget t;
  t.cell.x = pick(in_s.center_x() - in_t.center_x());
  t.cell.y = pick(in_s.center_y() - in_t.center_y());
  const double ax = cell_anchor(t.cell.x, c), ay = cell_anchor(t.cell.y, c);
  t.offsets = {in_s.x_min - (ax + in_t.x_min), in_s.y_min - (ay + in_t.y_min), in_s.x_max - (ax + in_t.x_max),
               in_s.y_max - (ay + in_t.y_max)};
  return t;
}

/// Renders a template/search frame pair with exact regression targets.
inline TrainingPair synth_pair(std::uint64_t seed, const MotionSpec& motion, const CorrelationConfig& config,
                               const SceneSpec& scene = {}) {
  auto f = synth_frames(seed, motion, scene);
  const auto t = regression_target(f.first_box, f.second_box, config);
  return {std::move(f.first), std::move(f.second), f.first_box, f.second_box, t.cell, t.offsets};
}

/// The parameter-independent inputs of one training pair: raw template patches and the search crop.
struct PreparedPair {
  Tensor4 patches;
  Tensor3 search;
  CellIndex gt_center;
  std::array<double, 4> gt_offsets{};
};

inline PreparedPair prepare_pair(const TrainingPair& pair, const CorrelationConfig& c) {
  const auto templ = crop_and_warp(pair.template_frame, pair.template_box, static_cast<int>(c.template_size),
                                   c.template_context, c.channels);
  const auto search = crop_and_warp(pair.search_frame, pair.template_box, static_cast<int>(c.search_size),
                                    c.search_context(), c.channels);
  return {split_patches(templ, c), search, pair.gt_center, pair.gt_offsets};
}

// ---------------------------------------------------------------------------
// Losses

struct LocalizationLoss {
  double loss = 0.0;
  Tensor3 grad;
};

/// sum_x max(S[x] - S[gt] + alpha * manhattan(x, gt), 0); the subgradient is 0 at kinks.
inline LocalizationLoss localization_loss(const Tensor3& response, CellIndex gt, double alpha) {
  if (response.channels() != 1) throw InvalidArgument("localization_loss: response must have 1 channel");
  if (gt.y >= response.height() || gt.x >= response.width()) {
    throw InvalidArgument("localization_loss: gt_center (" + std::to_string(gt.y) + "," + std::to_string(gt.x) +
                          ") outside " + std::to_string(response.height()) + "x" + std::to_string(response.width()) +
                          " map");
  }
  LocalizationLoss r{0.0, Tensor3(1, response.height(), response.width())};
  const double s_gt = response(0, gt.y, gt.x);
  for (std::size_t y = 0; y < response.height(); ++y) {
    for (std::size_t x = 0; x < response.width(); ++x) {
      if (y == gt.y && x == gt.x) continue;
      const double d = std::abs(static_cast<double>(y) - static_cast<double>(gt.y)) +
                       std::abs(static_cast<double>(x) - static_cast<double>(gt.x));
      const double m = response(0, y, x) - s_gt + alpha * d;
      if (m > 0.0) {
        r.loss += m;
        r.grad(0, y, x) += 1.0;
        r.grad(0, gt.y, gt.x) -= 1.0;
      }
    }
  }
  return r;
}

struct SmoothL1 {
  double loss = 0.0;
  std::array<double, 4> grad{};
};

inline SmoothL1 smooth_l1_loss(const std::array<double, 4>& pred, const std::array<double, 4>& target, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("smooth_l1_loss: beta must be > 0");
  SmoothL1 r;
  for (std::size_t k = 0; k < 4; ++k) {
    const double d = pred[k] - target[k];
    if (std::abs(d) < beta) {
      r.loss += 0.5 * d * d / beta;
      r.grad[k] = d / beta;
    } else {
      r.loss += std::abs(d) - 0.5 * beta;
      r.grad[k] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Gradients

struct StageGrad {
  Tensor4 score_conv;
  Tensor4 offset_conv;
  PoolBias pool_bias{};
};

struct Gradients {
  std::vector<double> coeffs;
  std::vector<StageGrad> stages;
  double loc_loss = 0.0;
  double bbox_loss = 0.0;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    g.coeffs.assign(p.coeffs.params().size(), 0.0);
    for (const auto& st : p.stages) {
      g.stages.push_back({Tensor4(st.score_conv.out_channels(), st.score_conv.in_channels(), 3, 3),
                          Tensor4(st.offset_conv.out_channels(), st.offset_conv.in_channels(), 3, 3),
                          {}});
    }
    return g;
  }

  Gradients& operator+=(const Gradients& o) {
    for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] += o.coeffs[i];
    for (std::size_t s = 0; s < stages.size(); ++s) {
      auto& a = stages[s];
      const auto& b = o.stages[s];
      for (std::size_t i = 0; i < a.score_conv.size(); ++i) a.score_conv.data()[i] += b.score_conv.data()[i];
      for (std::size_t i = 0; i < a.offset_conv.size(); ++i) a.offset_conv.data()[i] += b.offset_conv.data()[i];
      for (std::size_t i = 0; i < a.pool_bias.size(); ++i) a.pool_bias[i] += b.pool_bias[i];
    }
    loc_loss += o.loc_loss;
    bbox_loss += o.bbox_loss;
    return *this;
  }

  double total_loss(double loss_balance) const { return loc_loss + loss_balance * bbox_loss; }
};

/// Total loss of one prepared pair (forward only).
inline double pair_loss(const PreparedPair& pp, const ModelParams& params, const TrainConfig& tc,
                        double* loc_out = nullptr, double* bbox_out = nullptr) {
  const auto& c = params.config;
  auto filters = fourier_reweight(pp.patches, params.coeffs);
  for (auto& v : filters.data()) v *= c.filter_norm();
  const auto corr = conv2d_valid(pp.search, filters, c.corr_stride);
  const auto r = forward(corr, params);
  const double loc = localization_loss(r.response, pp.gt_center, tc.alpha).loss;
  const double bb = smooth_l1_loss(offsets_at(r.offsets, pp.gt_center), pp.gt_offsets, tc.smooth_l1_beta).loss;
  if (loc_out) *loc_out = loc;
  if (bbox_out) *bbox_out = bb;
  return loc + tc.loss_balance * bb;
}

/// Reverse-mode gradients of L_loc + loss_balance * smoothL1 for one pair.
/// Coefficient gradients are skipped (left zero) when `with_coeffs` is false.
inline Gradients backward(const PreparedPair& pp, const ModelParams& params, const TrainConfig& tc,
                          bool with_coeffs = true) {
  const auto& c = params.config;
  auto filters = fourier_reweight(pp.patches, params.coeffs);
  for (auto& v : filters.data()) v *= c.filter_norm();
  const auto corr = conv2d_valid(pp.search, filters, c.corr_stride);
  ForwardTrace trace;
  const auto r = forward(corr, params, &trace);

  auto g = Gradients::zeros_like(params);
  auto loc = localization_loss(r.response, pp.gt_center, tc.alpha);
  const auto bb = smooth_l1_loss(offsets_at(r.offsets, pp.gt_center), pp.gt_offsets, tc.smooth_l1_beta);
  g.loc_loss = loc.loss;
  g.bbox_loss = bb.loss;

  Tensor3 d_scores = std::move(loc.grad);
  Tensor3 d_offsets(4, r.offsets.height(), r.offsets.width());
  for (std::size_t k = 0; k < 4; ++k) d_offsets(k, pp.gt_center.y, pp.gt_center.x) = tc.loss_balance * bb.grad[k];

  for (std::size_t s = params.stages.size(); s-- > 0;) {
    const auto& st = params.stages[s];
    const auto& tr = trace.stages[s];
    const auto pg = soft_select_pool_backward(tr.score_conv_out, tr.offset_conv_out, st.pool_bias, d_scores, d_offsets);
    const auto conn_s = connectivity_from_mask(st.score_mask);
    const auto conn_o = connectivity_from_mask(st.offset_mask);
    g.stages[s].pool_bias = pg.bias;
    g.stages[s].score_conv =
        apply_mask(conv2d_valid_grad_weights(pg.scores, tr.score_in, 1, 3, 3, conn_s), st.score_mask);
    d_scores = conv2d_valid_grad_input(pg.scores, apply_mask(st.score_conv, st.score_mask), 1, tr.score_in.height(),
                                       tr.score_in.width(), conn_s);
    // Inputs past the first stage went through the ReLU; subgradient 0 at the kink.
    if (params.relu && s > 0) {
      for (std::size_t i = 0; i < d_scores.size(); ++i)
        if (tr.score_in.data()[i] <= 0.0) d_scores.data()[i] = 0.0;
    }
    // Stage 1 consumes the all-zero initial offsets: its weight gradient is exactly zero.
    if (s > 0) {
      g.stages[s].offset_conv =
          apply_mask(conv2d_valid_grad_weights(pg.offsets, tr.offset_in, 1, 3, 3, conn_o), st.offset_mask);
      d_offsets = conv2d_valid_grad_input(pg.offsets, apply_mask(st.offset_conv, st.offset_mask), 1,
                                          tr.offset_in.height(), tr.offset_in.width(), conn_o);
    }
  }

  if (with_coeffs) {
    auto d_filters = conv2d_valid_grad_weights(d_scores, pp.search, c.corr_stride, c.patch_size, c.patch_size,
                                               dense_connectivity(c.patch_count(), c.channels));
    for (auto& v : d_filters.data()) v *= c.filter_norm();
    g.coeffs = params.coeffs.fold_gradient(fourier_reweight_map_grad(pp.patches, d_filters));
  }
  return g;
}

/// Sum of per-pair gradients, reduced in batch order.
inline Gradients batch_backward(const std::vector<PreparedPair>& batch, const ModelParams& params,
                                const TrainConfig& tc, bool with_coeffs = true) {
  std::vector<Gradients> per(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { per[i] = backward(batch[i], params, tc, with_coeffs); });
  auto total = Gradients::zeros_like(params);
  for (const auto& g : per) total += g;
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Momentum buffers, same layout as Gradients.
struct OptimizerState {
  Gradients velocity;
  explicit OptimizerState(const ModelParams& p) : velocity(Gradients::zeros_like(p)) {}
};

/// v = momentum * v + g; p -= lr * v; then masks are re-applied. Components frozen by the
/// variant are left untouched. Coefficient symmetry holds by construction of the storage.
inline void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state, const TrainConfig& tc) {
  auto update = [&](double& p, double& v, double g) {
    v = tc.momentum * v + g;
    p -= tc.lr * v;
  };
  if (tc.variant.fourier) {
    auto& q = params.coeffs.params();
    for (std::size_t i = 0; i < q.size(); ++i) update(q[i], state.velocity.coeffs[i], grads.coeffs[i]);
  }
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    auto& st = params.stages[s];
    auto& vs = state.velocity.stages[s];
    const auto& gs = grads.stages[s];
    for (std::size_t i = 0; i < st.score_conv.size(); ++i) {
      update(st.score_conv.data()[i], vs.score_conv.data()[i], gs.score_conv.data()[i]);
    }
    if (tc.variant.bbox) {
      for (std::size_t i = 0; i < st.offset_conv.size(); ++i) {
        update(st.offset_conv.data()[i], vs.offset_conv.data()[i], gs.offset_conv.data()[i]);
      }
      for (std::size_t i = 0; i < st.pool_bias.size(); ++i) update(st.pool_bias[i], vs.pool_bias[i], gs.pool_bias[i]);
    }
  }
  enforce_masks(params);
}

// ---------------------------------------------------------------------------
// Training loop

struct LogRow {
  std::size_t step = 0;
  double loc_loss = 0.0;
  double bbox_loss = 0.0;
  double total = 0.0;
};

/// Seed of batch element `index` at `step`; distinct streams per (seed, step, index).
inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t step, std::size_t index) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + step * 0xBF58476D1CE4E5B9ull + index * 0x94D049BB133111EBull + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::vector<PreparedPair> synth_batch(std::uint64_t seed, std::size_t step, std::size_t count,
                                             const CorrelationConfig& c, const MotionSpec& motion,
                                             const SceneSpec& scene) {
  std::vector<PreparedPair> batch(count);
  parallel_for(count, [&](std::size_t i) {
    batch[i] = prepare_pair(synth_pair(pair_seed(seed, step, i), motion, c, scene), c);
  });
  return batch;
}

/// Trains on freshly rendered synthetic pairs; one log row per step (batch-summed losses
/// before the update). `fixed_batch`, when non-empty, replaces the synthetic stream.
inline std::vector<LogRow> train(ModelParams& params, const TrainConfig& tc,
                                 const std::vector<PreparedPair>& fixed_batch = {},
                                 const std::function<void(const LogRow&)>& on_step = {}) {
  tc.validate();
  params.config.validate();
  params.loss_alpha = tc.alpha;
  // Without box regression the offset path is fixed and receives no supervision.
  TrainConfig cfg = tc;
  if (!cfg.variant.bbox) cfg.loss_balance = 0.0;
  OptimizerState state(params);
  std::vector<LogRow> log;
  log.reserve(tc.steps);
  for (std::size_t step = 0; step < tc.steps; ++step) {
    const auto batch = fixed_batch.empty()
                           ? synth_batch(cfg.seed, step, cfg.batch_size, params.config, cfg.motion, cfg.scene)
                           : fixed_batch;
    const auto g = batch_backward(batch, params, cfg, cfg.variant.fourier);
    LogRow row{step, g.loc_loss, g.bbox_loss, g.total_loss(cfg.loss_balance)};
    log.push_back(row);
    if (on_step) on_step(row);
    sgd_step(params, g, state, cfg);
  }
  return log;
}

}  // namespace patchnet
