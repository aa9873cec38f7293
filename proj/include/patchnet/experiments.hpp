#pragma once

// Experiment drivers behind the CLI verbs and the acceptance runner.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "patchnet/aggregation.hpp"
#include "patchnet/correlation.hpp"
#include "patchnet/parallel.hpp"
#include "patchnet/synth.hpp"
#include "patchnet/tracking.hpp"
#include "patchnet/training.hpp"

namespace patchnet {

// ---------------------------------------------------------------------------
// Scale sweep

struct ScaleSweepRow {
  std::size_t object = 0;
  double scale = 1.0;
  double full_template_error = 0.0;  // frame pixels
  double patchnet_error = 0.0;       // frame pixels
  double cell = 0.0;                 // one response cell, frame pixels
};

/// Center of the best match of the whole (zero-mean) template, searched at every crop pixel.
inline std::array<double, 2> full_template_locate(const Image& first, const BBox& box, const Image& second,
                                                  const CorrelationConfig& c) {
  auto templ = crop_and_warp(first, box, static_cast<int>(c.template_size), c.template_context, c.channels);
  for (std::size_t ch = 0; ch < templ.channels(); ++ch) {
    auto plane = templ.plane(ch);
    const double mean = std::accumulate(plane.begin(), plane.end(), 0.0) / static_cast<double>(plane.size());
    for (double& v : plane) v -= mean;
  }
  const auto search =
      crop_and_warp(second, box, static_cast<int>(c.search_size), c.search_context(), c.channels);
  const auto geo = search_geometry(box, box.center_x(), box.center_y(), c);
  const auto resp = conv2d_valid(search, Tensor4(1, templ.channels(), c.template_size, c.template_size, templ.data()), 1);
  const auto peak = argmax_spatial(resp);
  const double half = 0.5 * static_cast<double>(c.template_size);
  return {geo.to_frame_x(static_cast<double>(peak.x) + half), geo.to_frame_y(static_cast<double>(peak.y) + half)};
}

/// Center error of both matchers for `objects` synthetic objects at each scale factor.
/// An object keeps its scene and translation across scales; only the scale changes.
inline std::vector<ScaleSweepRow> scale_sweep(const ModelParams& params, std::size_t objects,
                                              const std::vector<double>& scales, std::uint64_t seed,
                                              const SceneSpec& scene = {}) {
  const auto& c = params.config;
  std::vector<ScaleSweepRow> rows(objects * scales.size());
  parallel_for(rows.size(), [&](std::size_t idx) {
    const std::size_t obj = idx / scales.size();
    MotionSpec motion;
    motion.brightness_jitter = 0.0;
    motion.scale = scales[idx % scales.size()];
    const auto f = synth_frames(pair_seed(seed, 0x5CA1E, obj), motion, scene);
    const double gx = f.second_box.center_x(), gy = f.second_box.center_y();

    const auto [fx, fy] = full_template_locate(f.first, f.first_box, f.second, c);
    const auto bank = build_filter_bank(f.first, f.first_box, params.coeffs, c);
    const auto r = match(f.second, bank, f.first_box.center_x(), f.first_box.center_y(), params);
    const auto geo = search_geometry(f.first_box, f.first_box.center_x(), f.first_box.center_y(), c);
    rows[idx] = {obj, *motion.scale, std::hypot(fx - gx, fy - gy),
                 std::hypot(r.box.center_x() - gx, r.box.center_y() - gy),
                 static_cast<double>(c.effective_stride()) / geo.scale};
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Short-range benchmark

struct BenchmarkResult {
  std::size_t pairs = 0;
  double miss_rate = 0.0;
  double mean_iou = 0.0;
  double mean_center_error = 0.0;
};

/// Template at one frame, target after the benchmark's motion; a pair is missed when the
/// predicted box overlaps the target below `iou_threshold` (or no box is produced).
inline BenchmarkResult short_range_benchmark(const ModelParams& params, std::size_t pairs, std::uint64_t seed,
                                             const MotionSpec& motion = {}, const SceneSpec& scene = {},
                                             double iou_threshold = 0.7) {
  std::vector<std::optional<BBox>> pred(pairs);
  std::vector<BBox> gt(pairs);
  parallel_for(pairs, [&](std::size_t i) {
    const auto f = synth_frames(pair_seed(seed, 0xBE7C, i), motion, scene);
    gt[i] = f.second_box;
    try {
      const auto bank = build_filter_bank(f.first, f.first_box, params.coeffs, params.config);
      pred[i] = match(f.second, bank, f.first_box.center_x(), f.first_box.center_y(), params).box;
    } catch (const DegenerateOutput&) {
    }
  });
  BenchmarkResult r;
  r.pairs = pairs;
  if (pairs == 0) return r;
  r.miss_rate = miss_rate(pred, gt, iou_threshold);
  for (std::size_t i = 0; i < pairs; ++i) {
    if (!pred[i]) continue;
    r.mean_iou += iou(*pred[i], gt[i]);
    r.mean_center_error += center_distance(*pred[i], gt[i]);
  }
  r.mean_iou /= static_cast<double>(pairs);
  r.mean_center_error /= static_cast<double>(pairs);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

struct SequenceSpec {
  std::size_t frames = 30;
  std::size_t objects = 1;
  double max_speed = 1.5;     // frame pixels per frame, per axis
  double max_growth = 0.005;  // relative size change per frame
  int frame_size = 256;
  double min_object = 36.0;
  double max_object = 60.0;
};

struct SyntheticSequence {
  std::vector<Image> frames;
  std::vector<std::vector<Detection>> groundtruth;
};

/// Objects drifting at constant velocity and growth rate, bouncing off the frame border.
inline SyntheticSequence synth_sequence(std::uint64_t seed, const SequenceSpec& spec = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const auto sym = [&] { return 2.0 * U(rng) - 1.0; };
  const auto background = random_background(rng);
  struct Track {
    ObjectLook look;
    double cx, cy, w, h, vx, vy, growth;
  };
  std::vector<Track> tracks;
  const double fs = spec.frame_size;
  for (std::size_t i = 0; i < spec.objects; ++i) {
    Track t{random_look(rng), 0, 0, 0, 0, 0, 0, 0};
    t.w = spec.min_object + (spec.max_object - spec.min_object) * U(rng);
    t.h = spec.min_object + (spec.max_object - spec.min_object) * U(rng);
    t.cx = t.w + (fs - 2.0 * t.w) * U(rng);
    t.cy = t.h + (fs - 2.0 * t.h) * U(rng);
    t.vx = spec.max_speed * sym();
    t.vy = spec.max_speed * sym();
    t.growth = spec.max_growth * sym();
    tracks.push_back(std::move(t));
  }
  SyntheticSequence seq;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::vector<PlacedObject> placed;
    std::vector<Detection> gt;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      auto& t = tracks[i];
      const auto box = BBox::from_center(t.cx, t.cy, t.w, t.h, 1.0);
      placed.push_back({&t.look, box});
      gt.push_back({static_cast<int>(i), box});
      t.w *= 1.0 + t.growth;
      t.h *= 1.0 + t.growth;
      t.cx += t.vx;
      t.cy += t.vy;
      const auto bounce = [fs](double& c, double& v, double size) {
        if (c - 0.5 * size < 0.0) {
          c = 0.5 * size;
          v = std::abs(v);
        } else if (c + 0.5 * size > fs) {
          c = fs - 0.5 * size;
          v = -std::abs(v);
        }
      };
      bounce(t.cx, t.vx, t.w);
      bounce(t.cy, t.vy, t.h);
    }
    seq.frames.push_back(render_objects(background, placed, spec.frame_size));
    seq.groundtruth.push_back(std::move(gt));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// FLOP tables

struct FlopRow {
  std::string section;
  std::string name;
  std::size_t patch_size = 0;
  FlopReport flops;
};

inline const std::vector<std::pair<std::string, ModelVariant>>& ablation_variants() {
  static const std::vector<std::pair<std::string, ModelVariant>> v{{"patch-aggregation", {false, false}},
                                                                   {"+fourier", {true, false}},
                                                                   {"+bbox-regression", {false, true}},
                                                                   {"full", {true, true}}};
  return v;
}

/// Ablation rows for `config`, then the patch-size sweep at fixed N and correlation-map size.
inline std::vector<FlopRow> flop_table(const CorrelationConfig& config) {
  std::vector<FlopRow> rows;
  for (const auto& [name, variant] : ablation_variants()) {
    rows.push_back({"ablation", name, config.patch_size, net_flops(config, variant)});
  }
  const std::size_t corr = config.corr_size();
  for (std::size_t k : {2, 4, 8, 16}) {
    auto c = config;
    c.patch_size = k;
    c.template_size = c.patches_per_side * k;
    c.search_size = (corr - 1) * c.corr_stride + k;
    rows.push_back({"patch-size-sweep", "K=" + std::to_string(k), k, net_flops(c)});
  }
  return rows;
}

}  // namespace patchnet
