#pragma once

// Skip-frame tracking: an expensive keyframe oracle supplies boxes on keyframes,
// the matcher follows each object on the frames in between.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchnet/aggregation.hpp"
#include "patchnet/correlation.hpp"
#include "patchnet/error.hpp"
#include "patchnet/geometry.hpp"
#include "patchnet/image.hpp"
#include "patchnet/parallel.hpp"

namespace patchnet {

enum class PolicyMode { fixed, online };

struct KeyframePolicy {
  PolicyMode mode = PolicyMode::fixed;
  std::size_t interval = 5;
  // Unset: half the running mean of keyframe self-match confidences.
  std::optional<double> conf_threshold;
  std::size_t max_inter = 10;

  void validate() const {
    if (interval < 1) throw InvalidArgument("KeyframePolicy: interval must be >= 1");
    if (max_inter < 1) throw InvalidArgument("KeyframePolicy: max_inter must be >= 1");
  }
};

struct Detection {
  int object_id = 0;
  BBox box;
};

/// Raised when the keyframe oracle fails; the caller decides whether to retry.
class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Supplies the boxes of every object on a keyframe.
using KeyframeOracle = std::function<std::vector<Detection>(std::size_t frame_index, const Image& frame)>;

struct StepResult {
  std::vector<Detection> boxes;
  bool was_keyframe = false;
};

struct SessionHistory {
  std::size_t frames = 0;
  std::size_t keyframes = 0;
  std::size_t matches = 0;  // matcher invocations, one per object per frame
};

class TrackSession {
 public:
  TrackSession(ModelParams params, KeyframePolicy policy, KeyframeOracle oracle)
      : params_(std::move(params)), policy_(policy), oracle_(std::move(oracle)) {
    policy_.validate();
    params_.config.validate();
    if (!oracle_) throw InvalidArgument("TrackSession: keyframe oracle is empty");
  }

  StepResult step(const Image& frame) {
    if (history_.frames == 0) {
      width_ = frame.width;
      height_ = frame.height;
    } else if (frame.width != width_ || frame.height != height_) {
      throw InvalidArgument("TrackSession: frame is " + std::to_string(frame.width) + "x" +
                            std::to_string(frame.height) + ", session started with " + std::to_string(width_) + "x" +
                            std::to_string(height_));
    }
    const std::size_t index = history_.frames++;

    bool key = index == 0;
    if (!key && policy_.mode == PolicyMode::fixed) key = frames_since_key_ + 1 == policy_.interval;
    if (!key && policy_.mode == PolicyMode::online) key = frames_since_key_ == policy_.max_inter;

    if (!key) {
      auto matched = match_all(frame);
      if (policy_.mode == PolicyMode::online) {
        const double thr = threshold();
        for (const auto& m : matched) {
          if (m.has_value() && m->box.score < thr) key = true;
        }
      }
      if (!key) {
        ++frames_since_key_;
        std::vector<Detection> kept_boxes;
        std::vector<TemplateFilterBank> kept_banks;
        for (std::size_t i = 0; i < matched.size(); ++i) {
          if (!matched[i]) continue;
          kept_boxes.push_back(*matched[i]);
          kept_banks.push_back(std::move(banks_[i]));
        }
        boxes_ = std::move(kept_boxes);
        banks_ = std::move(kept_banks);
        return {boxes_, false};
      }
    }
    refresh(index, frame);
    return {boxes_, true};
  }

  const SessionHistory& history() const { return history_; }
  const std::vector<Detection>& boxes() const { return boxes_; }
  std::size_t frames_since_key() const { return frames_since_key_; }

  /// Confidence below which an online session requests a keyframe.
  double threshold() const {
    if (policy_.conf_threshold) return *policy_.conf_threshold;
    return self_conf_count_ == 0 ? 0.0 : 0.5 * self_conf_sum_ / static_cast<double>(self_conf_count_);
  }

 private:
  bool inside(const BBox& b) const {
    const double cx = b.center_x(), cy = b.center_y();
    return cx >= 0.0 && cy >= 0.0 && cx < static_cast<double>(width_) && cy < static_cast<double>(height_);
  }

  // One result per tracked object; empty when the object left the frame or degenerated.
  std::vector<std::optional<Detection>> match_all(const Image& frame) {
    std::vector<std::optional<Detection>> out(boxes_.size());
    parallel_for(boxes_.size(), [&](std::size_t i) {
      const auto& cur = boxes_[i].box;
      try {
        const auto r = match(frame, banks_[i], cur.center_x(), cur.center_y(), params_);
        if (inside(r.box)) out[i] = Detection{boxes_[i].object_id, r.box};
      } catch (const DegenerateOutput&) {
      } catch (const DegenerateInput&) {
      }
    });
    history_.matches += boxes_.size();
    return out;
  }

  void refresh(std::size_t index, const Image& frame) {
    std::vector<Detection> dets;
    try {
      dets = oracle_(index, frame);
    } catch (const std::exception& e) {
      throw SessionError("keyframe oracle failed on frame " + std::to_string(index) + ": " + e.what());
    }
    std::vector<TemplateFilterBank> banks;
    std::vector<Detection> kept;
    for (const auto& d : dets) {
      try {
        banks.push_back(build_filter_bank(frame, d.box, params_.coeffs, params_.config));
        kept.push_back(d);
      } catch (const DegenerateInput&) {
      }
    }
    banks_ = std::move(banks);
    boxes_ = std::move(kept);
    frames_since_key_ = 0;
    ++history_.keyframes;

    if (policy_.mode == PolicyMode::online && !policy_.conf_threshold) {
      for (std::size_t i = 0; i < boxes_.size(); ++i) {
        const auto& b = boxes_[i].box;
        try {
          self_conf_sum_ += match(frame, banks_[i], b.center_x(), b.center_y(), params_).confidence;
          ++self_conf_count_;
        } catch (const DegenerateOutput&) {
        }
      }
      history_.matches += boxes_.size();
    }
  }

  ModelParams params_;
  KeyframePolicy policy_;
  KeyframeOracle oracle_;
  std::vector<TemplateFilterBank> banks_;
  std::vector<Detection> boxes_;
  std::size_t frames_since_key_ = 0;
  SessionHistory history_;
  int width_ = 0;
  int height_ = 0;
  double self_conf_sum_ = 0.0;
  std::size_t self_conf_count_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics

/// Fraction of evaluation pairs whose prediction is missing or overlaps the groundtruth below `threshold`.
inline double miss_rate(const std::vector<std::optional<BBox>>& pred, const std::vector<BBox>& gt,
                        double threshold = 0.7) {
  if (pred.size() != gt.size()) {
    throw InvalidArgument("miss_rate: " + std::to_string(pred.size()) + " predictions for " +
                          std::to_string(gt.size()) + " groundtruth boxes");
  }
  if (gt.empty()) return 0.0;
  std::size_t misses = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred[i] || iou(*pred[i], gt[i]) < threshold) ++misses;
  }
  return static_cast<double>(misses) / static_cast<double>(gt.size());
}

/// Sequence form: frame t + gap is predicted from a template at frame t, for every t.
inline double miss_rate(const std::vector<std::optional<BBox>>& pred, const std::vector<BBox>& gt, std::size_t gap,
                        double threshold = 0.7) {
  if (gap < 1) throw InvalidArgument("miss_rate: gap must be >= 1");
  if (pred.size() != gt.size()) {
    throw InvalidArgument("miss_rate: " + std::to_string(pred.size()) + " predictions for " +
                          std::to_string(gt.size()) + " groundtruth boxes");
  }
  if (gt.size() <= gap) return 0.0;
  return miss_rate(std::vector<std::optional<BBox>>(pred.begin() + static_cast<std::ptrdiff_t>(gap), pred.end()),
                   std::vector<BBox>(gt.begin() + static_cast<std::ptrdiff_t>(gap), gt.end()), threshold);
}

/// Mean per-frame cost: oracle runs on keyframes, one matcher run per object otherwise.
inline double avg_flops(const SessionHistory& h, double oracle_flops, double matcher_flops) {
  if (h.frames == 0) throw InvalidArgument("avg_flops: no frames processed");
  return (static_cast<double>(h.keyframes) * oracle_flops + static_cast<double>(h.matches) * matcher_flops) /
         static_cast<double>(h.frames);
}

/// Closed form for a fixed keyframe interval.
inline double avg_flops(std::size_t interval, std::size_t objects, double oracle_flops, double matcher_flops) {
  if (interval < 1) throw InvalidArgument("avg_flops: interval must be >= 1");
  const double k = static_cast<double>(interval);
  return (oracle_flops + (k - 1.0) * static_cast<double>(objects) * matcher_flops) / k;
}

}  // namespace patchnet
