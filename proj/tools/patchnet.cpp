// patchnet command-line driver: train, track, flops, scale-sweep, selftest.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchnet/experiments.hpp"
#include "patchnet/io.hpp"
#include "patchnet/testing/checks.hpp"
#include "patchnet/tracking.hpp"
#include "patchnet/training.hpp"

namespace fs = std::filesystem;
using namespace patchnet;

namespace {

void emit(const CsvWriter& csv, const std::string& out) {
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    csv.save(out);
  }
}

std::string log_path_for(const std::string& weights) { return weights + ".log.csv"; }

int run_train(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  auto job = config_path.empty() ? TrainJob{} : load_config(config_path);
  if (seed) job.train.seed = *seed;
  auto params = init_params(job.model, job.train.seed);
  params.relu = job.relu;
  CsvWriter log({"step", "loc_loss", "bbox_loss", "total_loss"});
  train(params, job.train, {}, [&](const LogRow& r) {
    log.row({std::to_string(r.step), CsvWriter::num(r.loc_loss), CsvWriter::num(r.bbox_loss), CsvWriter::num(r.total)});
  });
  save_weights(out, params);
  log.save(log_path_for(out));
  std::cerr << "wrote " << out << " and " << log_path_for(out) << "\n";
  return 0;
}

struct TrackOptions {
  std::string weights, seq, out, policy = "fixed";
  std::size_t interval = 5, max_inter = 10;
  std::optional<double> conf_threshold;
  double oracle_flops = 2.5e9;
};

int run_track(const TrackOptions& o) {
  const auto params = load_weights(o.weights);
  const auto seq = read_sequence(o.seq);

  KeyframePolicy policy;
  policy.mode = o.policy == "online" ? PolicyMode::online : PolicyMode::fixed;
  policy.interval = o.interval;
  policy.max_inter = o.max_inter;
  policy.conf_threshold = o.conf_threshold;

  std::vector<Image> frames;
  frames.reserve(seq.frames.size());
  for (const auto& p : seq.frames) frames.push_back(read_ppm(p));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (const auto& d : seq.groundtruth[t]) {
      if (d.box.x_min < 0 || d.box.y_min < 0 || d.box.x_max > frames[t].width || d.box.y_max > frames[t].height) {
        throw FormatError("groundtruth box of object " + std::to_string(d.object_id) + " in frame " +
                          std::to_string(t) + " leaves the frame");
      }
    }
  }

  TrackSession session(params, policy, [&](std::size_t t, const Image&) { return seq.groundtruth.at(t); });
  CsvWriter csv({"frame", "object_id", "x_min", "y_min", "x_max", "y_max", "confidence", "was_keyframe", "miss_rate",
                 "mean_iou", "avg_flops"});
  std::size_t evaluated = 0, misses = 0;
  double iou_sum = 0.0;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto res = session.step(frames[t]);
    for (const auto& d : res.boxes) {
      csv.row({std::to_string(t), std::to_string(d.object_id), CsvWriter::num(d.box.x_min), CsvWriter::num(d.box.y_min),
               CsvWriter::num(d.box.x_max), CsvWriter::num(d.box.y_max), CsvWriter::num(d.box.score),
               res.was_keyframe ? "1" : "0", "", "", ""});
    }
    for (const auto& g : seq.groundtruth[t]) {
      ++evaluated;
      double best = 0.0;
      for (const auto& d : res.boxes) {
        if (d.object_id == g.object_id) best = iou(d.box, g.box);
      }
      iou_sum += best;
      if (best < 0.7) ++misses;
    }
  }
  const double matcher = static_cast<double>(net_flops(params.config).total());
  csv.row({"summary", "", "", "", "", "", "", "", CsvWriter::num(double(misses) / double(evaluated)),
           CsvWriter::num(iou_sum / double(evaluated)), CsvWriter::num(avg_flops(session.history(), o.oracle_flops, matcher))});
  emit(csv, o.out);
  return 0;
}

int run_flops(const std::string& config_path, const std::string& out) {
  const auto job = config_path.empty() ? TrainJob{} : load_config(config_path);
  CsvWriter csv({"section", "name", "patch_size", "correlation", "fft", "score_path", "offset_path", "aggregation",
                 "total"});
  for (const auto& r : flop_table(job.model)) {
    csv.row({r.section, r.name, std::to_string(r.patch_size), std::to_string(r.flops.correlation),
             std::to_string(r.flops.fft), std::to_string(r.flops.score_path), std::to_string(r.flops.offset_path),
             std::to_string(r.flops.aggregation()), std::to_string(r.flops.total())});
  }
  emit(csv, out);
  return 0;
}

int run_scale_sweep(const std::string& weights, std::size_t objects, const std::vector<double>& scales,
                    std::uint64_t seed, const std::string& out) {
  const auto params = load_weights(weights);
  CsvWriter csv({"object", "scale", "full_template_error", "patchnet_error", "cell_px"});
  for (const auto& r : scale_sweep(params, objects, scales, seed)) {
    csv.row({std::to_string(r.object), CsvWriter::num(r.scale), CsvWriter::num(r.full_template_error),
             CsvWriter::num(r.patchnet_error), CsvWriter::num(r.cell)});
  }
  emit(csv, out);
  return 0;
}

int run_selftest() {
  bool ok = true;
  for (const auto& r : checks::all_suites()) {
    std::printf("%s  %-32s max_err=%.3g tol=%.1g %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_error,
                r.tolerance, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based correlation matcher: training, skip-frame tracking and analysis"};
  app.require_subcommand(1);

  std::string config, weights, seq, out;
  std::optional<std::uint64_t> seed;

  auto* train_cmd = app.add_subcommand("train", "train on synthetic pairs and write a weight file");
  train_cmd->add_option("--config", config, "key=value training config")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "weight file to write; the log goes to <out>.log.csv")->required();
  train_cmd->add_option("--seed", seed, "override the config seed");

  TrackOptions track;
  auto* track_cmd = app.add_subcommand("track", "skip-frame tracking over a frame sequence");
  track_cmd->add_option("--weights", track.weights)->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--seq", track.seq, "directory of frame_%06d.ppm plus groundtruth.txt")->required();
  track_cmd->add_option("--policy", track.policy)->check(CLI::IsMember({"fixed", "online"}));
  track_cmd->add_option("--interval", track.interval, "fixed policy: frames per keyframe")->check(CLI::PositiveNumber);
  track_cmd->add_option("--conf-threshold", track.conf_threshold, "online policy: refresh below this confidence");
  track_cmd->add_option("--max-inter", track.max_inter, "online policy: longest run of inter-frames")
      ->check(CLI::PositiveNumber);
  track_cmd->add_option("--oracle-flops", track.oracle_flops, "cost of one keyframe oracle run");
  track_cmd->add_option("--seed", seed, "unused; tracking is deterministic");
  track_cmd->add_option("--out", track.out, "results CSV (stdout when omitted)");

  auto* flops_cmd = app.add_subcommand("flops", "analytic FLOP report");
  flops_cmd->add_option("--config", config)->check(CLI::ExistingFile);
  flops_cmd->add_option("--out", out);

  std::size_t objects = 100;
  std::vector<double> scales{0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4};
  std::uint64_t sweep_seed = 7;
  auto* sweep_cmd = app.add_subcommand("scale-sweep", "center error versus object scale change");
  sweep_cmd->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--objects", objects);
  sweep_cmd->add_option("--scales", scales)->delimiter(',');
  sweep_cmd->add_option("--seed", sweep_seed);
  sweep_cmd->add_option("--out", out);

  auto* self_cmd = app.add_subcommand("selftest", "oracle equivalence and gradient checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return run_train(config, out, seed);
    if (*track_cmd) return run_track(track);
    if (*flops_cmd) return run_flops(config, out);
    if (*sweep_cmd) return run_scale_sweep(weights, objects, scales, sweep_seed, out);
    if (*self_cmd) return run_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
