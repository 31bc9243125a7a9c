#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "warpcell/model.hpp"
#include "warpcell/synth.hpp"

namespace warpcell {

struct TrainConfig {
  CellKind kind = CellKind::ConvLSTM;
  double learning_rate = 0.003;
  double momentum = 0.9;
  int lr_decay_step = 1000;  // lr is divided by 10 once this iteration is reached
  int iterations = 300;
  int batch_size = 4;
  double target_sigma = 2.0;  // px, half-width of the heatmap supervision bump
  std::uint64_t seed = 0;
  SynthConfig data;   // per-sequence seeds are derived from `seed`
  ModelConfig model;  // kind and seed are overwritten from the fields above
};

struct TrainResult {
  TrackerModel model;
  std::vector<double> loss_curve;  // one mean batch loss per iteration
};

/// Mean BCE over the sequence's heatmaps; supervision continues through
/// occlusion. Parameter cotangents accumulate into `grads` when given.
double sequence_loss(const TrackerModel& model, const SynthSequence& seq, double target_sigma,
                     TrackerModel* grads);

/// SGD with momentum (v = mu v - lr g; theta += v), deterministic in
/// (seed, config). Throws on a non-finite loss, naming the iteration.
TrainResult train(const TrainConfig& cfg);

/// Same loop from an existing model (warm start); cfg.model/cfg.kind are
/// ignored in favor of the model's own configuration.
TrainResult train_from(TrackerModel model, const TrainConfig& cfg);

struct EvalMetrics {
  double mean_center_error_px = 0.0;
  double mean_iou = 0.0;
  double map50 = 0.0;
  double occl_center_error_px = 0.0;
  double occl_mean_iou = 0.0;
  double occl_map50 = 0.0;
  int frames_total = 0;
  int frames_occluded = 0;
};

/// Fixed-size box at the heatmap argmax (ties to the smallest (y, x) in
/// row-major order), scored by the peak's sigmoid. The `occl_' metrics
/// restrict to occluded frames.
EvalMetrics evaluate(const TrackerModel& model, const std::vector<SynthSequence>& sequences);

/// Scores externally supplied heatmaps instead of running a model;
/// `per_sequence_logits[i]` holds one [H, W, 1] map per step of
/// `sequences[i]`.
EvalMetrics evaluate_heatmaps(const std::vector<std::vector<Tensor>>& per_sequence_logits,
                              const std::vector<SynthSequence>& sequences);

/// Directory layout: config.json, manifest.txt (`name file` per line), one
/// .ten blob per parameter tensor.
void save_checkpoint(const TrackerModel& model, const std::string& dir);
TrackerModel load_checkpoint(const std::string& dir);

}  // namespace warpcell
