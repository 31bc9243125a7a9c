#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "warpcell/matching.hpp"
#include "warpcell/tensor.hpp"

namespace warpcell {

struct SynthConfig {
  int height = 40, width = 40;
  int steps = 16;
  int distractors = 3;
  double min_speed = 2.0, max_speed = 4.0;  // px/step
  int occlusion_start = -1;                 // first hidden step, -1 disables
  int occlusion_length = 0;
  double noise_sigma = 0.0;
  double blob_sigma = 1.5;
  int box_half = 3;  // ground-truth box half-extent in px
  std::uint64_t seed = 0;
};

/// One generated episode. Frames carry the target blob in channel 0 and every
/// distractor in channel 1; during occlusion the target is not rendered but
/// the ground truth keeps going.
struct SynthSequence {
  SynthConfig config;
  std::vector<Tensor> frames;                     // T x [H, W, 2]
  std::vector<Box> gt_boxes;                      // normalized
  std::vector<std::array<double, 2>> gt_centers;  // (y, x) px
  std::vector<Tensor> gt_flow;   // T x [H, W, 2], (dy, dx) target motion from t-1; zero at t=0
  std::vector<bool> occluded;
};

SynthSequence generate_synthetic(const SynthConfig& cfg);

/// The normalized box_half-sized box around a pixel center, clamped to the
/// frame. Ground truth and predictions use the same construction.
Box center_box(const SynthConfig& cfg, double cy, double cx);

}  // namespace warpcell
