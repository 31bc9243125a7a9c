#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "warpcell/cells.hpp"
#include "warpcell/tensor.hpp"

namespace warpcell {

enum class CellKind { ClipIndependent, ConvLSTM, WarpLSTM, TrajLSTM, GtFlowWarp };

std::string cell_kind_name(CellKind kind);
CellKind cell_kind_from_name(const std::string& name);

struct ModelConfig {
  CellKind kind = CellKind::ConvLSTM;
  int channels = 8;
  int encoder_kernel = 3;
  int cell_kernel = 3;
  int lines_y = 3, lines_x = 3;  // warp cell control grid
  int links = 3;                 // multi-link cell
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

/// Encoder conv -> recurrent cell -> 1x1 logit head. clip_independent and
/// gt_flow_warp reuse plain ConvLSTM weights; they differ only in how the
/// state is carried between steps.
struct TrackerModel {
  ModelConfig config;
  ConvParams encoder;  // [k, k, 2, C]
  CellParams cell;
  ConvParams head;  // [1, 1, C, 1]
};

TrackerModel make_model(const ModelConfig& config);

struct StepCache {
  Tensor frame;
  Tensor x_enc;
  std::variant<ConvLSTMCache, WarpLSTMCache, TrajLSTMCache> cell;
  Tensor h_pre, c_pre;  // gt_flow_warp only: the states before the data warp
  Tensor flow;          // dense state displacement (warplstm, gt_flow_warp)
  Tensor repr;          // head input
};

struct ModelCache {
  std::vector<StepCache> steps;
};

/// Runs the full sequence and returns one [H, W, 1] logit heatmap per step.
/// `gt_flow` is required by the gt_flow_warp kind and ignored otherwise.
std::vector<Tensor> model_forward(const TrackerModel& model, const std::vector<Tensor>& frames,
                                  const std::vector<Tensor>* gt_flow, ModelCache* cache = nullptr);

/// Backpropagation through time; parameter cotangents accumulate into `grads`
/// (a zeroed mirror).
void model_backward(const TrackerModel& model, const ModelCache& cache,
                    const std::vector<Tensor>& grad_logits, TrackerModel* grads);

template <typename Fn>
void visit_model_params(TrackerModel& m, Fn&& fn) {
  fn(std::string("encoder.kernel"), m.encoder.kernel);
  fn(std::string("encoder.bias"), m.encoder.bias);
  std::visit([&](auto& cell) { visit_params(cell, fn); }, m.cell);
  fn(std::string("head.kernel"), m.head.kernel);
  fn(std::string("head.bias"), m.head.bias);
}

TrackerModel zeroed_model_like(const TrackerModel& model);

/// Gaussian bump exp(-((y-cy)^2 + (x-cx)^2) / (2 sigma^2)) as a [H, W, 1] map.
Tensor heatmap_target(int height, int width, double cy, double cx, double sigma);

/// Mean per-pixel binary cross-entropy between logits and a target in [0, 1].
/// When `grad` is given it receives d(loss)/d(logits).
double bce_with_logits(const Tensor& logits, const Tensor& target, Tensor* grad = nullptr);

}  // namespace warpcell
