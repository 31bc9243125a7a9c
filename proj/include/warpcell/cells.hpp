#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "warpcell/rng.hpp"
#include "warpcell/spline.hpp"
#include "warpcell/tensor.hpp"

namespace warpcell {

/// One gate's weights: input-to-state kernel, state-to-state kernel, bias.
/// Both kernels must share spatial size and output channels.
struct GateParams {
  Tensor w_x;   // [kh, kw, C_in, C_hidden]
  Tensor w_h;   // [kh, kw, C_hidden, C_hidden]
  Tensor bias;  // [C_hidden]
};

struct CellState {
  Tensor h;
  Tensor c;
};

/// Gating:
///   i = sigma(w_xi*x + w_hi*h + b_i)        f = sigma(w_xf*x + w_hf*h + b_f)
///   g = act(w_xg*x + w_hg*h + b_g)          o = sigma(w_xo*x + w_ho*h + b_o)
///   c_new = f (.) c + i (.) g               h_new = o (.) tanh(c_new)
/// The candidate activation defaults to sigmoid; tanh is the conventional
/// alternative.
struct ConvLSTMParams {
  GateParams input_gate;
  GateParams candidate;
  GateParams forget_gate;
  GateParams output_gate;
  Activ candidate_activation = Activ::Sigmoid;
};

/// 1x1 channel bottleneck around a cell: the input is down-projected C -> Cb
/// before gating; the exported representation is up(h) (plus the raw input
/// when skip is set).
struct Bottleneck {
  ConvParams down;  // 1x1, C -> Cb
  ConvParams up;    // 1x1, Cb -> C
  bool skip = true;
};

/// Warp cell: a 2-channel displacement map d = w_xd*x + w_hd*h + b_d is read
/// at the control-grid intersections, interpolated to a dense flow, and both
/// h and c are backward-warped by it before the ConvLSTM gating runs.
struct WarpLSTMParams {
  ConvLSTMParams base;
  GateParams disp;  // 1x1 kernels, 2 output channels: (dx, dy)
  int lines_y = 3;
  int lines_x = 3;
  int order = 2;
  double regularization = kDefaultRegularization;
  bool fixed_sites = false;
  /// Without boundary pins a uniform displacement becomes an exact global
  /// shift (the affine term carries it); with pins the field decays to zero
  /// at the map border.
  bool pin_boundary = true;
  std::optional<Bottleneck> bottleneck;
};

/// Multi-link baseline: a conv over (x, h) emits L dense flows; h is warped
/// by each, the copies are concatenated and reduced by a 1x1 conv; c is
/// warped by the mean flow.
struct TrajLSTMParams {
  ConvLSTMParams base;
  int links = 5;
  ConvParams flow_conv;  // input (C + C_hidden) -> 2L channels, (dy, dx) per link
  ConvParams aggregate;  // 1x1, L*C_hidden -> C_hidden
};

// ---------------------------------------------------------------------------
// forward steps (optional caches feed the matching backward passes)

struct ConvLSTMCache {
  Tensor x, h_in, c_in;  // gating inputs; h_in/c_in are the (possibly warped) states
  Tensor i, f, g, o;     // activated gates
  Tensor c_new, tanh_c;
};

CellState convlstm_step(const ConvLSTMParams& params, const Tensor& x, const CellState& prev,
                        ConvLSTMCache* cache = nullptr);

/// Cotangents of (h_new, c_new) back to the gating inputs; parameter
/// cotangents accumulate into `param_grads` (a zeroed mirror of the params).
void convlstm_backward(const ConvLSTMParams& params, const ConvLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, ConvLSTMParams* param_grads,
                       Tensor* grad_x, Tensor* grad_h_in, Tensor* grad_c_in);

/// Displacement map evaluated on (x, h_prev), read at the grid intersections.
/// Channel 0 of the map is dx, channel 1 dy. `disp_map_out`, when given,
/// receives the full [H, W, 2] map.
ControlPointSet predict_displacements(const WarpLSTMParams& params, const Tensor& x,
                                      const Tensor& h_prev, Tensor* disp_map_out = nullptr);

struct WarpLSTMCache {
  ConvLSTMCache base;     // base.x is the gating input (bottlenecked when enabled)
  Tensor x_raw;           // original input
  Tensor h_prev, c_prev;  // pre-warp states
  Tensor disp_map;        // [H, W, 2]
  Tensor flow;            // dense field shared by both state warps
  ControlPointSet cps;
};

struct WarpStepResult {
  CellState state;
  FlowField flow;
  /// What downstream consumers read: h itself without a bottleneck, otherwise
  /// up(h), plus the raw input when skip is set.
  Tensor repr;
};

WarpStepResult warplstm_step(const WarpLSTMParams& params, const Tensor& x, const CellState& prev,
                             WarpLSTMCache* cache = nullptr);

/// `grad_repr` is only consulted when a bottleneck is present (without one,
/// repr aliases h and its cotangent belongs in `grad_h`).
void warplstm_backward(const WarpLSTMParams& params, const WarpLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, const Tensor* grad_repr,
                       WarpLSTMParams* param_grads, Tensor* grad_x, Tensor* grad_h_prev,
                       Tensor* grad_c_prev);

struct TrajLSTMCache {
  ConvLSTMCache base;
  Tensor x, h_prev, c_prev;
  Tensor flows;      // [H, W, 2L]
  Tensor mean_flow;  // [H, W, 2]
  Tensor warped_concat;
};

CellState trajlstm_step(const TrajLSTMParams& params, const Tensor& x, const CellState& prev,
                        TrajLSTMCache* cache = nullptr);

void trajlstm_backward(const TrajLSTMParams& params, const TrajLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, TrajLSTMParams* param_grads,
                       Tensor* grad_x, Tensor* grad_h_prev, Tensor* grad_c_prev);

// ---------------------------------------------------------------------------
// sequence runner

using CellParams = std::variant<ConvLSTMParams, WarpLSTMParams, TrajLSTMParams>;

/// Left fold of the step function over the inputs; all intermediate states
/// are returned. Without `init` the state starts at zero, sized from the
/// first input and the gate bias width.
std::vector<CellState> run_sequence(const CellParams& cell, const std::vector<Tensor>& inputs,
                                    const CellState* init = nullptr);

// ---------------------------------------------------------------------------
// construction and parameter traversal

GateParams make_gate(int kernel, int c_in, int c_hidden, Rng& rng, double scale);
ConvLSTMParams make_convlstm(int kernel, int c_in, int c_hidden, Rng& rng, double scale,
                             Activ candidate_activation = Activ::Sigmoid);
/// Displacement conv starts at zero so step 0 is exactly a ConvLSTM.
WarpLSTMParams make_warplstm(int kernel, int c_in, int c_hidden, int lines_y, int lines_x,
                             Rng& rng, double scale, Activ candidate_activation = Activ::Sigmoid);
TrajLSTMParams make_trajlstm(int kernel, int c_in, int c_hidden, int links, Rng& rng, double scale,
                             Activ candidate_activation = Activ::Sigmoid);

/// Visits every parameter tensor with a stable name, in a fixed order. The
/// same traversal drives the SGD update, checkpoint io, and gradient checks.
template <typename Fn>
void visit_params(GateParams& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".w_x", p.w_x);
  fn(prefix + ".w_h", p.w_h);
  fn(prefix + ".bias", p.bias);
}

template <typename Fn>
void visit_params(ConvLSTMParams& p, Fn&& fn, const std::string& prefix = "") {
  visit_params(p.input_gate, prefix + "input_gate", fn);
  visit_params(p.candidate, prefix + "candidate", fn);
  visit_params(p.forget_gate, prefix + "forget_gate", fn);
  visit_params(p.output_gate, prefix + "output_gate", fn);
}

template <typename Fn>
void visit_params(WarpLSTMParams& p, Fn&& fn) {
  visit_params(p.base, fn);
  visit_params(p.disp, "disp", fn);
  if (p.bottleneck) {
    fn(std::string("bottleneck.down.kernel"), p.bottleneck->down.kernel);
    fn(std::string("bottleneck.down.bias"), p.bottleneck->down.bias);
    fn(std::string("bottleneck.up.kernel"), p.bottleneck->up.kernel);
    fn(std::string("bottleneck.up.bias"), p.bottleneck->up.bias);
  }
}

template <typename Fn>
void visit_params(TrajLSTMParams& p, Fn&& fn) {
  visit_params(p.base, fn);
  fn(std::string("flow_conv.kernel"), p.flow_conv.kernel);
  fn(std::string("flow_conv.bias"), p.flow_conv.bias);
  fn(std::string("aggregate.kernel"), p.aggregate.kernel);
  fn(std::string("aggregate.bias"), p.aggregate.bias);
}

/// Same-shaped parameter pack with every tensor zeroed — the gradient mirror.
template <typename Params>
Params zeroed_like(const Params& params) {
  Params out = params;
  visit_params(out, [](const std::string&, Tensor& t) {
    std::fill(t.data.begin(), t.data.end(), 0.0);
  });
  return out;
}

/// Flattens the parameter tensors in traversal order (and back), for feeding
/// whole parameter packs through the finite-difference checker.
template <typename Params>
std::vector<Tensor> pack_params(Params params) {
  std::vector<Tensor> out;
  visit_params(params, [&](const std::string&, Tensor& t) { out.push_back(std::move(t)); });
  return out;
}

template <typename Params>
std::size_t unpack_params(Params& params, const std::vector<Tensor>& flat, std::size_t offset) {
  visit_params(params, [&](const std::string&, Tensor& t) { t = flat.at(offset++); });
  return offset;
}

}  // namespace warpcell
