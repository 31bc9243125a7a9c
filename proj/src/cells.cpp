#include "warpcell/cells.hpp"

#include <stdexcept>

namespace warpcell {

namespace {

Tensor gate_preact(const GateParams& g, const Tensor& x, const Tensor& h) {
  Tensor pre = conv2d(x, ConvParams{g.w_x, g.bias}, Padding::SameZero);
  add_inplace(pre, conv2d(h, g.w_h, Padding::SameZero));
  return pre;
}

void gate_preact_backward(const GateParams& g, const Tensor& x, const Tensor& h,
                          const Tensor& grad_pre, GateParams* pg, Tensor* grad_x,
                          Tensor* grad_h) {
  conv2d_vjp_accumulate(x, g.w_x, Padding::SameZero, grad_pre, grad_x, pg ? &pg->w_x : nullptr,
                        pg ? &pg->bias : nullptr);
  conv2d_vjp_accumulate(h, g.w_h, Padding::SameZero, grad_pre, grad_h, pg ? &pg->w_h : nullptr,
                        nullptr);
}

void check_step_shapes(const Tensor& x, const CellState& prev, const GateParams& gate) {
  if (x.rank() != 3 || prev.h.rank() != 3) {
    throw std::invalid_argument("cell step: x and state must be [H, W, C]");
  }
  if (!prev.h.same_shape(prev.c)) {
    throw std::invalid_argument("cell step: h is " + prev.h.shape_string() + " but c is " +
                                prev.c.shape_string());
  }
  if (x.dims[0] != prev.h.dims[0] || x.dims[1] != prev.h.dims[1]) {
    throw std::invalid_argument("cell step: x spatial dims " + x.shape_string() +
                                " differ from state dims " + prev.h.shape_string());
  }
  if (gate.w_x.dims[3] != prev.h.dims[2]) {
    throw std::invalid_argument("cell step: gates produce " + std::to_string(gate.w_x.dims[3]) +
                                " channels but the state has " + std::to_string(prev.h.dims[2]));
  }
}

}  // namespace

CellState convlstm_step(const ConvLSTMParams& params, const Tensor& x, const CellState& prev,
                        ConvLSTMCache* cache) {
  check_step_shapes(x, prev, params.input_gate);
  Tensor i = activation(gate_preact(params.input_gate, x, prev.h), Activ::Sigmoid);
  Tensor f = activation(gate_preact(params.forget_gate, x, prev.h), Activ::Sigmoid);
  Tensor o = activation(gate_preact(params.output_gate, x, prev.h), Activ::Sigmoid);
  Tensor g = activation(gate_preact(params.candidate, x, prev.h), params.candidate_activation);

  Tensor c_new = add(hadamard(f, prev.c), hadamard(i, g));
  Tensor tanh_c = activation(c_new, Activ::Tanh);
  Tensor h_new = hadamard(o, tanh_c);

  if (cache) {
    cache->x = x;
    cache->h_in = prev.h;
    cache->c_in = prev.c;
    cache->i = i;
    cache->f = f;
    cache->g = g;
    cache->o = o;
    cache->c_new = c_new;
    cache->tanh_c = tanh_c;
  }
  return {std::move(h_new), std::move(c_new)};
}

void convlstm_backward(const ConvLSTMParams& params, const ConvLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, ConvLSTMParams* param_grads,
                       Tensor* grad_x, Tensor* grad_h_in, Tensor* grad_c_in) {
  const Tensor o_bar = hadamard(grad_h, cache.tanh_c);
  Tensor c_bar = activation_vjp(cache.tanh_c, Activ::Tanh, hadamard(grad_h, cache.o));
  add_inplace(c_bar, grad_c);

  if (grad_c_in) add_inplace(*grad_c_in, hadamard(c_bar, cache.f));
  const Tensor f_bar = hadamard(c_bar, cache.c_in);
  const Tensor i_bar = hadamard(c_bar, cache.g);
  const Tensor g_bar = hadamard(c_bar, cache.i);

  gate_preact_backward(params.input_gate, cache.x, cache.h_in,
                       activation_vjp(cache.i, Activ::Sigmoid, i_bar),
                       param_grads ? &param_grads->input_gate : nullptr, grad_x, grad_h_in);
  gate_preact_backward(params.forget_gate, cache.x, cache.h_in,
                       activation_vjp(cache.f, Activ::Sigmoid, f_bar),
                       param_grads ? &param_grads->forget_gate : nullptr, grad_x, grad_h_in);
  gate_preact_backward(params.output_gate, cache.x, cache.h_in,
                       activation_vjp(cache.o, Activ::Sigmoid, o_bar),
                       param_grads ? &param_grads->output_gate : nullptr, grad_x, grad_h_in);
  gate_preact_backward(params.candidate, cache.x, cache.h_in,
                       activation_vjp(cache.g, params.candidate_activation, g_bar),
                       param_grads ? &param_grads->candidate : nullptr, grad_x, grad_h_in);
}

ControlPointSet predict_displacements(const WarpLSTMParams& params, const Tensor& x,
                                      const Tensor& h_prev, Tensor* disp_map_out) {
  if (params.disp.w_x.dims[3] != 2 || params.disp.w_h.dims[3] != 2) {
    throw std::invalid_argument("displacement conv must have 2 output channels");
  }
  Tensor map = gate_preact(params.disp, x, h_prev);
  ControlPointSet cps = make_control_grid(x.dims[0], x.dims[1], params.lines_y, params.lines_x);
  if (!params.pin_boundary) cps.boundary.clear();
  for (std::size_t k = 0; k < cps.interior.size(); ++k) {
    const int xi = static_cast<int>(cps.interior[k].x);
    const int yi = static_cast<int>(cps.interior[k].y);
    cps.displacements[k] = {map.at(yi, xi, 0), map.at(yi, xi, 1)};
  }
  if (disp_map_out) *disp_map_out = std::move(map);
  return cps;
}

WarpStepResult warplstm_step(const WarpLSTMParams& params, const Tensor& x, const CellState& prev,
                             WarpLSTMCache* cache) {
  Tensor x_g = params.bottleneck ? conv2d(x, params.bottleneck->down, Padding::SameZero) : x;
  check_step_shapes(x_g, prev, params.base.input_gate);

  Tensor disp_map;
  ControlPointSet cps = predict_displacements(params, x_g, prev.h, &disp_map);
  FlowField flow = dense_flow(cps, x.dims[0], x.dims[1], params.order, params.regularization,
                              params.fixed_sites);
  CellState warped{warp_by_flow(prev.h, flow.flow), warp_by_flow(prev.c, flow.flow)};

  WarpStepResult out;
  out.state = convlstm_step(params.base, x_g, warped, cache ? &cache->base : nullptr);
  if (params.bottleneck) {
    out.repr = conv2d(out.state.h, params.bottleneck->up, Padding::SameZero);
    if (params.bottleneck->skip) add_inplace(out.repr, x);
  } else {
    out.repr = out.state.h;
  }

  if (cache) {
    cache->x_raw = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->disp_map = std::move(disp_map);
    cache->flow = flow.flow;
    cache->cps = std::move(cps);
  }
  out.flow = std::move(flow);
  return out;
}

void warplstm_backward(const WarpLSTMParams& params, const WarpLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, const Tensor* grad_repr,
                       WarpLSTMParams* param_grads, Tensor* grad_x, Tensor* grad_h_prev,
                       Tensor* grad_c_prev) {
  Tensor gh = grad_h;
  if (params.bottleneck && grad_repr) {
    const Tensor h_new = hadamard(cache.base.o, cache.base.tanh_c);
    conv2d_vjp_accumulate(h_new, params.bottleneck->up.kernel, Padding::SameZero, *grad_repr, &gh,
                          param_grads ? &param_grads->bottleneck->up.kernel : nullptr,
                          param_grads ? &param_grads->bottleneck->up.bias : nullptr);
  }

  Tensor gx_g = zeros_like(cache.base.x);
  Tensor gh_w = zeros_like(cache.h_prev);
  Tensor gc_w = zeros_like(cache.c_prev);
  convlstm_backward(params.base, cache.base, gh, grad_c,
                    param_grads ? &param_grads->base : nullptr, &gx_g, &gh_w, &gc_w);

  // One flow served both warps, so the two flow cotangents add up before the
  // single pass back through the interpolation.
  Tensor grad_flow = zeros_like(cache.flow);
  warp_by_flow_vjp_accumulate(cache.h_prev, cache.flow, gh_w, grad_h_prev, &grad_flow);
  warp_by_flow_vjp_accumulate(cache.c_prev, cache.flow, gc_w, grad_c_prev, &grad_flow);
  const std::vector<Disp> gdisp =
      dense_flow_vjp(cache.cps, params.order, params.regularization, grad_flow, params.fixed_sites);

  Tensor grad_disp_map = zeros_like(cache.disp_map);
  for (std::size_t k = 0; k < cache.cps.interior.size(); ++k) {
    const int xi = static_cast<int>(cache.cps.interior[k].x);
    const int yi = static_cast<int>(cache.cps.interior[k].y);
    grad_disp_map.at(yi, xi, 0) += gdisp[k].dx;
    grad_disp_map.at(yi, xi, 1) += gdisp[k].dy;
  }
  gate_preact_backward(params.disp, cache.base.x, cache.h_prev, grad_disp_map,
                       param_grads ? &param_grads->disp : nullptr, &gx_g, grad_h_prev);

  if (params.bottleneck) {
    conv2d_vjp_accumulate(cache.x_raw, params.bottleneck->down.kernel, Padding::SameZero, gx_g,
                          grad_x, param_grads ? &param_grads->bottleneck->down.kernel : nullptr,
                          param_grads ? &param_grads->bottleneck->down.bias : nullptr);
    if (params.bottleneck->skip && grad_repr && grad_x) add_inplace(*grad_x, *grad_repr);
  } else if (grad_x) {
    add_inplace(*grad_x, gx_g);
  }
}

CellState trajlstm_step(const TrajLSTMParams& params, const Tensor& x, const CellState& prev,
                        TrajLSTMCache* cache) {
  check_step_shapes(x, prev, params.base.input_gate);
  const int links = params.links;
  if (params.flow_conv.kernel.dims[3] != 2 * links) {
    throw std::invalid_argument("flow conv must emit 2 channels per link, got " +
                                std::to_string(params.flow_conv.kernel.dims[3]) + " for " +
                                std::to_string(links) + " links");
  }
  const int h = x.dims[0], w = x.dims[1];

  Tensor xc = concat_channels(x, prev.h);
  Tensor flows = conv2d(xc, params.flow_conv, Padding::SameZero);

  Tensor mean_flow = Tensor::zeros({h, w, 2});
  for (int l = 0; l < links; ++l) {
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        mean_flow.at(y, xx, 0) += flows.at(y, xx, 2 * l + 0);
        mean_flow.at(y, xx, 1) += flows.at(y, xx, 2 * l + 1);
      }
  }
  for (auto& v : mean_flow.data) v /= links;

  std::vector<Tensor> warped(links);
  std::vector<const Tensor*> parts(links);
  for (int l = 0; l < links; ++l) {
    warped[l] = warp_by_flow(prev.h, channel_slice(flows, 2 * l, 2 * l + 2));
    parts[l] = &warped[l];
  }
  Tensor warped_concat = concat_channels(parts);
  CellState pre;
  pre.h = conv2d(warped_concat, params.aggregate, Padding::SameZero);
  pre.c = warp_by_flow(prev.c, mean_flow);

  CellState out = convlstm_step(params.base, x, pre, cache ? &cache->base : nullptr);
  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->flows = std::move(flows);
    cache->mean_flow = std::move(mean_flow);
    cache->warped_concat = std::move(warped_concat);
  }
  return out;
}

void trajlstm_backward(const TrajLSTMParams& params, const TrajLSTMCache& cache,
                       const Tensor& grad_h, const Tensor& grad_c, TrajLSTMParams* param_grads,
                       Tensor* grad_x, Tensor* grad_h_prev, Tensor* grad_c_prev) {
  const int links = params.links;
  const int h = cache.x.dims[0], w = cache.x.dims[1];

  Tensor gxc = zeros_like(concat_channels(cache.x, cache.h_prev));
  Tensor gh_w = zeros_like(cache.h_prev);
  Tensor gc_w = zeros_like(cache.c_prev);
  {
    // x feeds the gates unwarped; h and c reach them only through the warps,
    // so their cotangents continue below
    Tensor gx_direct = zeros_like(cache.x);
    convlstm_backward(params.base, cache.base, grad_h, grad_c,
                      param_grads ? &param_grads->base : nullptr, &gx_direct, &gh_w, &gc_w);
    if (grad_x) add_inplace(*grad_x, gx_direct);
  }

  Tensor gcat = zeros_like(cache.warped_concat);
  conv2d_vjp_accumulate(cache.warped_concat, params.aggregate.kernel, Padding::SameZero, gh_w,
                        &gcat, param_grads ? &param_grads->aggregate.kernel : nullptr,
                        param_grads ? &param_grads->aggregate.bias : nullptr);

  Tensor gflows = zeros_like(cache.flows);
  const int cb = cache.h_prev.dims[2];
  for (int l = 0; l < links; ++l) {
    Tensor fl = channel_slice(cache.flows, 2 * l, 2 * l + 2);
    Tensor gfl = zeros_like(fl);
    Tensor gcat_l = channel_slice(gcat, l * cb, (l + 1) * cb);
    warp_by_flow_vjp_accumulate(cache.h_prev, fl, gcat_l, grad_h_prev, &gfl);
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        gflows.at(y, xx, 2 * l + 0) += gfl.at(y, xx, 0);
        gflows.at(y, xx, 2 * l + 1) += gfl.at(y, xx, 1);
      }
  }
  {
    Tensor gmean = zeros_like(cache.mean_flow);
    warp_by_flow_vjp_accumulate(cache.c_prev, cache.mean_flow, gc_w, grad_c_prev, &gmean);
    for (int l = 0; l < links; ++l)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          gflows.at(y, xx, 2 * l + 0) += gmean.at(y, xx, 0) / links;
          gflows.at(y, xx, 2 * l + 1) += gmean.at(y, xx, 1) / links;
        }
  }

  Tensor xc = concat_channels(cache.x, cache.h_prev);
  conv2d_vjp_accumulate(xc, params.flow_conv.kernel, Padding::SameZero, gflows, &gxc,
                        param_grads ? &param_grads->flow_conv.kernel : nullptr,
                        param_grads ? &param_grads->flow_conv.bias : nullptr);
  const int cx = cache.x.dims[2];
  if (grad_x) add_inplace(*grad_x, channel_slice(gxc, 0, cx));
  if (grad_h_prev) add_inplace(*grad_h_prev, channel_slice(gxc, cx, cx + cb));
}

std::vector<CellState> run_sequence(const CellParams& cell, const std::vector<Tensor>& inputs,
                                    const CellState* init) {
  std::vector<CellState> states;
  if (inputs.empty()) return states;
  states.reserve(inputs.size());

  const ConvLSTMParams& base = std::visit(
      [](const auto& p) -> const ConvLSTMParams& {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, ConvLSTMParams>) return p;
        else return p.base;
      },
      cell);
  CellState state;
  if (init) {
    state = *init;
  } else {
    const int cb = base.input_gate.bias.dims[0];
    state.h = Tensor::zeros({inputs[0].dims[0], inputs[0].dims[1], cb});
    state.c = zeros_like(state.h);
  }

  for (const Tensor& x : inputs) {
    state = std::visit(
        [&](const auto& p) -> CellState {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, ConvLSTMParams>) {
            return convlstm_step(p, x, state);
          } else if constexpr (std::is_same_v<P, WarpLSTMParams>) {
            return warplstm_step(p, x, state).state;
          } else {
            return trajlstm_step(p, x, state);
          }
        },
        cell);
    states.push_back(state);
  }
  return states;
}

// ---------------------------------------------------------------------------
// construction

namespace {

Tensor random_filled(std::vector<int> dims, Rng& rng, double scale) {
  Tensor t(std::move(dims));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

}  // namespace

GateParams make_gate(int kernel, int c_in, int c_hidden, Rng& rng, double scale) {
  GateParams g;
  g.w_x = random_filled({kernel, kernel, c_in, c_hidden}, rng, scale);
  g.w_h = random_filled({kernel, kernel, c_hidden, c_hidden}, rng, scale);
  g.bias = Tensor::zeros({c_hidden});
  return g;
}

ConvLSTMParams make_convlstm(int kernel, int c_in, int c_hidden, Rng& rng, double scale,
                             Activ candidate_activation) {
  ConvLSTMParams p;
  p.input_gate = make_gate(kernel, c_in, c_hidden, rng, scale);
  p.candidate = make_gate(kernel, c_in, c_hidden, rng, scale);
  p.forget_gate = make_gate(kernel, c_in, c_hidden, rng, scale);
  p.output_gate = make_gate(kernel, c_in, c_hidden, rng, scale);
  p.candidate_activation = candidate_activation;
  return p;
}

WarpLSTMParams make_warplstm(int kernel, int c_in, int c_hidden, int lines_y, int lines_x,
                             Rng& rng, double scale, Activ candidate_activation) {
  WarpLSTMParams p;
  p.base = make_convlstm(kernel, c_in, c_hidden, rng, scale, candidate_activation);
  p.disp.w_x = Tensor::zeros({1, 1, c_in, 2});
  p.disp.w_h = Tensor::zeros({1, 1, c_hidden, 2});
  p.disp.bias = Tensor::zeros({2});
  p.lines_y = lines_y;
  p.lines_x = lines_x;
  return p;
}

TrajLSTMParams make_trajlstm(int kernel, int c_in, int c_hidden, int links, Rng& rng, double scale,
                             Activ candidate_activation) {
  TrajLSTMParams p;
  p.base = make_convlstm(kernel, c_in, c_hidden, rng, scale, candidate_activation);
  p.links = links;
  p.flow_conv.kernel = Tensor::zeros({kernel, kernel, c_in + c_hidden, 2 * links});
  p.flow_conv.bias = Tensor::zeros({2 * links});
  // averaging aggregate: the zero-flow start is exactly a ConvLSTM
  p.aggregate.kernel = Tensor::zeros({1, 1, links * c_hidden, c_hidden});
  for (int l = 0; l < links; ++l)
    for (int c = 0; c < c_hidden; ++c) p.aggregate.kernel.at(0, 0, l * c_hidden + c, c) = 1.0 / links;
  p.aggregate.bias = Tensor::zeros({c_hidden});
  return p;
}

}  // namespace warpcell
