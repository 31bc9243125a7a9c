#include "warpcell/model.hpp"

#include <cmath>
#include <stdexcept>

#include "warpcell/spline.hpp"

namespace warpcell {

std::string cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::ClipIndependent: return "clip_independent";
    case CellKind::ConvLSTM: return "convlstm";
    case CellKind::WarpLSTM: return "warplstm";
    case CellKind::TrajLSTM: return "trajlstm";
    case CellKind::GtFlowWarp: return "gt_flow_warp";
  }
  throw std::invalid_argument("unknown cell kind");
}

CellKind cell_kind_from_name(const std::string& name) {
  if (name == "clip_independent") return CellKind::ClipIndependent;
  if (name == "convlstm") return CellKind::ConvLSTM;
  if (name == "warplstm") return CellKind::WarpLSTM;
  if (name == "trajlstm") return CellKind::TrajLSTM;
  if (name == "gt_flow_warp") return CellKind::GtFlowWarp;
  throw std::invalid_argument("unknown cell kind: '" + name + "'");
}

TrackerModel make_model(const ModelConfig& config) {
  if (config.channels < 1) throw std::invalid_argument("make_model: channels must be >= 1");
  Rng rng(config.seed);
  TrackerModel m;
  m.config = config;

  const int c = config.channels, ek = config.encoder_kernel;
  m.encoder.kernel = Tensor({ek, ek, 2, c});
  for (auto& v : m.encoder.kernel.data) v = rng.normal() * config.init_scale;
  m.encoder.bias = Tensor::zeros({c});

  switch (config.kind) {
    case CellKind::ClipIndependent:
    case CellKind::ConvLSTM:
    case CellKind::GtFlowWarp:
      m.cell = make_convlstm(config.cell_kernel, c, c, rng, config.init_scale);
      break;
    case CellKind::WarpLSTM:
      m.cell = make_warplstm(config.cell_kernel, c, c, config.lines_y, config.lines_x, rng,
                             config.init_scale);
      break;
    case CellKind::TrajLSTM:
      m.cell = make_trajlstm(config.cell_kernel, c, c, config.links, rng, config.init_scale);
      break;
  }

  m.head.kernel = Tensor({1, 1, c, 1});
  for (auto& v : m.head.kernel.data) v = rng.normal() * config.init_scale;
  m.head.bias = Tensor::zeros({1});
  return m;
}

TrackerModel zeroed_model_like(const TrackerModel& model) {
  TrackerModel out = model;
  visit_model_params(out, [](const std::string&, Tensor& t) {
    std::fill(t.data.begin(), t.data.end(), 0.0);
  });
  return out;
}

std::vector<Tensor> model_forward(const TrackerModel& model, const std::vector<Tensor>& frames,
                                  const std::vector<Tensor>* gt_flow, ModelCache* cache) {
  if (frames.empty()) throw std::invalid_argument("model_forward: empty sequence");
  const CellKind kind = model.config.kind;
  if (kind == CellKind::GtFlowWarp && (!gt_flow || gt_flow->size() != frames.size())) {
    throw std::invalid_argument("model_forward: gt_flow_warp needs one flow field per frame");
  }
  const int h = frames[0].dims[0], w = frames[0].dims[1], c = model.config.channels;

  CellState state{Tensor::zeros({h, w, c}), Tensor::zeros({h, w, c})};
  const CellState zero_state = state;
  std::vector<Tensor> logits;
  if (cache) cache->steps.clear();

  for (std::size_t t = 0; t < frames.size(); ++t) {
    StepCache step;
    step.frame = frames[t];
    step.x_enc = conv2d(frames[t], model.encoder, Padding::SameZero);

    Tensor repr;
    switch (kind) {
      case CellKind::ClipIndependent:
      case CellKind::ConvLSTM: {
        const CellState& prev = (kind == CellKind::ClipIndependent) ? zero_state : state;
        ConvLSTMCache cc;
        state = convlstm_step(std::get<ConvLSTMParams>(model.cell), step.x_enc, prev,
                              cache ? &cc : nullptr);
        step.cell = std::move(cc);
        repr = state.h;
        break;
      }
      case CellKind::GtFlowWarp: {
        step.h_pre = state.h;
        step.c_pre = state.c;
        step.flow = (*gt_flow)[t];
        const CellState warped{warp_by_flow(state.h, step.flow),
                               warp_by_flow(state.c, step.flow)};
        ConvLSTMCache cc;
        state = convlstm_step(std::get<ConvLSTMParams>(model.cell), step.x_enc, warped,
                              cache ? &cc : nullptr);
        step.cell = std::move(cc);
        repr = state.h;
        break;
      }
      case CellKind::WarpLSTM: {
        WarpLSTMCache wc;
        WarpStepResult r = warplstm_step(std::get<WarpLSTMParams>(model.cell), step.x_enc, state,
                                         cache ? &wc : nullptr);
        step.cell = std::move(wc);
        step.flow = std::move(r.flow.flow);
        state = std::move(r.state);
        repr = std::move(r.repr);
        break;
      }
      case CellKind::TrajLSTM: {
        TrajLSTMCache tc;
        state = trajlstm_step(std::get<TrajLSTMParams>(model.cell), step.x_enc, state,
                              cache ? &tc : nullptr);
        step.cell = std::move(tc);
        repr = state.h;
        break;
      }
    }

    step.repr = repr;
    logits.push_back(conv2d(repr, model.head, Padding::SameZero));
    if (cache) cache->steps.push_back(std::move(step));
  }
  return logits;
}

void model_backward(const TrackerModel& model, const ModelCache& cache,
                    const std::vector<Tensor>& grad_logits, TrackerModel* grads) {
  if (cache.steps.size() != grad_logits.size()) {
    throw std::invalid_argument("model_backward: cache and cotangent lengths differ");
  }
  const CellKind kind = model.config.kind;
  const int steps = static_cast<int>(cache.steps.size());

  Tensor grad_h, grad_c;  // BPTT carry, empty at the sequence tail
  for (int t = steps - 1; t >= 0; --t) {
    const StepCache& step = cache.steps[t];

    // head
    Tensor grad_repr = zeros_like(step.repr);
    conv2d_vjp_accumulate(step.repr, model.head.kernel, Padding::SameZero, grad_logits[t],
                          &grad_repr, &grads->head.kernel, &grads->head.bias);

    if (grad_h.data.empty()) {
      grad_h = zeros_like(step.repr);
      grad_c = zeros_like(step.repr);
    }

    Tensor grad_x = zeros_like(step.x_enc);
    Tensor next_grad_h, next_grad_c;
    switch (kind) {
      case CellKind::ClipIndependent:
      case CellKind::ConvLSTM: {
        add_inplace(grad_h, grad_repr);
        next_grad_h = zeros_like(grad_h);
        next_grad_c = zeros_like(grad_c);
        convlstm_backward(std::get<ConvLSTMParams>(model.cell),
                          std::get<ConvLSTMCache>(step.cell), grad_h, grad_c,
                          &std::get<ConvLSTMParams>(grads->cell), &grad_x, &next_grad_h,
                          &next_grad_c);
        if (kind == CellKind::ClipIndependent) {
          // state resets each step, nothing flows further back
          std::fill(next_grad_h.data.begin(), next_grad_h.data.end(), 0.0);
          std::fill(next_grad_c.data.begin(), next_grad_c.data.end(), 0.0);
        }
        break;
      }
      case CellKind::GtFlowWarp: {
        add_inplace(grad_h, grad_repr);
        Tensor grad_h_warped = zeros_like(grad_h), grad_c_warped = zeros_like(grad_c);
        convlstm_backward(std::get<ConvLSTMParams>(model.cell),
                          std::get<ConvLSTMCache>(step.cell), grad_h, grad_c,
                          &std::get<ConvLSTMParams>(grads->cell), &grad_x, &grad_h_warped,
                          &grad_c_warped);
        next_grad_h = zeros_like(grad_h);
        next_grad_c = zeros_like(grad_c);
        // the flow is data, not a parameter: its cotangent is dropped
        warp_by_flow_vjp_accumulate(step.h_pre, step.flow, grad_h_warped, &next_grad_h, nullptr);
        warp_by_flow_vjp_accumulate(step.c_pre, step.flow, grad_c_warped, &next_grad_c, nullptr);
        break;
      }
      case CellKind::WarpLSTM: {
        add_inplace(grad_h, grad_repr);  // repr aliases h (no bottleneck in this model)
        next_grad_h = zeros_like(grad_h);
        next_grad_c = zeros_like(grad_c);
        warplstm_backward(std::get<WarpLSTMParams>(model.cell),
                          std::get<WarpLSTMCache>(step.cell), grad_h, grad_c, nullptr,
                          &std::get<WarpLSTMParams>(grads->cell), &grad_x, &next_grad_h,
                          &next_grad_c);
        break;
      }
      case CellKind::TrajLSTM: {
        add_inplace(grad_h, grad_repr);
        next_grad_h = zeros_like(grad_h);
        next_grad_c = zeros_like(grad_c);
        trajlstm_backward(std::get<TrajLSTMParams>(model.cell),
                          std::get<TrajLSTMCache>(step.cell), grad_h, grad_c,
                          &std::get<TrajLSTMParams>(grads->cell), &grad_x, &next_grad_h,
                          &next_grad_c);
        break;
      }
    }

    conv2d_vjp_accumulate(step.frame, model.encoder.kernel, Padding::SameZero, grad_x, nullptr,
                          &grads->encoder.kernel, &grads->encoder.bias);
    grad_h = std::move(next_grad_h);
    grad_c = std::move(next_grad_c);
  }
}

Tensor heatmap_target(int height, int width, double cy, double cx, double sigma) {
  Tensor t = Tensor::zeros({height, width, 1});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dy = y - cy, dx = x - cx;
      t.at(y, x, 0) = std::exp(-(dy * dy + dx * dx) * inv);
    }
  return t;
}

double bce_with_logits(const Tensor& logits, const Tensor& target, Tensor* grad) {
  if (!logits.same_shape(target)) {
    throw std::invalid_argument("bce_with_logits: shape mismatch, " + logits.shape_string() +
                                " vs " + target.shape_string());
  }
  if (grad) *grad = zeros_like(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.data.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double z = logits.data[i], y = target.data[i];
    // max(z, 0) - z y + log(1 + exp(-|z|)) is the overflow-safe form
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (grad) grad->data[i] = (sigmoid(z) - y) * inv_n;
  }
  return loss * inv_n;
}

}  // namespace warpcell
