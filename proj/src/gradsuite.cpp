#include "warpcell/gradsuite.hpp"

#include <chrono>

#include "warpcell/cells.hpp"
#include "warpcell/matching.hpp"
#include "warpcell/rng.hpp"
#include "warpcell/spline.hpp"

namespace warpcell {

namespace {

Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

SuiteCase conv_case(const char* name, Padding padding, Rng& rng) {
  SuiteCase c;
  c.op.name = name;
  c.op.forward = [padding](const std::vector<Tensor>& in) {
    return conv2d(in[0], ConvParams{in[1], in[2]}, padding);
  };
  c.op.vjp = [padding](const std::vector<Tensor>& in, const Tensor& go) {
    Conv2dGrads g = conv2d_vjp(in[0], ConvParams{in[1], in[2]}, padding, go);
    return std::vector<Tensor>{g.input, g.kernel, g.bias};
  };
  c.point = {random_tensor({5, 5, 2}, rng), random_tensor({3, 3, 2, 3}, rng),
             random_tensor({3}, rng)};
  return c;
}

SuiteCase activation_case(const char* name, Activ kind, Rng& rng) {
  SuiteCase c;
  c.op.name = name;
  c.op.forward = [kind](const std::vector<Tensor>& in) { return activation(in[0], kind); };
  c.op.vjp = [kind](const std::vector<Tensor>& in, const Tensor& go) {
    return std::vector<Tensor>{activation_vjp(activation(in[0], kind), kind, go)};
  };
  c.point = {random_tensor({4, 4, 2}, rng)};
  return c;
}

SuiteCase bilinear_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "bilinear_sample";
  auto to_coords = [](const Tensor& t) {
    std::vector<std::array<double, 2>> coords(t.dims[0]);
    for (int i = 0; i < t.dims[0]; ++i) coords[i] = {t.at(i, 0), t.at(i, 1)};
    return coords;
  };
  c.op.forward = [to_coords](const std::vector<Tensor>& in) {
    return bilinear_sample(in[0], to_coords(in[1]));
  };
  c.op.vjp = [to_coords](const std::vector<Tensor>& in, const Tensor& go) {
    BilinearGrads g = bilinear_sample_vjp(in[0], to_coords(in[1]), go);
    Tensor gc = Tensor::zeros({in[1].dims[0], 2});
    for (int i = 0; i < in[1].dims[0]; ++i) {
      gc.at(i, 0) = g.coords[i][0];
      gc.at(i, 1) = g.coords[i][1];
    }
    return std::vector<Tensor>{g.map, gc};
  };
  // fractional parts stay well inside a cell so central differences never
  // straddle the lattice kinks
  Tensor coords = Tensor::zeros({6, 2});
  for (int i = 0; i < 6; ++i) {
    coords.at(i, 0) = rng.uniform_int(0, 3) + rng.uniform(0.25, 0.75);
    coords.at(i, 1) = rng.uniform_int(0, 3) + rng.uniform(0.25, 0.75);
  }
  c.point = {random_tensor({5, 5, 2}, rng), coords};
  return c;
}

std::vector<Point> suite_sites() {
  return {{1.2, 1.1}, {4.3, 1.7}, {2.2, 4.6}, {5.1, 3.9}, {0.8, 3.2}, {3.6, 0.7}};
}

SuiteCase solve_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "solve_interpolant";
  auto to_sites = [](const Tensor& t) {
    std::vector<Point> sites(t.dims[0]);
    for (int i = 0; i < t.dims[0]; ++i) sites[i] = {t.at(i, 0), t.at(i, 1)};
    return sites;
  };
  c.op.forward = [to_sites](const std::vector<Tensor>& in) {
    const std::vector<double> values(in[1].data.begin(), in[1].data.end());
    const SplineInterpolant s = solve_interpolant(to_sites(in[0]), values, 2, 0.0);
    const int n = static_cast<int>(s.rbf_weights.size());
    Tensor out = Tensor::zeros({n + 3});
    for (int i = 0; i < n; ++i) out.at(i) = s.rbf_weights[i];
    for (int k = 0; k < 3; ++k) out.at(n + k) = s.affine[k];
    return out;
  };
  c.op.vjp = [to_sites](const std::vector<Tensor>& in, const Tensor& go) {
    const std::vector<Point> sites = to_sites(in[0]);
    const std::vector<double> values(in[1].data.begin(), in[1].data.end());
    const int n = static_cast<int>(sites.size());
    std::vector<double> gw(go.data.begin(), go.data.begin() + n);
    const std::array<double, 3> ga = {go.at(n), go.at(n + 1), go.at(n + 2)};
    SolveGrads g = solve_interpolant_vjp(sites, values, 2, 0.0, gw, ga);
    Tensor gs = Tensor::zeros({n, 2});
    Tensor gv = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) {
      gs.at(i, 0) = g.sites[i].x;
      gs.at(i, 1) = g.sites[i].y;
      gv.at(i) = g.values[i];
    }
    return std::vector<Tensor>{gs, gv};
  };
  const std::vector<Point> sites = suite_sites();
  Tensor sites_t = Tensor::zeros({static_cast<int>(sites.size()), 2});
  Tensor values_t = Tensor::zeros({static_cast<int>(sites.size())});
  for (std::size_t i = 0; i < sites.size(); ++i) {
    sites_t.at(static_cast<int>(i), 0) = sites[i].x;
    sites_t.at(static_cast<int>(i), 1) = sites[i].y;
    values_t.at(static_cast<int>(i)) = rng.uniform(-2.0, 2.0);
  }
  c.point = {sites_t, values_t};
  c.epsilon = 1e-5;
  return c;
}

SuiteCase eval_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "eval_interpolant";
  const std::vector<Point> queries = {{1.1, 2.3}, {4.4, 0.6}, {3.2, 3.1}};
  auto build = [](const std::vector<Tensor>& in) {
    SplineInterpolant s;
    s.order = 2;
    s.rbf_weights.assign(in[0].data.begin(), in[0].data.end());
    s.affine = {in[1].at(0), in[1].at(1), in[1].at(2)};
    for (int i = 0; i < in[2].dims[0]; ++i) s.sites.push_back({in[2].at(i, 0), in[2].at(i, 1)});
    return s;
  };
  c.op.forward = [queries, build](const std::vector<Tensor>& in) {
    const std::vector<double> vals = eval_interpolant(build(in), queries);
    return Tensor::from_values({static_cast<int>(vals.size())}, vals);
  };
  c.op.vjp = [queries, build](const std::vector<Tensor>& in, const Tensor& go) {
    const std::vector<double> gvals(go.data.begin(), go.data.end());
    EvalGrads g = eval_interpolant_vjp(build(in), queries, gvals);
    const int n = in[2].dims[0];
    Tensor gw = Tensor::from_values({n}, g.weights);
    Tensor ga = Tensor::from_values({3}, {g.affine[0], g.affine[1], g.affine[2]});
    Tensor gs = Tensor::zeros({n, 2});
    for (int i = 0; i < n; ++i) {
      gs.at(i, 0) = g.sites[i].x;
      gs.at(i, 1) = g.sites[i].y;
    }
    return std::vector<Tensor>{gw, ga, gs};
  };
  const std::vector<Point> sites = suite_sites();
  const int n = static_cast<int>(sites.size());
  Tensor sites_t = Tensor::zeros({n, 2});
  for (int i = 0; i < n; ++i) {
    sites_t.at(i, 0) = sites[i].x;
    sites_t.at(i, 1) = sites[i].y;
  }
  c.point = {random_tensor({n}, rng), random_tensor({3}, rng), sites_t};
  return c;
}

SuiteCase sparse_warp_case(const char* name, bool fixed_sites, Rng& rng) {
  SuiteCase c;
  c.op.name = name;
  ControlPointSet base;
  base.interior = {{2.0, 2.0}, {4.0, 2.0}, {2.0, 4.0}, {4.0, 4.0}};
  base.boundary = {{0, 0}, {5, 0}, {0, 5}, {5, 5}, {2.5, 0}, {2.5, 5}, {0, 2.5}, {5, 2.5}};
  c.op.forward = [base, fixed_sites](const std::vector<Tensor>& in) {
    ControlPointSet cps = base;
    for (int i = 0; i < in[1].dims[0]; ++i)
      cps.displacements.push_back({in[1].at(i, 0), in[1].at(i, 1)});
    return sparse_warp(in[0], cps, 2, kDefaultRegularization, fixed_sites);
  };
  c.op.vjp = [base, fixed_sites](const std::vector<Tensor>& in, const Tensor& go) {
    ControlPointSet cps = base;
    for (int i = 0; i < in[1].dims[0]; ++i)
      cps.displacements.push_back({in[1].at(i, 0), in[1].at(i, 1)});
    SparseWarpGrads g = sparse_warp_vjp(in[0], cps, 2, kDefaultRegularization, go, fixed_sites);
    Tensor gd = Tensor::zeros({in[1].dims[0], 2});
    for (int i = 0; i < in[1].dims[0]; ++i) {
      gd.at(i, 0) = g.displacements[i].dx;
      gd.at(i, 1) = g.displacements[i].dy;
    }
    return std::vector<Tensor>{g.map, gd};
  };
  const Tensor disp =
      Tensor::from_values({4, 2}, {0.37, -0.22, -0.41, 0.33, 0.28, 0.44, -0.35, -0.27});
  c.point = {random_tensor({6, 6, 2}, rng), disp};
  return c;
}

SuiteCase roi_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "roi_pool";
  const Box box{0.12, 0.08, 0.81, 0.88};
  c.op.forward = [box](const std::vector<Tensor>& in) { return roi_pool(in[0], box, 3, 4); };
  c.op.vjp = [box](const std::vector<Tensor>& in, const Tensor& go) {
    return std::vector<Tensor>{roi_pool_vjp(in[0], box, 3, 4, go)};
  };
  c.point = {random_tensor({7, 9, 2}, rng)};
  return c;
}

SuiteCase attention_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "attention_pool";
  const int n_clips = 3;
  auto unpack = [n_clips](const std::vector<Tensor>& in, std::vector<Tensor>& clips, Tensor& r,
                          AttentionParams& p) {
    clips.assign(in.begin(), in.begin() + n_clips);
    r = in[n_clips];
    p.w_q = in[n_clips + 1];
    p.w_r = in[n_clips + 2];
    p.w = in[n_clips + 3];
    p.b_p = in[n_clips + 4];
    p.b_s = in[n_clips + 5].at(0);
  };
  c.op.forward = [unpack](const std::vector<Tensor>& in) {
    std::vector<Tensor> clips;
    Tensor r;
    AttentionParams p;
    unpack(in, clips, r, p);
    return attention_pool(clips, r, p);
  };
  c.op.vjp = [unpack](const std::vector<Tensor>& in, const Tensor& go) {
    std::vector<Tensor> clips;
    Tensor r;
    AttentionParams p;
    unpack(in, clips, r, p);
    AttentionGrads g = attention_pool_vjp(clips, r, p, go);
    std::vector<Tensor> out = g.query_feats;
    out.push_back(g.proposal_feat);
    out.push_back(g.params.w_q);
    out.push_back(g.params.w_r);
    out.push_back(g.params.w);
    out.push_back(g.params.b_p);
    Tensor bs({1});
    bs.at(0) = g.params.b_s;
    out.push_back(bs);
    return out;
  };
  const int ch = 4, d = 2;
  for (int j = 0; j < n_clips; ++j) c.point.push_back(random_tensor({3, 3, ch}, rng));
  c.point.push_back(random_tensor({3, 3, ch}, rng));
  c.point.push_back(random_tensor({d, ch}, rng, 0.4));
  c.point.push_back(random_tensor({d, ch}, rng, 0.4));
  c.point.push_back(random_tensor({d}, rng, 0.4));
  c.point.push_back(random_tensor({d}, rng, 0.2));
  Tensor bs({1});
  bs.at(0) = 0.3;
  c.point.push_back(bs);
  return c;
}

SuiteCase correspondence_case(Rng& rng) {
  SuiteCase c;
  c.op.name = "correspondence_head";
  auto build = [](const std::vector<Tensor>& in) {
    CorrespondenceHead h;
    h.conv.kernel = in[2];
    h.conv.bias = in[3];
    h.dense_w = in[4];
    h.dense_b = in[5].at(0);
    return h;
  };
  c.op.forward = [build](const std::vector<Tensor>& in) {
    Tensor out({1});
    out.at(0) = correspondence_score(in[0], in[1], build(in));
    return out;
  };
  c.op.vjp = [build](const std::vector<Tensor>& in, const Tensor& go) {
    CorrespondenceGrads g = correspondence_vjp(in[0], in[1], build(in), go.at(0));
    Tensor db({1});
    db.at(0) = g.head.dense_b;
    return std::vector<Tensor>{g.proposal_feat, g.weighted_query, g.head.conv.kernel,
                               g.head.conv.bias, g.head.dense_w, db};
  };
  const int ch = 2, f = 3;
  Tensor db({1});
  db.at(0) = 0.1;
  c.point = {random_tensor({5, 5, ch}, rng), random_tensor({5, 5, ch}, rng),
             random_tensor({3, 3, 2 * ch, f}, rng, 0.3), random_tensor({f}, rng, 0.2),
             random_tensor({f}, rng, 0.5), db};
  return c;
}

template <typename Params, typename StepFn, typename BackFn>
SuiteCase cell_case(const char* name, const Params& params, StepFn step, BackFn back, Rng& rng) {
  SuiteCase c;
  c.op.name = name;
  c.op.forward = [params, step](const std::vector<Tensor>& in) {
    Params p = params;
    unpack_params(p, in, 3);
    const CellState out = step(p, in[0], CellState{in[1], in[2]});
    return concat_channels(out.h, out.c);
  };
  c.op.vjp = [params, back](const std::vector<Tensor>& in, const Tensor& go) {
    Params p = params;
    unpack_params(p, in, 3);
    const int cb = in[1].dims[2];
    const Tensor gh = channel_slice(go, 0, cb);
    const Tensor gc = channel_slice(go, cb, 2 * cb);
    Params pg = zeroed_like(p);
    Tensor gx = zeros_like(in[0]);
    Tensor ghp = zeros_like(in[1]);
    Tensor gcp = zeros_like(in[2]);
    back(p, in[0], CellState{in[1], in[2]}, gh, gc, &pg, &gx, &ghp, &gcp);
    std::vector<Tensor> grads{std::move(gx), std::move(ghp), std::move(gcp)};
    for (Tensor& t : pack_params(pg)) grads.push_back(std::move(t));
    return grads;
  };
  c.point = {random_tensor({12, 12, 4}, rng, 0.5), random_tensor({12, 12, 4}, rng, 0.5),
             random_tensor({12, 12, 4}, rng, 0.5)};
  Params copy = params;
  for (Tensor& t : pack_params(copy)) c.point.push_back(std::move(t));
  // whole-cell checks need a larger step: finite-difference roundoff through
  // the spline solve dominates below ~1e-5, while an analytic error would not
  // shrink with epsilon
  c.epsilon = 4e-5;
  return c;
}

}  // namespace

std::vector<SuiteCase> default_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteCase> cases;
  cases.push_back(conv_case("conv2d_same", Padding::SameZero, rng));
  cases.push_back(conv_case("conv2d_valid", Padding::Valid, rng));
  cases.push_back(activation_case("sigmoid", Activ::Sigmoid, rng));
  cases.push_back(activation_case("tanh", Activ::Tanh, rng));
  cases.push_back(bilinear_case(rng));
  cases.push_back(solve_case(rng));
  cases.push_back(eval_case(rng));
  cases.push_back(sparse_warp_case("sparse_warp", false, rng));
  cases.push_back(sparse_warp_case("sparse_warp_fixed", true, rng));
  cases.push_back(roi_case(rng));
  cases.push_back(attention_case(rng));
  cases.push_back(correspondence_case(rng));

  ConvLSTMParams conv_p = make_convlstm(3, 4, 4, rng, 0.3);
  cases.push_back(cell_case(
      "convlstm_step", conv_p,
      [](const ConvLSTMParams& p, const Tensor& x, const CellState& s) {
        return convlstm_step(p, x, s);
      },
      [](const ConvLSTMParams& p, const Tensor& x, const CellState& s, const Tensor& gh,
         const Tensor& gc, ConvLSTMParams* pg, Tensor* gx, Tensor* ghp, Tensor* gcp) {
        ConvLSTMCache cache;
        convlstm_step(p, x, s, &cache);
        convlstm_backward(p, cache, gh, gc, pg, gx, ghp, gcp);
      },
      rng));

  WarpLSTMParams warp_p = make_warplstm(3, 4, 4, 3, 3, rng, 0.3);
  for (auto& v : warp_p.disp.w_x.data) v = rng.normal() * 0.05;
  for (auto& v : warp_p.disp.w_h.data) v = rng.normal() * 0.05;
  warp_p.disp.bias = Tensor::from_values({2}, {0.37, -0.23});
  cases.push_back(cell_case(
      "warplstm_step", warp_p,
      [](const WarpLSTMParams& p, const Tensor& x, const CellState& s) {
        return warplstm_step(p, x, s).state;
      },
      [](const WarpLSTMParams& p, const Tensor& x, const CellState& s, const Tensor& gh,
         const Tensor& gc, WarpLSTMParams* pg, Tensor* gx, Tensor* ghp, Tensor* gcp) {
        WarpLSTMCache cache;
        warplstm_step(p, x, s, &cache);
        warplstm_backward(p, cache, gh, gc, nullptr, pg, gx, ghp, gcp);
      },
      rng));

  TrajLSTMParams traj_p = make_trajlstm(3, 4, 4, 3, rng, 0.3);
  for (auto& v : traj_p.flow_conv.kernel.data) v = rng.normal() * 0.05;
  for (auto& v : traj_p.aggregate.kernel.data) v += rng.normal() * 0.1;
  for (auto& v : traj_p.flow_conv.bias.data) v = 0.3 + 0.1 * rng.uniform();
  cases.push_back(cell_case(
      "trajlstm_step", traj_p,
      [](const TrajLSTMParams& p, const Tensor& x, const CellState& s) {
        return trajlstm_step(p, x, s);
      },
      [](const TrajLSTMParams& p, const Tensor& x, const CellState& s, const Tensor& gh,
         const Tensor& gc, TrajLSTMParams* pg, Tensor* gx, Tensor* ghp, Tensor* gcp) {
        TrajLSTMCache cache;
        trajlstm_step(p, x, s, &cache);
        trajlstm_backward(p, cache, gh, gc, pg, gx, ghp, gcp);
      },
      rng));

  return cases;
}

SuiteReport run_suite(const std::vector<SuiteCase>& cases, std::uint64_t seed) {
  SuiteReport report;
  report.pass = true;
  for (const SuiteCase& c : cases) {
    const auto started = std::chrono::steady_clock::now();
    const GradReport r = finite_diff_check(c.op, c.point, c.epsilon, seed);
    SuiteEntry entry;
    entry.name = c.op.name;
    entry.max_rel_error = r.max_rel_error;
    entry.argument_index = r.argument_index;
    entry.tolerance = c.tolerance;
    entry.pass = r.max_rel_error <= c.tolerance;
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.worst = std::max(report.worst, entry.max_rel_error);
    if (!entry.pass) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace warpcell
