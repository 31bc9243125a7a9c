#include "warpcell/spline.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace warpcell {

double rbf(double r, int order) {
  if (r < 0.0) throw std::invalid_argument("rbf: radius must be >= 0");
  if (order == 1) return r;
  if (order == 2) {
    const double r2 = r * r;
    return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
  }
  throw std::invalid_argument("rbf: unsupported order " + std::to_string(order));
}

Point rbf_grad(Point delta, int order) {
  const double r2 = delta.x * delta.x + delta.y * delta.y;
  if (r2 <= 0.0) return {0.0, 0.0};
  if (order == 1) {
    const double inv_r = 1.0 / std::sqrt(r2);
    return {delta.x * inv_r, delta.y * inv_r};
  }
  if (order == 2) {
    // d/d delta of 0.5 r^2 log(r^2) = delta * (log(r^2) + 1)
    const double s = std::log(r2) + 1.0;
    return {delta.x * s, delta.y * s};
  }
  throw std::invalid_argument("rbf_grad: unsupported order " + std::to_string(order));
}

// ---------------------------------------------------------------------------
// dense LU with partial pivoting

namespace {

class LuMatrix {
 public:
  LuMatrix(int n, std::vector<double> a) : n_(n), lu_(std::move(a)), swaps_(n) {
    double scale = 0.0;
    for (double v : lu_) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;
    for (int k = 0; k < n_; ++k) {
      int pivot = k;
      double best = std::abs(lu_[idx(k, k)]);
      for (int r = k + 1; r < n_; ++r) {
        const double v = std::abs(lu_[idx(r, k)]);
        if (v > best) {
          best = v;
          pivot = r;
        }
      }
      if (best < 1e-13 * scale) throw std::runtime_error("singular system");
      swaps_[k] = pivot;
      if (pivot != k) {
        for (int c = 0; c < n_; ++c) std::swap(lu_[idx(k, c)], lu_[idx(pivot, c)]);
      }
      const double inv_piv = 1.0 / lu_[idx(k, k)];
      for (int r = k + 1; r < n_; ++r) {
        const double m = lu_[idx(r, k)] * inv_piv;
        lu_[idx(r, k)] = m;
        for (int c = k + 1; c < n_; ++c) lu_[idx(r, c)] -= m * lu_[idx(k, c)];
      }
    }
  }

  // x = A^-1 b
  std::vector<double> solve(std::vector<double> b) const {
    for (int k = 0; k < n_; ++k) {
      if (swaps_[k] != k) std::swap(b[k], b[swaps_[k]]);
    }
    for (int r = 1; r < n_; ++r) {
      double acc = b[r];
      for (int c = 0; c < r; ++c) acc -= lu_[idx(r, c)] * b[c];
      b[r] = acc;
    }
    for (int r = n_ - 1; r >= 0; --r) {
      double acc = b[r];
      for (int c = r + 1; c < n_; ++c) acc -= lu_[idx(r, c)] * b[c];
      b[r] = acc / lu_[idx(r, r)];
    }
    return b;
  }

  // y = A^-T c; with PA = LU this is U^T z = c, L^T v = z, y = P^-1 v.
  std::vector<double> solve_transposed(std::vector<double> c) const {
    for (int r = 0; r < n_; ++r) {
      double acc = c[r];
      for (int k = 0; k < r; ++k) acc -= lu_[idx(k, r)] * c[k];
      c[r] = acc / lu_[idx(r, r)];
    }
    for (int r = n_ - 1; r >= 0; --r) {
      double acc = c[r];
      for (int k = r + 1; k < n_; ++k) acc -= lu_[idx(k, r)] * c[k];
      c[r] = acc;
    }
    for (int k = n_ - 1; k >= 0; --k) {
      if (swaps_[k] != k) std::swap(c[k], c[swaps_[k]]);
    }
    return c;
  }

 private:
  std::size_t idx(int r, int c) const { return static_cast<std::size_t>(r) * n_ + c; }

  int n_;
  std::vector<double> lu_;
  std::vector<int> swaps_;
};

double dist(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void validate_sites(const std::vector<Point>& sites) {
  const int n = static_cast<int>(sites.size());
  if (n < 3) throw std::invalid_argument("solve_interpolant: need at least 3 sites");
  for (const Point& p : sites) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::invalid_argument("solve_interpolant: non-finite site");
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (dist(sites[i], sites[j]) < 1e-12) {
        throw std::invalid_argument("solve_interpolant: duplicate sites " + std::to_string(i) +
                                    " and " + std::to_string(j));
      }
    }
  }
  // farthest point from site 0 spans the set; all perpendicular distances to
  // that line being ~0 means the affine block is rank-deficient
  int far = 1;
  double span = 0.0;
  for (int i = 1; i < n; ++i) {
    const double d = dist(sites[0], sites[i]);
    if (d > span) {
      span = d;
      far = i;
    }
  }
  const double ax = sites[far].x - sites[0].x;
  const double ay = sites[far].y - sites[0].y;
  double max_perp = 0.0;
  for (int i = 1; i < n; ++i) {
    const double bx = sites[i].x - sites[0].x;
    const double by = sites[i].y - sites[0].y;
    max_perp = std::max(max_perp, std::abs(ax * by - ay * bx) / span);
  }
  if (max_perp < 1e-9 * span) throw std::invalid_argument("solve_interpolant: collinear sites");
}

std::vector<double> assemble_system(const std::vector<Point>& sites, int order,
                                    double regularization) {
  const int n = static_cast<int>(sites.size());
  const int m = n + 3;
  std::vector<double> mat(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double v = rbf(dist(sites[i], sites[j]), order);
      if (i == j) v += regularization;
      mat[static_cast<std::size_t>(i) * m + j] = v;
    }
    mat[static_cast<std::size_t>(i) * m + n + 0] = sites[i].x;
    mat[static_cast<std::size_t>(i) * m + n + 1] = sites[i].y;
    mat[static_cast<std::size_t>(i) * m + n + 2] = 1.0;
    mat[static_cast<std::size_t>(n + 0) * m + i] = sites[i].x;
    mat[static_cast<std::size_t>(n + 1) * m + i] = sites[i].y;
    mat[static_cast<std::size_t>(n + 2) * m + i] = 1.0;
  }
  return mat;
}

}  // namespace

SplineInterpolant solve_interpolant(const std::vector<Point>& sites,
                                    const std::vector<double>& values, int order,
                                    double regularization) {
  if (sites.size() != values.size()) {
    throw std::invalid_argument("solve_interpolant: " + std::to_string(sites.size()) +
                                " sites but " + std::to_string(values.size()) + " values");
  }
  if (regularization < 0.0) throw std::invalid_argument("solve_interpolant: regularization < 0");
  if (order != 1 && order != 2) {
    throw std::invalid_argument("solve_interpolant: unsupported order " + std::to_string(order));
  }
  validate_sites(sites);

  const int n = static_cast<int>(sites.size());
  const int m = n + 3;
  LuMatrix lu(m, assemble_system(sites, order, regularization));
  std::vector<double> rhs(m, 0.0);
  for (int i = 0; i < n; ++i) rhs[i] = values[i];
  const std::vector<double> z = lu.solve(std::move(rhs));

  SplineInterpolant interp;
  interp.sites = sites;
  interp.rbf_weights.assign(z.begin(), z.begin() + n);
  interp.affine = {z[n], z[n + 1], z[n + 2]};
  interp.order = order;
  return interp;
}

std::vector<double> eval_interpolant(const SplineInterpolant& interp,
                                     const std::vector<Point>& queries) {
  const int n = static_cast<int>(interp.sites.size());
  std::vector<double> out(queries.size(), 0.0);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += interp.rbf_weights[i] * rbf(dist(queries[q], interp.sites[i]), interp.order);
    }
    acc += interp.affine[0] * queries[q].x + interp.affine[1] * queries[q].y + interp.affine[2];
    out[q] = acc;
  }
  return out;
}

SolveGrads solve_interpolant_vjp(const std::vector<Point>& sites,
                                 const std::vector<double>& values, int order,
                                 double regularization, const std::vector<double>& grad_weights,
                                 const std::array<double, 3>& grad_affine) {
  const int n = static_cast<int>(sites.size());
  const int m = n + 3;
  if (static_cast<int>(grad_weights.size()) != n) {
    throw std::invalid_argument("solve_interpolant_vjp: grad_weights size mismatch");
  }
  LuMatrix lu(m, assemble_system(sites, order, regularization));
  std::vector<double> rhs(m, 0.0);
  for (int i = 0; i < n; ++i) rhs[i] = values[i];
  const std::vector<double> z = lu.solve(std::move(rhs));

  std::vector<double> zbar(m, 0.0);
  for (int i = 0; i < n; ++i) zbar[i] = grad_weights[i];
  for (int c = 0; c < 3; ++c) zbar[n + c] = grad_affine[c];
  const std::vector<double> adj = lu.solve_transposed(std::move(zbar));

  SolveGrads g;
  g.values.assign(adj.begin(), adj.begin() + n);
  g.sites.assign(n, Point{0.0, 0.0});

  // matrix sensitivity: Mbar(i, j) = -adj[i] * z[j], chained into the sites
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double coef = -adj[i] * z[j];
      if (coef == 0.0) continue;
      const Point gr = rbf_grad({sites[i].x - sites[j].x, sites[i].y - sites[j].y}, order);
      g.sites[i].x += coef * gr.x;
      g.sites[i].y += coef * gr.y;
      g.sites[j].x -= coef * gr.x;
      g.sites[j].y -= coef * gr.y;
    }
  }
  for (int i = 0; i < n; ++i) {
    g.sites[i].x += -adj[i] * z[n + 0] + -adj[n + 0] * z[i];
    g.sites[i].y += -adj[i] * z[n + 1] + -adj[n + 1] * z[i];
  }
  return g;
}

EvalGrads eval_interpolant_vjp(const SplineInterpolant& interp, const std::vector<Point>& queries,
                               const std::vector<double>& grad_values) {
  const int n = static_cast<int>(interp.sites.size());
  if (grad_values.size() != queries.size()) {
    throw std::invalid_argument("eval_interpolant_vjp: grad size mismatch");
  }
  EvalGrads g;
  g.weights.assign(n, 0.0);
  g.sites.assign(n, Point{0.0, 0.0});
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const double gv = grad_values[q];
    if (gv == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      const Point delta{interp.sites[i].x - queries[q].x, interp.sites[i].y - queries[q].y};
      g.weights[i] += gv * rbf(std::hypot(delta.x, delta.y), interp.order);
      const Point gr = rbf_grad(delta, interp.order);
      g.sites[i].x += gv * interp.rbf_weights[i] * gr.x;
      g.sites[i].y += gv * interp.rbf_weights[i] * gr.y;
    }
    g.affine[0] += gv * queries[q].x;
    g.affine[1] += gv * queries[q].y;
    g.affine[2] += gv;
  }
  return g;
}

// ---------------------------------------------------------------------------
// dense flow + sparse warp

namespace {

struct FlowSetup {
  std::vector<Point> sites;
  std::vector<double> values_dx;
  std::vector<double> values_dy;
};

FlowSetup flow_setup(const ControlPointSet& cps, bool fixed_sites) {
  if (cps.displacements.size() != cps.interior.size()) {
    throw std::invalid_argument("control point set: " + std::to_string(cps.interior.size()) +
                                " interior points but " + std::to_string(cps.displacements.size()) +
                                " displacements");
  }
  FlowSetup s;
  const int n = static_cast<int>(cps.interior.size());
  s.sites.reserve(n + cps.boundary.size());
  s.values_dx.reserve(n + cps.boundary.size());
  s.values_dy.reserve(n + cps.boundary.size());
  for (int i = 0; i < n; ++i) {
    Point site = cps.interior[i];
    if (!fixed_sites) {
      site.x += cps.displacements[i].dx;
      site.y += cps.displacements[i].dy;
    }
    if (!std::isfinite(site.x) || !std::isfinite(site.y)) {
      throw std::invalid_argument("control point set: non-finite destination");
    }
    s.sites.push_back(site);
    s.values_dx.push_back(cps.displacements[i].dx);
    s.values_dy.push_back(cps.displacements[i].dy);
  }
  for (const Point& p : cps.boundary) {
    s.sites.push_back(p);
    s.values_dx.push_back(0.0);
    s.values_dy.push_back(0.0);
  }
  return s;
}

// Both flow channels share the sites, so one distance (and one log) per
// (pixel, site) pair serves dx and dy together. Per channel the additions run
// site-ascending then affine, as in eval_interpolant.
void eval_flow_grid(const SplineInterpolant& ix, const SplineInterpolant& iy, int height,
                    int width, Tensor* flow) {
  const int n = static_cast<int>(ix.sites.size());
  double* out = flow->data.data();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x, out += 2) {
      double acc_dx = 0.0, acc_dy = 0.0;
      for (int i = 0; i < n; ++i) {
        const double ddx = ix.sites[i].x - x;
        const double ddy = ix.sites[i].y - y;
        const double r2 = ddx * ddx + ddy * ddy;
        double phi = 0.0;
        if (r2 > 0.0) phi = ix.order == 2 ? 0.5 * r2 * std::log(r2) : std::sqrt(r2);
        acc_dx += ix.rbf_weights[i] * phi;
        acc_dy += iy.rbf_weights[i] * phi;
      }
      acc_dx += ix.affine[0] * x + ix.affine[1] * y + ix.affine[2];
      acc_dy += iy.affine[0] * x + iy.affine[1] * y + iy.affine[2];
      out[0] = acc_dy;
      out[1] = acc_dx;
    }
  }
}

struct FlowGridVjp {
  std::vector<double> w_dx, w_dy;
  std::array<double, 3> a_dx = {0.0, 0.0, 0.0}, a_dy = {0.0, 0.0, 0.0};
  std::vector<Point> sites;  // both channels combined
};

FlowGridVjp eval_flow_grid_vjp(const SplineInterpolant& ix, const SplineInterpolant& iy,
                               const Tensor& grad_flow) {
  const int h = grad_flow.dims[0], w = grad_flow.dims[1];
  const int n = static_cast<int>(ix.sites.size());
  FlowGridVjp g;
  g.w_dx.assign(n, 0.0);
  g.w_dy.assign(n, 0.0);
  g.sites.assign(n, Point{0.0, 0.0});
  const double* gf = grad_flow.data.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x, gf += 2) {
      const double gdy = gf[0], gdx = gf[1];
      if (gdx == 0.0 && gdy == 0.0) continue;
      for (int i = 0; i < n; ++i) {
        const double ddx = ix.sites[i].x - x;
        const double ddy = ix.sites[i].y - y;
        const double r2 = ddx * ddx + ddy * ddy;
        double phi = 0.0, slope = 0.0;  // d phi / d delta = delta * slope
        if (r2 > 0.0) {
          if (ix.order == 2) {
            const double lr2 = std::log(r2);
            phi = 0.5 * r2 * lr2;
            slope = lr2 + 1.0;
          } else {
            phi = std::sqrt(r2);
            slope = 1.0 / phi;
          }
        }
        g.w_dx[i] += gdx * phi;
        g.w_dy[i] += gdy * phi;
        const double m = (gdx * ix.rbf_weights[i] + gdy * iy.rbf_weights[i]) * slope;
        g.sites[i].x += m * ddx;
        g.sites[i].y += m * ddy;
      }
      g.a_dx[0] += gdx * x;
      g.a_dx[1] += gdx * y;
      g.a_dx[2] += gdx;
      g.a_dy[0] += gdy * x;
      g.a_dy[1] += gdy * y;
      g.a_dy[2] += gdy;
    }
  }
  return g;
}

}  // namespace

FlowField dense_flow(const ControlPointSet& cps, int height, int width, int order,
                     double regularization, bool fixed_sites) {
  const FlowSetup s = flow_setup(cps, fixed_sites);
  const SplineInterpolant interp_dx = solve_interpolant(s.sites, s.values_dx, order, regularization);
  const SplineInterpolant interp_dy = solve_interpolant(s.sites, s.values_dy, order, regularization);

  FlowField f;
  f.flow = Tensor({height, width, 2});
  eval_flow_grid(interp_dx, interp_dy, height, width, &f.flow);
  return f;
}

std::vector<Disp> dense_flow_vjp(const ControlPointSet& cps, int order, double regularization,
                                 const Tensor& grad_flow, bool fixed_sites) {
  if (grad_flow.rank() != 3 || grad_flow.dims[2] != 2) {
    throw std::invalid_argument("dense_flow_vjp: grad_flow must be [H, W, 2]");
  }
  const FlowSetup s = flow_setup(cps, fixed_sites);
  const SplineInterpolant interp_dx = solve_interpolant(s.sites, s.values_dx, order, regularization);
  const SplineInterpolant interp_dy = solve_interpolant(s.sites, s.values_dy, order, regularization);

  const FlowGridVjp eg = eval_flow_grid_vjp(interp_dx, interp_dy, grad_flow);
  const SolveGrads sg_dx =
      solve_interpolant_vjp(s.sites, s.values_dx, order, regularization, eg.w_dx, eg.a_dx);
  const SolveGrads sg_dy =
      solve_interpolant_vjp(s.sites, s.values_dy, order, regularization, eg.w_dy, eg.a_dy);

  const int n = static_cast<int>(cps.interior.size());
  std::vector<Disp> g(n, Disp{0.0, 0.0});
  for (int i = 0; i < n; ++i) {
    double site_x = eg.sites[i].x + sg_dx.sites[i].x + sg_dy.sites[i].x;
    double site_y = eg.sites[i].y + sg_dx.sites[i].y + sg_dy.sites[i].y;
    if (fixed_sites) {
      site_x = 0.0;
      site_y = 0.0;
    }
    g[i].dx = sg_dx.values[i] + site_x;
    g[i].dy = sg_dy.values[i] + site_y;
  }
  return g;
}

Tensor warp_by_flow(const Tensor& map, const Tensor& flow) {
  if (map.rank() != 3) throw std::invalid_argument("warp_by_flow: map must be [H, W, C]");
  if (flow.rank() != 3 || flow.dims[0] != map.dims[0] || flow.dims[1] != map.dims[1] ||
      flow.dims[2] != 2) {
    throw std::invalid_argument("warp_by_flow: flow must be [H, W, 2] matching the map");
  }
  const int h = map.dims[0], w = map.dims[1];
  std::vector<std::array<double, 2>> coords;
  coords.reserve(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      coords.push_back({static_cast<double>(y) - flow.at(y, x, 0),
                        static_cast<double>(x) - flow.at(y, x, 1)});
    }
  }
  Tensor out = bilinear_sample(map, coords);
  out.dims = {h, w, map.dims[2]};
  return out;
}

void warp_by_flow_vjp_accumulate(const Tensor& map, const Tensor& flow, const Tensor& grad_out,
                                 Tensor* grad_map, Tensor* grad_flow) {
  const int h = map.dims[0], w = map.dims[1], c = map.dims[2];
  std::vector<std::array<double, 2>> coords;
  coords.reserve(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      coords.push_back({static_cast<double>(y) - flow.at(y, x, 0),
                        static_cast<double>(x) - flow.at(y, x, 1)});
    }
  }
  Tensor go = grad_out;
  go.dims = {h * w, c};
  std::vector<std::array<double, 2>> grad_coords(coords.size(), {0.0, 0.0});
  bilinear_sample_vjp_accumulate(map, coords, go, grad_map, &grad_coords);
  if (grad_flow) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        grad_flow->at(y, x, 0) += -grad_coords[i][0];
        grad_flow->at(y, x, 1) += -grad_coords[i][1];
      }
    }
  }
}

Tensor sparse_warp(const Tensor& map, const ControlPointSet& cps, int order,
                   double regularization, bool fixed_sites) {
  const FlowField f = dense_flow(cps, map.dims[0], map.dims[1], order, regularization, fixed_sites);
  return warp_by_flow(map, f.flow);
}

SparseWarpGrads sparse_warp_vjp(const Tensor& map, const ControlPointSet& cps, int order,
                                double regularization, const Tensor& grad_out, bool fixed_sites) {
  const int h = map.dims[0], w = map.dims[1];
  const FlowField f = dense_flow(cps, h, w, order, regularization, fixed_sites);

  SparseWarpGrads g;
  g.map = zeros_like(map);
  Tensor grad_flow({h, w, 2});
  warp_by_flow_vjp_accumulate(map, f.flow, grad_out, &g.map, &grad_flow);
  g.displacements = dense_flow_vjp(cps, order, regularization, grad_flow, fixed_sites);
  return g;
}

ControlPointSet make_control_grid(int height, int width, int lines_y, int lines_x) {
  if (lines_y < 1 || lines_x < 1) {
    throw std::invalid_argument("make_control_grid: need at least one line per axis");
  }
  auto line_positions = [](int extent, int lines) {
    std::vector<int> pos(lines);
    for (int i = 1; i <= lines; ++i) {
      const int p = (extent * i) / (lines + 1);
      if (p < 1 || p > extent - 2 || (i > 1 && p == pos[i - 2])) {
        throw std::invalid_argument("make_control_grid: " + std::to_string(lines) +
                                    " lines do not fit in extent " + std::to_string(extent));
      }
      pos[i - 1] = p;
    }
    return pos;
  };
  const std::vector<int> ys = line_positions(height, lines_y);
  const std::vector<int> xs = line_positions(width, lines_x);

  ControlPointSet cps;
  for (int y : ys)
    for (int x : xs) cps.interior.push_back({static_cast<double>(x), static_cast<double>(y)});
  cps.displacements.assign(cps.interior.size(), Disp{0.0, 0.0});

  const double xm = (width - 1) / 2.0, ym = (height - 1) / 2.0;
  const double xe = width - 1.0, ye = height - 1.0;
  cps.boundary = {{0.0, 0.0}, {xe, 0.0}, {0.0, ye}, {xe, ye},
                  {xm, 0.0},  {xm, ye},  {0.0, ym}, {xe, ym}};
  return cps;
}

// ---------------------------------------------------------------------------
// serialization

std::string control_points_to_text(const ControlPointSet& cps) {
  std::ostringstream os;
  char buf[160];
  for (std::size_t i = 0; i < cps.interior.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g interior\n", cps.interior[i].x,
                  cps.interior[i].y, cps.displacements[i].dx, cps.displacements[i].dy);
    os << buf;
  }
  for (const Point& p : cps.boundary) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g 0 0 boundary\n", p.x, p.y);
    os << buf;
  }
  return os.str();
}

ControlPointSet control_points_from_text(const std::string& text) {
  ControlPointSet cps;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    double x, y, dx, dy;
    std::string kind;
    if (!(ls >> x >> y >> dx >> dy >> kind)) {
      throw std::runtime_error("control points: malformed line " + std::to_string(line_no));
    }
    if (kind == "interior") {
      cps.interior.push_back({x, y});
      cps.displacements.push_back({dx, dy});
    } else if (kind == "boundary") {
      cps.boundary.push_back({x, y});
    } else {
      throw std::runtime_error("control points: unknown kind '" + kind + "' at line " +
                               std::to_string(line_no));
    }
  }
  return cps;
}

}  // namespace warpcell
