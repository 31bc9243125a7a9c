#pragma once

#include <array>
#include <string>
#include <vector>

#include "warpcell/tensor.hpp"

namespace warpcell {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// 2-D displacement in (dx, dy) order.
struct Disp {
  double dx = 0.0;
  double dy = 0.0;
};

/// Interior control points carry predicted displacements; boundary points are
/// pinned to zero displacement and only stabilize the interpolation near the
/// map edges.
struct ControlPointSet {
  std::vector<Point> interior;
  std::vector<Point> boundary;
  std::vector<Disp> displacements;  // one per interior point
};

/// Solved polyharmonic interpolant
///   s(x, y) = sum_i w_i phi_k(||(x,y) - site_i||) + v1*x + v2*y + v3
/// with side conditions sum w = sum w*x = sum w*y = 0.
struct SplineInterpolant {
  std::vector<Point> sites;
  std::vector<double> rbf_weights;
  std::array<double, 3> affine = {0.0, 0.0, 0.0};  // v1, v2, v3
  int order = 2;
};

/// Dense per-pixel displacement field, [H, W, 2] with channel 0 = dy and
/// channel 1 = dx.
struct FlowField {
  Tensor flow;
};

/// phi_1(r) = r; phi_2(r) = r^2 log r, evaluated as 0.5 r^2 log(r^2) with
/// phi_2(0) = 0. Other orders are rejected.
double rbf(double r, int order);

/// d phi_k(||delta||) / d delta. Zero at delta = 0.
Point rbf_grad(Point delta, int order);

/// Fits the interpolant through (sites, values) by solving the symmetric
/// block system [[A + lambda I, B], [B^T, 0]] [w; v] = [values; 0] with dense
/// LU and partial pivoting. With lambda = 0 the fit is exact at the sites.
SplineInterpolant solve_interpolant(const std::vector<Point>& sites,
                                    const std::vector<double>& values, int order,
                                    double regularization);

std::vector<double> eval_interpolant(const SplineInterpolant& interp,
                                     const std::vector<Point>& queries);

struct SolveGrads {
  std::vector<Point> sites;
  std::vector<double> values;
};
/// Adjoint of the fit: cotangents of (rbf_weights, affine) back to (sites,
/// values). Uses a transposed solve of the same system; the matrix sensitivity
/// is the outer product of the adjoint and the solution.
SolveGrads solve_interpolant_vjp(const std::vector<Point>& sites,
                                 const std::vector<double>& values, int order,
                                 double regularization, const std::vector<double>& grad_weights,
                                 const std::array<double, 3>& grad_affine);

struct EvalGrads {
  std::vector<double> weights;
  std::array<double, 3> affine = {0.0, 0.0, 0.0};
  std::vector<Point> sites;
};
EvalGrads eval_interpolant_vjp(const SplineInterpolant& interp, const std::vector<Point>& queries,
                               const std::vector<double>& grad_values);

/// Interpolates the control-point displacements into a dense flow field.
/// Data sites sit at the destination locations (source + displacement) so the
/// field reproduces each displacement exactly at its destination; boundary
/// points contribute zeros at their fixed locations. `fixed_sites` switches to
/// the cheaper approximation with sites at the source locations.
FlowField dense_flow(const ControlPointSet& cps, int height, int width, int order,
                     double regularization, bool fixed_sites = false);

/// Adjoint of `dense_flow`: cotangent of the flow field back to the control
/// displacements, with the fit and the grid evaluation chained together.
std::vector<Disp> dense_flow_vjp(const ControlPointSet& cps, int order, double regularization,
                                 const Tensor& grad_flow, bool fixed_sites = false);

/// Backward warp of an [H, W, C] map by the flow of `cps`:
///   out[y, x] = bilinear_sample(map, (y, x) - flow(y, x)).
/// Out-of-map samples read zero.
Tensor sparse_warp(const Tensor& map, const ControlPointSet& cps, int order,
                   double regularization, bool fixed_sites = false);

struct SparseWarpGrads {
  Tensor map;
  std::vector<Disp> displacements;
};
SparseWarpGrads sparse_warp_vjp(const Tensor& map, const ControlPointSet& cps, int order,
                                double regularization, const Tensor& grad_out,
                                bool fixed_sites = false);

/// Backward warp by an explicit flow field (shared by the TrajLSTM links and
/// the ground-truth-flow baseline).
Tensor warp_by_flow(const Tensor& map, const Tensor& flow);
void warp_by_flow_vjp_accumulate(const Tensor& map, const Tensor& flow, const Tensor& grad_out,
                                 Tensor* grad_map, Tensor* grad_flow);

/// Interior points at the intersections of `lines_y` horizontal and `lines_x`
/// vertical grid lines (line i of n sits at (extent * i) / (n + 1), integer
/// division), row-major by (y, x), zero displacements; boundary points at the
/// four corners and four edge midpoints. A 20x20 map with 3+3 lines yields
/// interior {5,10,15} x {5,10,15}. Errors if a line would land on the border.
ControlPointSet make_control_grid(int height, int width, int lines_y, int lines_x);

/// Text serialization, one point per line: "x y dx dy kind" with kind in
/// {interior, boundary}.
std::string control_points_to_text(const ControlPointSet& cps);
ControlPointSet control_points_from_text(const std::string& text);

constexpr double kDefaultRegularization = 1e-10;

}  // namespace warpcell
