#include "warpcell/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "warpcell/rng.hpp"

namespace warpcell {

GradReport finite_diff_check(const DiffOp& op, const std::vector<Tensor>& point, double epsilon,
                             std::uint64_t seed) {
  if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_check: epsilon must be > 0");
  if (!op.forward || !op.vjp) throw std::invalid_argument("finite_diff_check: op not fully defined");

  const Tensor out0 = op.forward(point);
  Rng rng(seed);
  Tensor probe = zeros_like(out0);
  for (double& v : probe.data) v = rng.normal();

  const std::vector<Tensor> analytic = op.vjp(point, probe);
  if (analytic.size() != point.size()) {
    throw std::invalid_argument("finite_diff_check: vjp returned " +
                                std::to_string(analytic.size()) + " cotangents for " +
                                std::to_string(point.size()) + " arguments");
  }

  GradReport report;
  report.op_name = op.name;
  report.max_rel_error = 0.0;
  report.argument_index = point.empty() ? -1 : 0;

  std::vector<Tensor> work = point;
  for (std::size_t arg = 0; arg < point.size(); ++arg) {
    if (!analytic[arg].same_shape(point[arg])) {
      throw std::invalid_argument("finite_diff_check(" + op.name + "): cotangent for argument " +
                                  std::to_string(arg) + " has shape " +
                                  analytic[arg].shape_string() + ", expected " +
                                  point[arg].shape_string());
    }
    if (!all_finite(analytic[arg])) {
      throw std::runtime_error("finite_diff_check(" + op.name +
                               "): non-finite analytic gradient for argument " +
                               std::to_string(arg));
    }
    for (std::int64_t i = 0; i < point[arg].numel(); ++i) {
      const double saved = work[arg][i];
      work[arg][i] = saved + epsilon;
      const double up = dot(op.forward(work), probe);
      work[arg][i] = saved - epsilon;
      const double down = dot(op.forward(work), probe);
      work[arg][i] = saved;

      const double numeric = (up - down) / (2.0 * epsilon);
      if (!std::isfinite(numeric)) {
        throw std::runtime_error("finite_diff_check(" + op.name +
                                 "): non-finite numeric gradient for argument " +
                                 std::to_string(arg));
      }
      const double a = analytic[arg][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.argument_index = static_cast<int>(arg);
      }
    }
  }
  return report;
}

}  // namespace warpcell
