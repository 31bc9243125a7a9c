#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "warpcell/tensor.hpp"

namespace warpcell {

struct GradReport {
  std::string op_name;
  double max_rel_error = 0.0;
  int argument_index = -1;  // argument holding the worst component
};

/// A differentiable operation under test: a forward map from argument tensors
/// to one output tensor, and the matching vector-Jacobian product returning
/// one cotangent per argument. Fixed configuration (padding modes, spline
/// order, ...) is captured inside the closures.
struct DiffOp {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> vjp;
};

/// Central-difference check of the analytic VJP at `point`. A random probe
/// direction u (drawn from `seed`) is dotted with the output; the directional
/// derivative of that scalar w.r.t. every input component is compared against
/// the analytic value. Relative error denominator is max(|a|, |n|, 1e-8).
/// Throws if either side is non-finite, naming the argument.
GradReport finite_diff_check(const DiffOp& op, const std::vector<Tensor>& point, double epsilon,
                             std::uint64_t seed);

}  // namespace warpcell
