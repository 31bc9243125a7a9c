#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "warpcell/gradcheck.hpp"

namespace warpcell {

struct SuiteCase {
  DiffOp op;
  std::vector<Tensor> point;
  double epsilon = 1e-6;
  double tolerance = 1e-5;
};

/// Every differentiable operation plus the three recurrent cells, at small
/// fixed shapes. Points are drawn deterministically from `seed`.
std::vector<SuiteCase> default_suite(std::uint64_t seed);

struct SuiteEntry {
  std::string name;
  double max_rel_error = 0.0;
  int argument_index = -1;
  double tolerance = 1e-5;
  bool pass = false;
  double seconds = 0.0;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  double worst = 0.0;
  bool pass = false;  // every entry within its tolerance
};

SuiteReport run_suite(const std::vector<SuiteCase>& cases, std::uint64_t seed);

}  // namespace warpcell
