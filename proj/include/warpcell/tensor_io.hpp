#pragma once

#include <string>

#include "warpcell/tensor.hpp"

namespace warpcell {

/// Tensor fixture/checkpoint format (.ten): a text manifest line
/// "dims: d0 d1 ... dk\n" followed by a little-endian blob of
/// product(dims) 64-bit floats.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

}  // namespace warpcell
