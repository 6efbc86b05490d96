#pragma once

#include <map>
#include <string>

#include "cq/tensor.hpp"

namespace cq {

// Named tensors in deterministic (lexicographic) order.
using TensorMap = std::map<std::string, Tensor>;

// Little-endian container: magic "CQT1", tensor count (u64), then per
// tensor: name length (u32) + UTF-8 name, rank (u32), extents (u64 each),
// raw 32-bit floats.
void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

}  // namespace cq
