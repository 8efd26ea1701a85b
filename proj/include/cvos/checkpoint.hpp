#pragma once

#include <map>
#include <string>

#include "cvos/tensor.hpp"

namespace cvos {

// Checkpoint container format, little-endian throughout:
//   magic "CVOS" | u32 version (=1) | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 extents[rank]
//               | f64 values[numel]
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace cvos
