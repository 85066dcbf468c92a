#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdeh/tensor.hpp"

namespace mdeh {

/// Binary tensor container ("DHT1"): magic, u32 tensor count, then per tensor
/// a u16-length UTF-8 name, u32 rank, u32 dims and the little-endian f32
/// payload. Round trips are bit-exact.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_tensor_container(const std::string& path, const NamedTensors& tensors);
NamedTensors read_tensor_container(const std::string& path);

/// Lookup helper; throws when the name is missing.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace mdeh
