#pragma once

#include <string>
#include <utility>
#include <vector>

#include "docie/numkit.hpp"

namespace docie::checkpoint {

// Flat name -> tensor map, preserving insertion order.
using ParamMap = std::vector<std::pair<std::string, numkit::Tensor>>;

// Binary container: 4-byte magic "TRK1", then a little-endian u64 body length,
// then per entry: u32 name length, name bytes, u32 rank, u32 extents,
// little-endian 64-bit float payload.
void save(const std::string& path, const ParamMap& params);
ParamMap load(const std::string& path);

// Copies values from `from` into matching tensors of `into` (by name; shapes
// must agree). Throws on missing names or shape mismatch.
void restore_into(const ParamMap& from, ParamMap& into);

}  // namespace docie::checkpoint
