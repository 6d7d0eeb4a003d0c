#pragma once

#include "rfo/net.hpp"

#include <string>

namespace rfo {

/// Flat binary container of named tensors.
/// Layout: magic "RFO1", u32 version, u32 tensor count, then per tensor:
/// u32 name length, UTF-8 name, u32 rank, u32 dims[rank], row-major
/// little-endian 64-bit values.
void save_tensors(const std::string& path, const ParamSet& set);
ParamSet load_tensors(const std::string& path);

}  // namespace rfo
