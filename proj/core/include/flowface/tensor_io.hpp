#pragma once

#include <filesystem>

#include "flowface/tensor.hpp"

namespace flowface {

// OFTK tensor container: magic "OFTK", little-endian u32 rank,
// u32 dims[rank], float32 payload, row-major.

void write_oftk(const std::filesystem::path& path, const Tensor<float>& t);

/// Throws FormatError naming the file for bad magic, truncation or
/// trailing bytes.
Tensor<float> read_oftk(const std::filesystem::path& path);

}  // namespace flowface
