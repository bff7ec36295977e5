#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pat/param_set.hpp"

namespace pat::nn {

inline constexpr std::uint32_t kSnapshotVersion = 1;

// Concatenates every value in iteration order into one rank 1 tensor.
Tensor flatten_params(const ParamSet& params);
ParamSet unflatten_params(const ParamLayout& layout, const Tensor& flat);

// Binary snapshot, little-endian:
//   "PATP" | u32 version | u32 entry count |
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64 values[product(dims)]
std::vector<std::uint8_t> encode_params(const ParamSet& params);
ParamSet decode_params(const std::vector<std::uint8_t>& bytes);

void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace pat::nn
