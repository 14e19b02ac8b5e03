#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "psp/tensor.hpp"

namespace psp {

// PSPT layout, little-endian, no padding:
//   "PSPT" | u32 version (=1) | u32 ndim | u32 dims[ndim] | f32 data[...]
inline constexpr char kPsptMagic[4] = {'P', 'S', 'P', 'T'};
inline constexpr std::uint32_t kPsptVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace psp
