#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "psp/tensor.hpp"

namespace psp {

// 8-bit binary greymap (P5, maxval 255).
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, width * height
};

// Header is exactly "P5\n<w> <h>\n255\n".
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

void write_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);

// Pixel = round(255 * v) for v in [0, 1]; values are clamped first.
GrayImage to_gray(const Tensor& values, std::size_t width, std::size_t height);

// 1 where pixel >= 128, else 0; result shape [height x width].
Tensor binarize(const GrayImage& img);

}  // namespace psp
