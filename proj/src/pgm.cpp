#include "psp/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "psp/error.hpp"
#include "psp/tensor_io.hpp"

namespace psp {

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
    if (img.pixels.size() != img.width * img.height)
        throw ShapeError("pgm pixel count does not match " + std::to_string(img.width) + "x" +
                         std::to_string(img.height));
    const std::string header =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::size_t read_header_number(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
        if (value > (1u << 24)) throw FormatError("pgm header value too large", start);
        ++pos;
    }
    if (pos == start) throw FormatError("expected number in pgm header", start);
    return value;
}

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw FormatError("not a binary PGM (missing P5 magic)", 0);
    std::size_t pos = 2;
    GrayImage img;
    img.width = read_header_number(bytes, pos);
    img.height = read_header_number(bytes, pos);
    const std::size_t maxval_at = pos;
    const std::size_t maxval = read_header_number(bytes, pos);
    if (maxval != 255) throw FormatError("pgm maxval must be 255", maxval_at);
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw FormatError("missing whitespace after pgm header", pos);
    ++pos;
    const std::size_t n = img.width * img.height;
    if (n == 0) throw FormatError("empty pgm image", pos);
    if (bytes.size() - pos < n) throw FormatError("truncated pgm pixel data", bytes.size());
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
    write_file_bytes(path, encode_pgm(img));
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

GrayImage to_gray(const Tensor& values, std::size_t width, std::size_t height) {
    if (values.size() != width * height)
        throw ShapeError("cannot view " + std::to_string(values.size()) + " values as " +
                         std::to_string(width) + "x" + std::to_string(height) + " image");
    GrayImage img{width, height, std::vector<std::uint8_t>(values.size())};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = std::clamp(values[i], 0.0f, 1.0f);
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0f * v));
    }
    return img;
}

Tensor binarize(const GrayImage& img) {
    Tensor out({img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = img.pixels[i] >= 128 ? 1.0f : 0.0f;
    return out;
}

}  // namespace psp
