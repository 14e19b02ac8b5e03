#include "psp/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "psp/error.hpp"

namespace psp {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(12 + 4 * t.rank() + 4 * t.size());
    out.insert(out.end(), std::begin(kPsptMagic), std::end(kPsptMagic));
    put_u32(out, kPsptVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw ShapeError("dimension " + std::to_string(d) + " does not fit in u32");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float f : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw FormatError("truncated header: missing magic", bytes.size());
    if (std::memcmp(bytes.data(), kPsptMagic, 4) != 0) throw FormatError("bad magic", 0);
    if (bytes.size() < 12) throw FormatError("truncated header", bytes.size());
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kPsptVersion)
        throw FormatError("unsupported version " + std::to_string(version), 4);
    const std::uint32_t ndim = get_u32(bytes, 8);

    std::size_t offset = 12;
    if (ndim > (bytes.size() - offset) / 4)
        throw FormatError("truncated dims: ndim=" + std::to_string(ndim), bytes.size());

    Shape shape;
    shape.reserve(ndim);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i, offset += 4) {
        const std::uint32_t d = get_u32(bytes, offset);
        if (d == 0) throw FormatError("zero dimension", offset);
        if (count > std::numeric_limits<std::size_t>::max() / 4 / d)
            throw FormatError("dimension product overflows", offset);
        count *= d;
        shape.push_back(d);
    }

    const std::size_t payload = bytes.size() - offset;
    if (payload < count * 4)
        throw FormatError("truncated payload: need " + std::to_string(count * 4) +
                              " bytes, have " + std::to_string(payload),
                          bytes.size());
    if (payload > count * 4) throw FormatError("trailing bytes after payload", offset + count * 4);

    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i, offset += 4)
        data[i] = std::bit_cast<float>(get_u32(bytes, offset));
    return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string() + " for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

}  // namespace psp
