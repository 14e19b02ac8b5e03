#include "psp/maskgen.hpp"

#include <cmath>
#include <vector>

#include "psp/error.hpp"

namespace psp {

Softbox Softbox::rect(double h1, double h2, double w1, double w2) {
    const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(h1) || !in_unit(h2) || !in_unit(w1) || !in_unit(w2))
        throw ValueError("softbox fractions must lie in [0, 1]");
    if (h1 > h2 || w1 > w2) throw ValueError("softbox needs h1 <= h2 and w1 <= w2");
    Softbox box;
    box.kind_ = Kind::Rect;
    box.rect_ = {h1, h2, w1, w2};
    return box;
}

Softbox Softbox::bitmap(Tensor bitmap) {
    if (bitmap.rank() != 2 || bitmap.rows() != bitmap.cols())
        throw ShapeError("softbox bitmap must be square, got " + shape_to_string(bitmap.shape()));
    for (float v : bitmap.data())
        if (v != 0.0f && v != 1.0f) throw ValueError("softbox bitmap entries must be 0 or 1");
    Softbox box;
    box.kind_ = Kind::Bitmap;
    box.bitmap_ = std::move(bitmap);
    return box;
}

Tensor rasterize(const Softbox& box, std::size_t grid) {
    if (grid == 0) throw ValueError("grid size must be at least 1");
    if (box.kind() == Softbox::Kind::Bitmap) {
        const Tensor& bm = box.bitmap_values();
        if (bm.rows() != grid)
            throw ShapeError("softbox bitmap is " + shape_to_string(bm.shape()) +
                             " but the attention grid is " + std::to_string(grid) + "x" +
                             std::to_string(grid));
        return bm.reshaped({grid * grid});
    }
    const auto [h1, h2, w1, w2] = box.fractions();
    const auto cell = [grid](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(grid)));
    };
    const std::size_t r0 = cell(h1), r1 = cell(h2), c0 = cell(w1), c1 = cell(w2);
    Tensor out({grid * grid});
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[r * grid + c] = 1.0f;
    return out;
}

std::size_t otsu_bucket(float v, std::size_t bins) {
    const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(v) * bins));
    return b < bins ? b : bins - 1;
}

namespace {

using i128 = __int128;
using u128 = unsigned __int128;

// Between-class variance up to the positive factor 1/N^2, kept as the exact
// fraction D^2 / (n0 n1) with D = s0 n1 - s1 n0.
struct Score {
    u128 num = 0;
    u128 den = 1;
};

// a.num/a.den > b.num/b.den without overflow: compare integer quotients,
// then the remainders cross-multiplied (each remainder < its denominator).
bool greater(const Score& a, const Score& b) {
    const u128 qa = a.num / a.den, qb = b.num / b.den;
    if (qa != qb) return qa > qb;
    return (a.num % a.den) * b.den > (b.num % b.den) * a.den;
}

}  // namespace

OtsuResult otsu_threshold(const Tensor& map, std::size_t bins) {
    const std::size_t n = map.size();
    if (n == 0) throw ValueError("otsu on an empty map");
    if (bins < 2 || bins > (1u << 16)) throw ValueError("otsu bins must be in [2, 65536]");
    if (n > (1u << 24)) throw ValueError("otsu map too large");
    for (float v : map.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw ValueError("otsu input must lie in [0, 1]");

    std::vector<std::uint64_t> hist(bins, 0);
    for (float v : map.data()) ++hist[otsu_bucket(v, bins)];

    std::uint64_t total_sum = 0;
    std::size_t occupied = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        total_sum += hist[b] * b;
        occupied += hist[b] != 0;
    }

    OtsuResult res;
    res.binary = Tensor(map.shape());
    if (occupied < 2) {
        res.degenerate = true;
        res.threshold_index = static_cast<int>(bins) - 1;
        res.threshold = 1.0f;
        res.count0 = n;
        double s = 0.0;
        for (float v : map.data()) s += v;
        res.mean0 = s / static_cast<double>(n);
        return res;
    }

    std::uint64_t n0 = 0, s0 = 0;
    Score best;
    bool have_best = false;
    for (std::size_t t = 0; t + 1 < bins; ++t) {
        n0 += hist[t];
        s0 += hist[t] * t;
        const std::uint64_t n1 = n - n0;
        if (n0 == 0 || n1 == 0) continue;
        const i128 d = static_cast<i128>(s0) * n1 - static_cast<i128>(total_sum - s0) * n0;
        const u128 mag = static_cast<u128>(d < 0 ? -d : d);
        const Score score{mag * mag, static_cast<u128>(n0) * n1};
        if (!have_best || greater(score, best)) {
            best = score;
            have_best = true;
            res.threshold_index = static_cast<int>(t);
        }
    }

    const auto t = static_cast<std::size_t>(res.threshold_index);
    res.threshold = static_cast<float>(static_cast<double>(t + 1) / static_cast<double>(bins));
    double sum0 = 0.0, sum1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (otsu_bucket(map[i], bins) > t) {
            res.binary[i] = 1.0f;
            ++res.count1;
            sum1 += map[i];
        } else {
            ++res.count0;
            sum0 += map[i];
        }
    }
    res.mean0 = sum0 / static_cast<double>(res.count0);
    res.mean1 = sum1 / static_cast<double>(res.count1);
    return res;
}

ObjectMask object_mask(const Tensor& attention_map, const Softbox& box, std::size_t grid,
                       std::size_t bins) {
    if (attention_map.size() != grid * grid)
        throw ShapeError("attention map has " + std::to_string(attention_map.size()) +
                         " entries, grid needs " + std::to_string(grid * grid));
    const Tensor raster = rasterize(box, grid);
    const OtsuResult otsu = otsu_threshold(attention_map.reshaped({grid * grid}), bins);
    ObjectMask mask{Tensor({grid * grid}), otsu.degenerate};
    for (std::size_t i = 0; i < raster.size(); ++i) mask.values[i] = raster[i] * otsu.binary[i];
    return mask;
}

}  // namespace psp
