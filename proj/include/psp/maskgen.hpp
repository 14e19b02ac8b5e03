#pragma once

#include <array>
#include <cstddef>
#include <optional>

#include "psp/tensor.hpp"

namespace psp {

/// User-supplied region constraint: a fractional rectangle [h1, h2, w1, w2]
/// (rows then columns) or a binary bitmap on the attention grid.
class Softbox {
public:
    enum class Kind { Rect, Bitmap };

    static Softbox rect(double h1, double h2, double w1, double w2);
    static Softbox rect(const std::array<double, 4>& hhww) {
        return rect(hhww[0], hhww[1], hhww[2], hhww[3]);
    }
    // bitmap must be square [g x g] with entries in {0, 1}.
    static Softbox bitmap(Tensor bitmap);

    Kind kind() const noexcept { return kind_; }
    const std::array<double, 4>& fractions() const noexcept { return rect_; }
    const Tensor& bitmap_values() const noexcept { return bitmap_; }

private:
    Softbox() = default;

    Kind kind_ = Kind::Rect;
    std::array<double, 4> rect_{0.0, 1.0, 0.0, 1.0};
    Tensor bitmap_;
};

// Row-major [g*g] raster. A rect covers rows [floor(h1 g), floor(h2 g)) and
// columns [floor(w1 g), floor(w2 g)).
Tensor rasterize(const Softbox& box, std::size_t grid);

struct OtsuResult {
    // Class 0 is buckets [0, threshold_index], class 1 the rest. The binary
    // mask is bucket(v) > threshold_index, i.e. v >= threshold.
    int threshold_index = -1;
    float threshold = 1.0f;
    Tensor binary;
    bool degenerate = false;
    std::size_t count0 = 0, count1 = 0;
    double mean0 = 0.0, mean1 = 0.0;  // class means in value units
};

// Histogram bucket of a value in [0, 1]: min(floor(v * bins), bins - 1).
std::size_t otsu_bucket(float v, std::size_t bins);

// Maximizes the between-class variance w0 w1 (mu0 - mu1)^2 over the bucket
// boundaries, compared exactly in integer arithmetic; ties go to the lowest
// index. Degenerate (all values in one bucket) yields an all-zero mask.
OtsuResult otsu_threshold(const Tensor& map, std::size_t bins = 256);

struct ObjectMask {
    Tensor values;  // [n_pix] in {0, 1}
    bool degenerate = false;
};

// rasterize(box) * otsu(map).binary, elementwise.
ObjectMask object_mask(const Tensor& attention_map, const Softbox& box, std::size_t grid,
                       std::size_t bins = 256);

}  // namespace psp
