#include "psp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "psp/error.hpp"

namespace psp {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_to_string(shape));
        if (n > std::numeric_limits<std::size_t>::max() / d)
            throw ShapeError("element count overflows for shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor() : data_(1, 0.0f) {}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values) {
    return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape_));
    return shape_[axis];
}

void Tensor::require_rank2(const char* op) const {
    if (shape_.size() != 2)
        throw ShapeError(std::string(op) + " needs a 2-D tensor, got " + shape_to_string(shape_));
}

std::size_t Tensor::rows() const {
    require_rank2("rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_rank2("cols()");
    return shape_[1];
}

float& Tensor::at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

float Tensor::at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

std::span<float> Tensor::row(std::size_t r) {
    const std::size_t w = cols();
    return std::span<float>(data_).subspan(r * w, w);
}

std::span<const float> Tensor::row(std::size_t r) const {
    const std::size_t w = cols();
    return std::span<const float>(data_).subspan(r * w, w);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    require_rank2("slice_rows");
    if (begin >= end || end > shape_[0])
        throw IndexError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_to_string(shape_));
    const std::size_t w = shape_[1];
    std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * w),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * w));
    return Tensor({end - begin, w}, std::move(out));
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const {
    require_rank2("slice_cols");
    if (begin >= end || end > shape_[1])
        throw IndexError("column slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_to_string(shape_));
    Tensor out({shape_[0], end - begin});
    for (std::size_t r = 0; r < shape_[0]; ++r)
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * shape_[1] + begin),
                    end - begin, out.row(r).begin());
    return out;
}

bool Tensor::operator==(const Tensor& other) const {
    return shape_ == other.shape_ && bitwise_equal(data_, other.data_);
}

void copy_rows(Tensor& dst, std::size_t dst_row, const Tensor& src, std::size_t src_row,
               std::size_t count) {
    if (dst.cols() != src.cols())
        throw ShapeError("copy_rows width mismatch: " + shape_to_string(dst.shape()) + " vs " +
                         shape_to_string(src.shape()));
    if (dst_row + count > dst.rows() || src_row + count > src.rows())
        throw IndexError("copy_rows range out of bounds");
    const std::size_t w = dst.cols();
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(src_row * w), count * w,
                dst.data().begin() + static_cast<std::ptrdiff_t>(dst_row * w));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;  // also covers matching -inf
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0);
}

}  // namespace psp
