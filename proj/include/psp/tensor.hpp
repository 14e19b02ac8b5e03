#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace psp {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

// Number of elements implied by a shape. The empty shape is a scalar (1).
std::size_t element_count(const Shape& shape);

/// Dense row-major float32 array with an explicit shape.
///
/// Every dimension is at least 1 and data().size() always equals the product
/// of the shape. Negative infinity is the only non-finite value the engine
/// ever stores, and only in logit tensors.
class Tensor {
public:
    Tensor();  // scalar zero
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor matrix(std::size_t rows, std::size_t cols,
                         std::initializer_list<float> values);
    static Tensor vector(std::vector<float> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    // 2-D accessors; rank must be 2.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t r, std::size_t c);
    float at(std::size_t r, std::size_t c) const;

    std::span<float> row(std::size_t r);
    std::span<const float> row(std::size_t r) const;

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    // Copy of rows [begin, end) of a 2-D tensor.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    // Copy of columns [begin, end) of a 2-D tensor.
    Tensor slice_cols(std::size_t begin, std::size_t end) const;

    bool operator==(const Tensor& other) const;  // bitwise on data

private:
    void require_rank2(const char* op) const;

    Shape shape_;
    std::vector<float> data_;
};

// Overwrites rows [dst_row, dst_row + count) of dst with rows
// [src_row, src_row + count) of src. Both must be 2-D with equal width.
void copy_rows(Tensor& dst, std::size_t dst_row, const Tensor& src, std::size_t src_row,
               std::size_t count);

// Largest absolute elementwise difference; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);

bool bitwise_equal(std::span<const float> a, std::span<const float> b);

}  // namespace psp
