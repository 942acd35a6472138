#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace smog {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    // Convenience for small literals in tests: rows of a 2-D matrix.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D element access.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(double value);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

bool all_finite(const Tensor& t);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

// Rounds every element to the nearest float. State that is checkpointed as
// f32 is passed through this after each mutation so save/load is lossless.
void round_to_f32(Tensor& t);

// Rows of a 2-D tensor gathered by index.
Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows);
// Stack 2-D tensors with equal column counts.
Tensor vstack(std::span<const Tensor> parts);

}  // namespace smog
