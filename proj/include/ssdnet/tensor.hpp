#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ssdnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// The element count always equals the product of the extents; a rank-0
/// tensor holds a single scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    /// Extent of an axis; negative indices count from the back.
    std::size_t dim(int axis) const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t row, std::size_t col);
    double at(std::size_t row, std::size_t col) const;

    /// The single value of a one-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;
    void fill(double value);

private:
    Shape shape_;
    std::vector<double> data_;
};

}  // namespace ssdnet
