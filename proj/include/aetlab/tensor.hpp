#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace aetlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Value type; gradients live on the tape.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> values);
    Tensor(Shape s, double fill);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values);

    std::size_t numel() const noexcept { return data.size(); }
    std::size_t rank() const noexcept { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    /// Number of elements per leading-axis entry (per example for batched data).
    std::size_t row_size() const;

    double item() const;

    std::span<double> span() noexcept { return data; }
    std::span<const double> span() const noexcept { return data; }
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Picks rows `indices` of a batched tensor into a new batch.
Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices);

}  // namespace aetlab
