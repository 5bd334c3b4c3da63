#include "aetlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "aetlab/error.hpp"

namespace aetlab {

const char* to_string(ParseErrorKind kind) {
    switch (kind) {
        case ParseErrorKind::BadMagic: return "bad magic";
        case ParseErrorKind::Truncated: return "truncated";
        case ParseErrorKind::DimensionMismatch: return "dimension mismatch";
        case ParseErrorKind::BadLength: return "bad length";
        case ParseErrorKind::BadLabel: return "bad label";
        case ParseErrorKind::BadFormat: return "bad format";
    }
    return "parse error";
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape))
        throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) +
                         " values");
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Tensor::row_size() const {
    if (shape.empty()) return 1;
    return shape[0] == 0 ? 0 : data.size() / shape[0];
}

double Tensor::item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

std::span<double> Tensor::row(std::size_t i) {
    const auto n = row_size();
    return std::span<double>(data).subspan(i * n, n);
}

std::span<const double> Tensor::row(std::size_t i) const {
    const auto n = row_size();
    return std::span<const double>(data).subspan(i * n, n);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& batch, std::span<const std::size_t> indices) {
    if (batch.rank() == 0) throw ShapeError("gather_rows on a scalar");
    Shape shape = batch.shape;
    shape[0] = indices.size();
    Tensor out(shape);
    const auto n = batch.row_size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= batch.shape[0]) throw InvalidArgument("gather_rows index out of range");
        std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

}  // namespace aetlab
