#include "flowfoley/tensor.hpp"

#include <cmath>
#include <sstream>

#include "flowfoley/errors.hpp"

namespace ff {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static void check_shape(const std::vector<std::int64_t>& shape) {
    for (std::int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(shape));
    }
}

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(float v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, float v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, float stddev) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal() * stddev;
    return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> new_shape) const {
    check_shape(new_shape);
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("reshape " + shape_str() + " -> " + shape_to_string(new_shape) +
                         " changes element count");
    }
    return Tensor(std::move(new_shape), data_);
}

std::optional<std::int64_t> Tensor::first_nonfinite() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) return static_cast<std::int64_t>(i);
    }
    return std::nullopt;
}

void Tensor::require_finite(const std::string& what) const {
    if (auto idx = first_nonfinite()) {
        throw NumericError(what + ": non-finite value at flat index " + std::to_string(*idx));
    }
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: shapes " + a.shape_str() + " vs " + b.shape_str());
    }
    float m = 0.0f;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

double l2_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("l2_distance: shapes " + a.shape_str() + " vs " + b.shape_str());
    }
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) s += static_cast<double>(t[i]) * t[i];
    return std::sqrt(s);
}

}  // namespace ff
