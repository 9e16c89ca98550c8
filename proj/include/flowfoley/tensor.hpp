#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/rng.hpp"

namespace ff {

// Dense row-major float32 tensor. Rank 0 is a scalar (numel 1). Dims are
// strictly positive; product(shape) == data.size() always holds.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> shape);
    Tensor(std::vector<std::int64_t> shape, std::vector<float> data);

    static Tensor scalar(float v);
    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, float v);
    static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, float stddev = 1.0f);

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }
    const float* ptr() const { return data_.data(); }
    float* ptr() { return data_.data(); }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-2 accessors.
    float& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
    float at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

    // Same data, new shape; numel must match.
    Tensor reshaped(std::vector<std::int64_t> new_shape) const;

    // Index of the first NaN/Inf entry, if any.
    std::optional<std::int64_t> first_nonfinite() const;
    // Throws NumericError naming `what` and the offending flat index.
    void require_finite(const std::string& what) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

// Max |a-b| over all entries; shapes must match.
float max_abs_diff(const Tensor& a, const Tensor& b);
// Euclidean distance between two same-shaped tensors.
double l2_distance(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);

}  // namespace ff
