#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracles {

std::vector<double> matmul_naive(const std::vector<double>& a, const std::vector<double>& b,
                                 std::int64_t m, std::int64_t k, std::int64_t n) {
    std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t p = 0; p < k; ++p)
                c[static_cast<std::size_t>(i * n + j)] +=
                    a[static_cast<std::size_t>(i * k + p)] * b[static_cast<std::size_t>(p * n + j)];
    return c;
}

std::vector<double> attention_dense(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v, std::int64_t rows,
                                    std::int64_t dim) {
    double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<double> scores(static_cast<std::size_t>(rows * rows));
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < rows; ++j) {
            double s = 0.0;
            for (std::int64_t p = 0; p < dim; ++p)
                s += q[static_cast<std::size_t>(i * dim + p)] * k[static_cast<std::size_t>(j * dim + p)];
            scores[static_cast<std::size_t>(i * rows + j)] = s * scale;
        }
    std::vector<double> out(static_cast<std::size_t>(rows * dim), 0.0);
    for (std::int64_t i = 0; i < rows; ++i) {
        double denom = 0.0;
        std::vector<double> e(static_cast<std::size_t>(rows));
        for (std::int64_t j = 0; j < rows; ++j) {
            e[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(i * rows + j)]);
            denom += e[static_cast<std::size_t>(j)];
        }
        for (std::int64_t j = 0; j < rows; ++j)
            for (std::int64_t p = 0; p < dim; ++p)
                out[static_cast<std::size_t>(i * dim + p)] += e[static_cast<std::size_t>(j)] / denom *
                                                              v[static_cast<std::size_t>(j * dim + p)];
    }
    return out;
}

void two_pass_stats(const std::vector<double>& row, double& mean, double& var) {
    mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
}

std::vector<double> to_double(const ff::Tensor& t) {
    std::vector<double> out(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) out[static_cast<std::size_t>(i)] = t[i];
    return out;
}

double lerp_track(const std::vector<double>& values, std::int64_t out_rows, std::int64_t j) {
    std::int64_t in_rows = static_cast<std::int64_t>(values.size());
    if (out_rows == 1) return values[0];
    double pos = static_cast<double>(j) * static_cast<double>(in_rows - 1) /
                 static_cast<double>(out_rows - 1);
    std::int64_t i0 = static_cast<std::int64_t>(pos);
    std::int64_t i1 = std::min(i0 + 1, in_rows - 1);
    double w = pos - static_cast<double>(i0);
    return (1.0 - w) * values[static_cast<std::size_t>(i0)] + w * values[static_cast<std::size_t>(i1)];
}

std::vector<double> cholesky_lower(const std::vector<double>& a, std::int64_t d) {
    std::vector<double> l(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
            double s = a[static_cast<std::size_t>(i * d + j)];
            for (std::int64_t k = 0; k < j; ++k)
                s -= l[static_cast<std::size_t>(i * d + k)] * l[static_cast<std::size_t>(j * d + k)];
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
                l[static_cast<std::size_t>(i * d + j)] = std::sqrt(s);
            } else {
                l[static_cast<std::size_t>(i * d + j)] = s / l[static_cast<std::size_t>(j * d + j)];
            }
        }
    }
    return l;
}

}  // namespace oracles
