#include "flowfoley/linalg.hpp"

#include <cmath>
#include <string>

#include "flowfoley/errors.hpp"

namespace ff {

void jacobi_eigen_sym(std::vector<double> a, std::int64_t d, std::vector<double>& eigvals,
                      std::vector<double>& eigvecs, int max_sweeps) {
    if (d <= 0 || static_cast<std::int64_t>(a.size()) != d * d) {
        throw ContractError("jacobi_eigen_sym: bad matrix size");
    }
    eigvecs.assign(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) eigvecs[static_cast<std::size_t>(i * d + i)] = 1.0;

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::int64_t i = 0; i < d; ++i)
            for (std::int64_t j = i + 1; j < d; ++j) {
                double v = a[static_cast<std::size_t>(i * d + j)];
                s += 2.0 * v * v;
            }
        return std::sqrt(s);
    };

    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::fabs(v));
    const double tol = scale > 0.0 ? 1e-14 * scale * static_cast<double>(d) : 0.0;

    int sweep = 0;
    while (off_norm() > tol && sweep < max_sweeps) {
        ++sweep;
        for (std::int64_t p = 0; p < d - 1; ++p) {
            for (std::int64_t q = p + 1; q < d; ++q) {
                double apq = a[static_cast<std::size_t>(p * d + q)];
                if (std::fabs(apq) <= tol / static_cast<double>(d * d)) continue;
                double app = a[static_cast<std::size_t>(p * d + p)];
                double aqq = a[static_cast<std::size_t>(q * d + q)];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::int64_t k = 0; k < d; ++k) {
                    double akp = a[static_cast<std::size_t>(k * d + p)];
                    double akq = a[static_cast<std::size_t>(k * d + q)];
                    a[static_cast<std::size_t>(k * d + p)] = c * akp - s * akq;
                    a[static_cast<std::size_t>(k * d + q)] = s * akp + c * akq;
                }
                for (std::int64_t k = 0; k < d; ++k) {
                    double apk = a[static_cast<std::size_t>(p * d + k)];
                    double aqk = a[static_cast<std::size_t>(q * d + k)];
                    a[static_cast<std::size_t>(p * d + k)] = c * apk - s * aqk;
                    a[static_cast<std::size_t>(q * d + k)] = s * apk + c * aqk;
                }
                for (std::int64_t k = 0; k < d; ++k) {
                    double vkp = eigvecs[static_cast<std::size_t>(k * d + p)];
                    double vkq = eigvecs[static_cast<std::size_t>(k * d + q)];
                    eigvecs[static_cast<std::size_t>(k * d + p)] = c * vkp - s * vkq;
                    eigvecs[static_cast<std::size_t>(k * d + q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if (off_norm() > tol && tol > 0.0) {
        throw NumericError("jacobi_eigen_sym: no convergence after " + std::to_string(max_sweeps) +
                           " sweeps, off-diagonal norm " + std::to_string(off_norm()) +
                           ", matrix scale " + std::to_string(scale));
    }
    eigvals.resize(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) eigvals[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * d + i)];
}

std::vector<double> psd_sqrt(const std::vector<double>& a, std::int64_t d) {
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(a, d, vals, vecs);
    std::vector<double> out(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t k = 0; k < d; ++k) {
        double lam = vals[static_cast<std::size_t>(k)];
        double r = lam > 0.0 ? std::sqrt(lam) : 0.0;  // clamp tiny negatives
        if (r == 0.0) continue;
        for (std::int64_t i = 0; i < d; ++i) {
            double vik = vecs[static_cast<std::size_t>(i * d + k)] * r;
            for (std::int64_t j = 0; j < d; ++j) {
                out[static_cast<std::size_t>(i * d + j)] +=
                    vik * vecs[static_cast<std::size_t>(j * d + k)];
            }
        }
    }
    return out;
}

double trace_psd_sqrt(const std::vector<double>& a, std::int64_t d) {
    std::vector<double> vals, vecs;
    jacobi_eigen_sym(a, d, vals, vecs);
    double tr = 0.0;
    for (double lam : vals) tr += lam > 0.0 ? std::sqrt(lam) : 0.0;
    return tr;
}

std::vector<double> matmul_dense(const std::vector<double>& a, const std::vector<double>& b,
                                 std::int64_t d) {
    std::vector<double> c(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t k = 0; k < d; ++k) {
            double av = a[static_cast<std::size_t>(i * d + k)];
            if (av == 0.0) continue;
            for (std::int64_t j = 0; j < d; ++j)
                c[static_cast<std::size_t>(i * d + j)] += av * b[static_cast<std::size_t>(k * d + j)];
        }
    return c;
}

}  // namespace ff
