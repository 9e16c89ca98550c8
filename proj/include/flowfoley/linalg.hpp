#pragma once

#include <cstdint>
#include <vector>

namespace ff {

// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is a dense
// row-major d x d matrix; returns eigenvalues and the orthonormal
// eigenvector matrix (columns). Throws NumericError on non-convergence.
void jacobi_eigen_sym(std::vector<double> a, std::int64_t d, std::vector<double>& eigvals,
                      std::vector<double>& eigvecs, int max_sweeps = 64);

// Principal square root of a symmetric PSD matrix; eigenvalues below zero
// are clamped to zero before the root.
std::vector<double> psd_sqrt(const std::vector<double>& a, std::int64_t d);

// Trace of psd_sqrt(a) without forming the root explicitly.
double trace_psd_sqrt(const std::vector<double>& a, std::int64_t d);

std::vector<double> matmul_dense(const std::vector<double>& a, const std::vector<double>& b,
                                 std::int64_t d);

}  // namespace ff
