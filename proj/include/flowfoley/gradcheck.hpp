#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowfoley/autodiff.hpp"
#include "flowfoley/mmdit.hpp"

#include "json.hpp"

namespace ff {

// Independent double-precision re-evaluation of a recorded graph. Kernels
// here are written separately from the float path on purpose; finite
// differences over this evaluator stay well below float roundoff.
std::vector<double> eval_graph_double(const Graph& g, int node,
                                      const std::map<int, std::vector<double>>& leaf_overrides);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool pass = false;
};

// Central finite differences (step h) of every element of every leaf named
// in `leaves`, against the float backward pass of `loss`.
GradCheckEntry check_graph_gradients(Graph& g, int loss, const std::vector<int>& leaves,
                                     const std::string& name, double h, double rel_tol,
                                     double abs_tol);

// Per-primitive suite over random inputs; one entry per primitive.
std::vector<GradCheckEntry> primitive_gradient_suite(std::uint64_t seed, int rounds = 20,
                                                     double h = 1e-3, double rel_tol = 1e-4,
                                                     double abs_tol = 1e-6);

// Directional derivative checks of the full model loss with respect to all
// parameters (one entry per direction).
std::vector<GradCheckEntry> full_model_gradient_check(const ModelConfig& cfg, std::uint64_t seed,
                                                      int directions = 4, double h = 1e-3,
                                                      double rel_tol = 1e-3);

// corrupt_gradient is a test hook that perturbs one analytic gradient so a
// harness can verify the suite actually detects faults.
nlohmann::json gradcheck_report(std::uint64_t seed, bool corrupt_gradient = false);
bool gradcheck_passed(const nlohmann::json& report);

}  // namespace ff
