#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "flowfoley/flow.hpp"
#include "flowfoley/mmdit.hpp"
#include "flowfoley/tensor.hpp"

namespace ff {

enum class GuidanceMode { joint, compositional };

// Modality group names accepted by compositional guidance.
inline const char* const kGuidanceModalities[] = {"video", "caption", "cot", "roi", "context"};

struct GuidanceSpec {
    GuidanceMode mode = GuidanceMode::joint;
    float joint_weight = 1.0f;
    std::map<std::string, float> per_modality_weights;

    void validate() const;
};

enum class Solver { euler, midpoint };
const char* solver_name(Solver s);
Solver solver_from_name(const std::string& name);

struct SampleSpec {
    std::int64_t steps = 24;
    Solver solver = Solver::euler;
    std::uint64_t seed = 0;
    GuidanceSpec guidance;

    void validate() const;
};

// All-absent bundle (the unconditional case).
ConditionBundle empty_bundle();
// Keeps only the named modality group of `bundle`; everything else absent.
ConditionBundle restrict_bundle(const ConditionBundle& bundle, const std::string& modality);

// Velocity evaluator with the parameter tensors loaded once.
class VelocitySession {
public:
    VelocitySession(const ModelParams& params, const ModelConfig& cfg);

    Tensor forward(const Tensor& x, float t, const ConditionBundle& bundle);
    Tensor guided(const Tensor& x, float t, const ConditionBundle& bundle, const GuidanceSpec& g);

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Graph g_;
    ParamLeaves p_;
    int base_ = 0;
};

// Classifier-free guidance combination of conditional and unconditional
// velocity predictions. Weights 0 and 1 short-circuit to the underlying
// forward pass so the degenerate cases are bit-exact.
Tensor guided_velocity(const ModelParams& params, const ModelConfig& cfg, const Tensor& x, float t,
                       const ConditionBundle& bundle, const GuidanceSpec& g);

using VelocityFn = std::function<Tensor(const Tensor& x, float t)>;

// Fixed-step integration of dx/dt = v(x,t) from t=0 to t=1.
Tensor integrate(const VelocityFn& v, Tensor x0, std::int64_t steps, Solver solver);

// Draw x0 ~ N(0,I) from spec.seed and integrate the guided field.
Tensor sample(const ModelParams& params, const ModelConfig& cfg, const ConditionBundle& bundle,
              const SampleSpec& spec);

// Context-constrained sampling for the editing operations. For inpaint and
// extend, known frames are re-pinned to the interpolant of (x0, context)
// after every step and to the context exactly after the last one.
Tensor edit_sample(const ModelParams& params, const ModelConfig& cfg, const ConditionBundle& bundle,
                   EditOp op, const SampleSpec& spec);

}  // namespace ff
