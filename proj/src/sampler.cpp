#include "flowfoley/sampler.hpp"

#include <cmath>

#include "flowfoley/errors.hpp"

namespace ff {

const char* solver_name(Solver s) { return s == Solver::euler ? "euler" : "midpoint"; }

Solver solver_from_name(const std::string& name) {
    if (name == "euler") return Solver::euler;
    if (name == "midpoint") return Solver::midpoint;
    throw ValidationError("unknown solver: " + name);
}

void GuidanceSpec::validate() const {
    if (joint_weight < 0.0f) throw ContractError("guidance: joint_weight must be >= 0");
    for (const auto& [name, w] : per_modality_weights) {
        if (w < 0.0f) throw ContractError("guidance: weight for " + name + " must be >= 0");
        bool known = false;
        for (const char* m : kGuidanceModalities) known = known || name == m;
        if (!known) throw ContractError("guidance: unknown modality " + name);
    }
}

void SampleSpec::validate() const {
    if (steps < 1) throw ContractError("sample spec: steps must be >= 1");
    guidance.validate();
}

ConditionBundle empty_bundle() { return ConditionBundle{}; }

ConditionBundle restrict_bundle(const ConditionBundle& bundle, const std::string& modality) {
    ConditionBundle out;
    if (modality == "video") {
        out.video_feats = bundle.video_feats;
        out.sync_feats = bundle.sync_feats;
    } else if (modality == "caption") {
        out.caption_emb = bundle.caption_emb;
    } else if (modality == "cot") {
        out.cot_tokens = bundle.cot_tokens;
    } else if (modality == "roi") {
        out.roi_feats = bundle.roi_feats;
    } else if (modality == "context") {
        out.audio_context = bundle.audio_context;
        out.context_mask = bundle.context_mask;
    } else {
        throw ContractError("restrict_bundle: unknown modality " + modality);
    }
    return out;
}

VelocitySession::VelocitySession(const ModelParams& params, const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    p_ = add_param_leaves(g_, params);
    base_ = g_.size();
}

Tensor VelocitySession::forward(const Tensor& x, float t, const ConditionBundle& bundle) {
    g_.truncate(base_);
    int out = build_forward(g_, p_, cfg_, x, t, bundle);
    return g_.value(out);
}

Tensor VelocitySession::guided(const Tensor& x, float t, const ConditionBundle& bundle,
                               const GuidanceSpec& spec) {
    spec.validate();
    if (spec.mode == GuidanceMode::joint) {
        // Weights 0 and 1 return the underlying forward pass bit-exactly.
        if (spec.joint_weight == 1.0f) return forward(x, t, bundle);
        if (spec.joint_weight == 0.0f) return forward(x, t, empty_bundle());
        Tensor v_cond = forward(x, t, bundle);
        Tensor v_base = forward(x, t, empty_bundle());
        Tensor out(v_base.shape());
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            out[i] = v_base[i] + spec.joint_weight * (v_cond[i] - v_base[i]);
        }
        return out;
    }
    std::vector<std::pair<std::string, float>> active;
    for (const char* m : kGuidanceModalities) {
        auto it = spec.per_modality_weights.find(m);
        if (it != spec.per_modality_weights.end() && it->second != 0.0f) {
            active.emplace_back(m, it->second);
        }
    }
    if (active.empty()) return forward(x, t, empty_bundle());
    if (active.size() == 1 && active[0].second == 1.0f) {
        return forward(x, t, restrict_bundle(bundle, active[0].first));
    }
    Tensor v_base = forward(x, t, empty_bundle());
    Tensor out = v_base;
    for (const auto& [name, w] : active) {
        Tensor v_m = forward(x, t, restrict_bundle(bundle, name));
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += w * (v_m[i] - v_base[i]);
    }
    return out;
}

Tensor guided_velocity(const ModelParams& params, const ModelConfig& cfg, const Tensor& x, float t,
                       const ConditionBundle& bundle, const GuidanceSpec& g) {
    VelocitySession session(params, cfg);
    return session.guided(x, t, bundle, g);
}

namespace {

Tensor solver_step(const VelocityFn& v, const Tensor& x, float t, float h, Solver solver) {
    if (solver == Solver::euler) {
        Tensor k1 = v(x, t);
        Tensor out = x;
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += h * k1[i];
        return out;
    }
    Tensor k1 = v(x, t);
    Tensor xm = x;
    for (std::int64_t i = 0; i < xm.numel(); ++i) xm[i] += 0.5f * h * k1[i];
    Tensor k2 = v(xm, t + 0.5f * h);
    Tensor out = x;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += h * k2[i];
    return out;
}

Tensor draw_initial_noise(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng(seed).derive("x0");
    Tensor x0({cfg.latent_len, cfg.latent_dim});
    for (std::int64_t i = 0; i < x0.numel(); ++i) x0[i] = rng.normal();
    return x0;
}

void check_state(const Tensor& x, std::int64_t step) {
    if (x.first_nonfinite()) {
        throw NumericError("sample: non-finite state after integration step " +
                           std::to_string(step));
    }
}

}  // namespace

Tensor integrate(const VelocityFn& v, Tensor x0, std::int64_t steps, Solver solver) {
    if (steps < 1) throw ContractError("integrate: steps must be >= 1");
    float h = 1.0f / static_cast<float>(steps);
    Tensor x = std::move(x0);
    for (std::int64_t i = 0; i < steps; ++i) {
        x = solver_step(v, x, static_cast<float>(i) * h, h, solver);
        check_state(x, i + 1);
    }
    return x;
}

Tensor sample(const ModelParams& params, const ModelConfig& cfg, const ConditionBundle& bundle,
              const SampleSpec& spec) {
    spec.validate();
    bundle.validate(cfg);
    VelocitySession session(params, cfg);
    Tensor x0 = draw_initial_noise(cfg, spec.seed);
    auto v = [&](const Tensor& x, float t) { return session.guided(x, t, bundle, spec.guidance); };
    return integrate(v, std::move(x0), spec.steps, spec.solver);
}

Tensor edit_sample(const ModelParams& params, const ModelConfig& cfg, const ConditionBundle& bundle,
                   EditOp op, const SampleSpec& spec) {
    spec.validate();
    bundle.validate(cfg);
    if (!bundle.audio_context || !bundle.context_mask) {
        throw ContractError("edit_sample: audio_context and context_mask are required");
    }
    const Tensor& ctx = *bundle.audio_context;
    const auto& mask = *bundle.context_mask;
    const bool constrain = op == EditOp::inpaint || op == EditOp::extend;

    VelocitySession session(params, cfg);
    Tensor x0 = draw_initial_noise(cfg, spec.seed);
    const Tensor x0_fixed = x0;
    auto v = [&](const Tensor& x, float t) { return session.guided(x, t, bundle, spec.guidance); };

    float h = 1.0f / static_cast<float>(spec.steps);
    Tensor x = std::move(x0);
    const std::int64_t cols = cfg.latent_dim;
    for (std::int64_t i = 0; i < spec.steps; ++i) {
        x = solver_step(v, x, static_cast<float>(i) * h, h, spec.solver);
        check_state(x, i + 1);
        if (constrain) {
            // Re-pin known frames to the interpolant of the fixed noise draw
            // and the context at the step's end time.
            float tn = static_cast<float>(i + 1) * h;
            for (std::int64_t f = 0; f < cfg.latent_len; ++f) {
                if (!mask[static_cast<std::size_t>(f)]) continue;
                for (std::int64_t c = 0; c < cols; ++c) {
                    x[f * cols + c] = (1.0f - tn) * x0_fixed[f * cols + c] + tn * ctx[f * cols + c];
                }
            }
        }
    }
    if (constrain) {
        for (std::int64_t f = 0; f < cfg.latent_len; ++f) {
            if (!mask[static_cast<std::size_t>(f)]) continue;
            for (std::int64_t c = 0; c < cols; ++c) x[f * cols + c] = ctx[f * cols + c];
        }
    }
    return x;
}

}  // namespace ff
