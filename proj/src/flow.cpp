#include "flowfoley/flow.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "flowfoley/errors.hpp"

#include "json.hpp"

namespace ff {

const char* edit_op_name(EditOp op) {
    switch (op) {
        case EditOp::inpaint: return "inpaint";
        case EditOp::extend: return "extend";
        case EditOp::add: return "add";
        case EditOp::remove: return "remove";
    }
    return "?";
}

EditOp edit_op_from_name(const std::string& name) {
    if (name == "inpaint") return EditOp::inpaint;
    if (name == "extend") return EditOp::extend;
    if (name == "add") return EditOp::add;
    if (name == "remove") return EditOp::remove;
    throw ValidationError("unknown edit operation: " + name);
}

void TrainConfig::validate() const {
    if (steps < 0) throw ValidationError("train config: steps must be non-negative");
    if (batch_size <= 0) throw ValidationError("train config: batch_size must be positive");
    if (learning_rate < 0) throw ValidationError("train config: learning_rate must be >= 0");
    if (p_drop < 0.0f || p_drop >= 1.0f) throw ValidationError("train config: p_drop must be in [0,1)");
    if (ema_decay <= 0.0f || ema_decay >= 1.0f) {
        throw ValidationError("train config: ema_decay must be in (0,1)");
    }
    if (weight_decay < 0.0f) throw ValidationError("train config: weight_decay must be >= 0");
    if (context_task_fraction < 0.0f || context_task_fraction > 1.0f) {
        throw ValidationError("train config: context_task_fraction must be in [0,1]");
    }
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, float t) {
    if (!x0.same_shape(x1)) {
        throw ShapeError("interpolate: shapes " + x0.shape_str() + " vs " + x1.shape_str());
    }
    if (t < 0.0f || t > 1.0f) throw ContractError("interpolate: t must lie in [0,1]");
    Tensor out(x0.shape());
    float a = 1.0f - t;
    for (std::int64_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + t * x1[i];
    return out;
}

Tensor target_velocity(const Tensor& x0, const Tensor& x1) {
    if (!x0.same_shape(x1)) {
        throw ShapeError("target_velocity: shapes " + x0.shape_str() + " vs " + x1.shape_str());
    }
    Tensor out(x0.shape());
    for (std::int64_t i = 0; i < x0.numel(); ++i) out[i] = x1[i] - x0[i];
    return out;
}

ConditionBundle dropout_conditions(const ConditionBundle& bundle, float p_drop, Rng& rng) {
    ConditionBundle out = bundle;
    // Fixed draw order: video+sync, caption, cot, roi, context+mask. One draw
    // per group regardless of presence, so streams stay aligned.
    bool drop_video = rng.bernoulli(p_drop);
    bool drop_caption = rng.bernoulli(p_drop);
    bool drop_cot = rng.bernoulli(p_drop);
    bool drop_roi = rng.bernoulli(p_drop);
    bool drop_context = rng.bernoulli(p_drop);
    if (drop_video) {
        out.video_feats.reset();
        out.sync_feats.reset();
    }
    if (drop_caption) out.caption_emb.reset();
    if (drop_cot) out.cot_tokens.reset();
    if (drop_roi) out.roi_feats.reset();
    if (drop_context) {
        out.audio_context.reset();
        out.context_mask.reset();
    }
    return out;
}

namespace {
Tensor masked_context(const Tensor& x1, const std::vector<std::uint8_t>& mask) {
    Tensor ctx = Tensor::zeros(x1.shape());
    std::int64_t rows = x1.dim(0), cols = x1.dim(1);
    for (std::int64_t r = 0; r < rows; ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        for (std::int64_t c = 0; c < cols; ++c) ctx[r * cols + c] = x1[r * cols + c];
    }
    return ctx;
}
}  // namespace

EditExample make_inpaint_example(const Tensor& x1, std::int64_t span_start, std::int64_t span_len) {
    std::int64_t rows = x1.dim(0);
    if (span_len < 1 || span_start < 0 || span_start + span_len > rows) {
        throw ContractError("inpaint: span [" + std::to_string(span_start) + "," +
                            std::to_string(span_start + span_len) + ") out of range for " +
                            std::to_string(rows) + " frames");
    }
    EditExample ex;
    ex.op = EditOp::inpaint;
    ex.context_mask.assign(static_cast<std::size_t>(rows), 1);
    for (std::int64_t r = span_start; r < span_start + span_len; ++r) {
        ex.context_mask[static_cast<std::size_t>(r)] = 0;
    }
    ex.audio_context = masked_context(x1, ex.context_mask);
    ex.target = x1;
    return ex;
}

EditExample make_extend_example(const Tensor& x1, std::int64_t hidden_len) {
    std::int64_t rows = x1.dim(0);
    if (hidden_len < 1 || hidden_len >= rows) {
        throw ContractError("extend: hidden length " + std::to_string(hidden_len) +
                            " out of range for " + std::to_string(rows) + " frames");
    }
    EditExample ex;
    ex.op = EditOp::extend;
    ex.context_mask.assign(static_cast<std::size_t>(rows), 1);
    for (std::int64_t r = rows - hidden_len; r < rows; ++r) {
        ex.context_mask[static_cast<std::size_t>(r)] = 0;
    }
    ex.audio_context = masked_context(x1, ex.context_mask);
    ex.target = x1;
    return ex;
}

EditExample make_add_example(const Tensor& x1, const Tensor& event_component,
                             std::int64_t event_index) {
    if (!x1.same_shape(event_component)) {
        throw ShapeError("add: component shape " + event_component.shape_str() + " != " +
                         x1.shape_str());
    }
    EditExample ex;
    ex.op = EditOp::add;
    ex.context_mask.assign(static_cast<std::size_t>(x1.dim(0)), 1);
    ex.audio_context = Tensor(x1.shape());
    for (std::int64_t i = 0; i < x1.numel(); ++i) ex.audio_context[i] = x1[i] - event_component[i];
    ex.target = x1;
    ex.event_index = event_index;
    return ex;
}

EditExample make_remove_example(const Tensor& x1, const Tensor& event_component,
                                std::int64_t event_index) {
    if (!x1.same_shape(event_component)) {
        throw ShapeError("remove: component shape " + event_component.shape_str() + " != " +
                         x1.shape_str());
    }
    EditExample ex;
    ex.op = EditOp::remove;
    ex.context_mask.assign(static_cast<std::size_t>(x1.dim(0)), 1);
    ex.audio_context = x1;
    ex.target = Tensor(x1.shape());
    for (std::int64_t i = 0; i < x1.numel(); ++i) ex.target[i] = x1[i] - event_component[i];
    ex.event_index = event_index;
    return ex;
}

EditExample mask_audio_context(const Tensor& x1, const std::vector<Tensor>& event_components,
                               EditOp op, Rng& rng) {
    std::int64_t rows = x1.dim(0);
    if (rows < 4) {
        throw ContractError("mask_audio_context: need at least 4 frames, got " +
                            std::to_string(rows));
    }
    switch (op) {
        case EditOp::inpaint: {
            float frac = 0.2f + 0.4f * rng.uniform();
            std::int64_t span = std::llround(frac * static_cast<float>(rows));
            span = std::max<std::int64_t>(1, std::min(span, rows - 2));
            // Keep the span strictly interior when there is room for it.
            std::int64_t lo = rows - span >= 2 ? 1 : 0;
            std::int64_t hi = rows - span >= 2 ? rows - span - 1 : rows - span;
            std::int64_t start = lo + static_cast<std::int64_t>(
                                          rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
            return make_inpaint_example(x1, start, span);
        }
        case EditOp::extend: {
            float frac = 0.3f + 0.3f * rng.uniform();
            std::int64_t hidden = std::llround(frac * static_cast<float>(rows));
            hidden = std::max<std::int64_t>(1, std::min(hidden, rows - 1));
            return make_extend_example(x1, hidden);
        }
        case EditOp::add:
        case EditOp::remove: {
            if (event_components.empty()) {
                throw ContractError("mask_audio_context: add/remove need event components");
            }
            std::int64_t idx = static_cast<std::int64_t>(
                rng.uniform_index(static_cast<std::uint64_t>(event_components.size())));
            const Tensor& comp = event_components[static_cast<std::size_t>(idx)];
            return op == EditOp::add ? make_add_example(x1, comp, idx)
                                     : make_remove_example(x1, comp, idx);
        }
    }
    throw ContractError("mask_audio_context: unknown op");
}

CfmExample make_cfm_example(const synth::WorldConfig& world, const synth::DatasetRecord& record,
                            const TrainConfig& tc, Rng& rng) {
    float t = rng.uniform();
    Tensor x0({record.x1.dim(0), record.x1.dim(1)});
    for (std::int64_t i = 0; i < x0.numel(); ++i) x0[i] = rng.normal();

    CfmExample ex;
    ex.t = t;
    ex.bundle = dropout_conditions(record.bundle, tc.p_drop, rng);

    bool want_edit = tc.mode == TrainMode::finetune || rng.uniform() < tc.context_task_fraction;
    Tensor x1 = record.x1;
    if (want_edit && record.x1.dim(0) >= 4) {
        EditOp op = static_cast<EditOp>(rng.uniform_index(4));
        if ((op == EditOp::add || op == EditOp::remove) && record.event_components.empty()) {
            op = EditOp::inpaint;
        }
        EditExample edit = mask_audio_context(record.x1, record.event_components, op, rng);
        if (op == EditOp::remove && ex.bundle.cot_tokens) {
            // The CoT describes the desired output, so removal re-renders it
            // for the script without the removed event.
            synth::EventScript reduced = record.script;
            reduced.events.erase(reduced.events.begin() + edit.event_index);
            if (reduced.events.empty()) {
                ex.bundle.cot_tokens.reset();
            } else {
                ex.bundle.cot_tokens = synth::cot_for_script(world, reduced, rng);
            }
        }
        ex.bundle.audio_context = edit.audio_context;
        ex.bundle.context_mask = edit.context_mask;
        x1 = edit.target;
    }
    ex.x_t = interpolate(x0, x1, t);
    ex.v_target = target_velocity(x0, x1);
    return ex;
}

int cfm_loss_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                  const synth::WorldConfig& world, const synth::DatasetRecord& record,
                  const TrainConfig& tc, Rng& rng) {
    CfmExample ex = make_cfm_example(world, record, tc, rng);
    int out = build_forward(g, p, cfg, ex.x_t, ex.t, ex.bundle);
    return g.mse(out, g.leaf(ex.v_target));
}

float cfm_loss(const ModelParams& params, const ModelConfig& cfg, const synth::WorldConfig& world,
               const synth::DatasetRecord& record, const TrainConfig& tc, Rng& rng) {
    Graph g;
    ParamLeaves p = add_param_leaves(g, params);
    int loss = cfm_loss_node(g, p, cfg, world, record, tc, rng);
    return g.value(loss)[0];
}

TrainingState init_training_state(const ModelConfig& cfg, const TrainConfig& tc) {
    TrainingState st;
    st.params = init_params(cfg, tc.model_seed);
    st.ema = st.params;
    for (const auto& [name, t] : st.params.tensors) {
        st.adam_m.emplace(name, Tensor::zeros(t.shape()));
        st.adam_v.emplace(name, Tensor::zeros(t.shape()));
    }
    st.step = 0;
    st.rng_state = Rng(tc.seed).derive("train").state();
    return st;
}

void adamw_step(TrainingState& state, const std::map<std::string, Tensor>& grads,
                const TrainConfig& tc) {
    const double t = static_cast<double>(state.step) + 1.0;
    const float bias1 = static_cast<float>(1.0 - std::pow(static_cast<double>(tc.adam_beta1), t));
    const float bias2 = static_cast<float>(1.0 - std::pow(static_cast<double>(tc.adam_beta2), t));
    for (auto& [name, param] : state.params.tensors) {
        Tensor& m = state.adam_m.at(name);
        Tensor& v = state.adam_v.at(name);
        auto git = grads.find(name);
        const Tensor* grad = git == grads.end() ? nullptr : &git->second;
        for (std::int64_t i = 0; i < param.numel(); ++i) {
            float gi = grad ? (*grad)[i] : 0.0f;
            m[i] = tc.adam_beta1 * m[i] + (1.0f - tc.adam_beta1) * gi;
            v[i] = tc.adam_beta2 * v[i] + (1.0f - tc.adam_beta2) * gi * gi;
            float mhat = m[i] / bias1;
            float vhat = v[i] / bias2;
            float update = mhat / (std::sqrt(vhat) + tc.adam_eps);
            param[i] -= tc.learning_rate * (update + tc.weight_decay * param[i]);
        }
    }
    state.step += 1;
}

void ema_update(ModelParams& ema, const ModelParams& params, float decay) {
    float blend = 1.0f - decay;
    for (auto& [name, e] : ema.tensors) {
        const Tensor& p = params.at(name);
        for (std::int64_t i = 0; i < e.numel(); ++i) e[i] += blend * (p[i] - e[i]);
    }
}

std::string train_log_line(const TrainLogEntry& e) {
    nlohmann::json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["grad_norm"] = e.grad_norm;
    j["wall_ms"] = e.wall_ms;
    return j.dump();
}

TrainResult train(const ModelConfig& cfg, const TrainConfig& tc, const synth::Dataset& dataset,
                  std::optional<TrainingState> resume_from, const CheckpointSink& sink,
                  std::ostream* log_stream) {
    cfg.validate();
    tc.validate();
    if (dataset.records.empty()) throw ValidationError("train: dataset is empty");

    TrainResult result;
    result.state = resume_from ? std::move(*resume_from) : init_training_state(cfg, tc);
    TrainingState& st = result.state;
    Rng rng;
    rng.set_state(st.rng_state);

    const std::uint64_t n = dataset.records.size();
    while (st.step < static_cast<std::uint64_t>(tc.steps)) {
        auto t0 = std::chrono::steady_clock::now();
        Graph g;
        ParamLeaves p = add_param_leaves(g, st.params);
        int total = -1;
        for (std::int64_t b = 0; b < tc.batch_size; ++b) {
            std::uint64_t idx = rng.uniform_index(n);
            int loss = cfm_loss_node(g, p, cfg, dataset.world,
                                     dataset.records[static_cast<std::size_t>(idx)], tc, rng);
            total = b == 0 ? loss : g.add(total, loss);
        }
        total = g.scale(total, 1.0f / static_cast<float>(tc.batch_size));
        float loss = g.value(total)[0];
        if (!std::isfinite(loss)) {
            std::string offender = "loss node";
            for (const auto& [name, t] : st.params.tensors) {
                if (t.first_nonfinite()) {
                    offender = name;
                    break;
                }
            }
            throw NumericError("train: non-finite loss at step " + std::to_string(st.step + 1) +
                               " (first non-finite parameter: " + offender + ")");
        }
        g.backward(total);

        std::map<std::string, Tensor> grads;
        double gn2 = 0.0;
        for (const auto& [name, id] : p.ids) {
            if (!g.has_grad(id)) continue;
            const Tensor& grad = g.grad(id);
            for (std::int64_t i = 0; i < grad.numel(); ++i) {
                gn2 += static_cast<double>(grad[i]) * grad[i];
            }
            grads.emplace(name, grad);
        }
        adamw_step(st, grads, tc);
        ema_update(st.ema, st.params, tc.ema_decay);
        st.rng_state = rng.state();

        auto t1 = std::chrono::steady_clock::now();
        TrainLogEntry entry;
        entry.step = st.step;
        entry.loss = loss;
        entry.grad_norm = static_cast<float>(std::sqrt(gn2));
        entry.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.log.push_back(entry);
        if (log_stream) (*log_stream) << train_log_line(entry) << "\n";

        if (sink && tc.checkpoint_every > 0 &&
            st.step % static_cast<std::uint64_t>(tc.checkpoint_every) == 0 &&
            st.step < static_cast<std::uint64_t>(tc.steps)) {
            sink(st, false);
        }
    }
    if (sink) sink(st, true);
    return result;
}

}  // namespace ff
