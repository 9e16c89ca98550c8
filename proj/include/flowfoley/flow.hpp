#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/mmdit.hpp"
#include "flowfoley/rng.hpp"
#include "flowfoley/synthdata.hpp"
#include "flowfoley/tensor.hpp"

namespace ff {

enum class EditOp { inpaint, extend, add, remove };
const char* edit_op_name(EditOp op);
EditOp edit_op_from_name(const std::string& name);

enum class TrainMode { foundation, finetune };

struct TrainConfig {
    std::int64_t steps = 2000;
    std::int64_t batch_size = 4;
    float learning_rate = 1e-4f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.95f;
    float adam_eps = 1e-8f;
    float weight_decay = 0.01f;
    float p_drop = 0.2f;
    float ema_decay = 0.999f;
    float context_task_fraction = 0.5f;  // finetune mode trains editing tasks only
    TrainMode mode = TrainMode::foundation;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::uint64_t model_seed = 0;

    void validate() const;
};

// Rectified (straight) interpolant: x_t = (1-t)*x0 + t*x1.
Tensor interpolate(const Tensor& x0, const Tensor& x1, float t);
// Constant velocity along the straight path: v = x1 - x0.
Tensor target_velocity(const Tensor& x0, const Tensor& x1);

// Independently hides each modality group (video+sync, caption, cot, roi,
// context+mask) with probability p_drop. The input bundle is untouched.
ConditionBundle dropout_conditions(const ConditionBundle& bundle, float p_drop, Rng& rng);

struct EditExample {
    EditOp op;
    Tensor audio_context;
    std::vector<std::uint8_t> context_mask;
    Tensor target;
    std::int64_t event_index = -1;            // add/remove only
    std::optional<Tensor> cot_override;       // remove rewrites CoT to the target script
};

// Deterministic builders for the four editing tasks.
EditExample make_inpaint_example(const Tensor& x1, std::int64_t span_start, std::int64_t span_len);
EditExample make_extend_example(const Tensor& x1, std::int64_t hidden_len);
EditExample make_add_example(const Tensor& x1, const Tensor& event_component,
                             std::int64_t event_index = -1);
EditExample make_remove_example(const Tensor& x1, const Tensor& event_component,
                                std::int64_t event_index = -1);

// Randomized self-supervised editing example from a clean latent: inpaint
// hides an interior span of 20-60% of frames, extend hides the last 30-60%,
// add/remove use a random event component.
EditExample mask_audio_context(const Tensor& x1, const std::vector<Tensor>& event_components,
                               EditOp op, Rng& rng);

// One training example after dropout and (optionally) editing conversion.
struct CfmExample {
    Tensor x_t;
    float t = 0.0f;
    Tensor v_target;
    ConditionBundle bundle;
};

CfmExample make_cfm_example(const synth::WorldConfig& world, const synth::DatasetRecord& record,
                            const TrainConfig& tc, Rng& rng);

// Flow-matching regression loss for one record; returns the scalar loss node.
int cfm_loss_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                  const synth::WorldConfig& world, const synth::DatasetRecord& record,
                  const TrainConfig& tc, Rng& rng);
float cfm_loss(const ModelParams& params, const ModelConfig& cfg, const synth::WorldConfig& world,
               const synth::DatasetRecord& record, const TrainConfig& tc, Rng& rng);

struct TrainingState {
    ModelParams params;
    ModelParams ema;
    std::map<std::string, Tensor> adam_m;
    std::map<std::string, Tensor> adam_v;
    std::uint64_t step = 0;
    std::uint64_t rng_state = 0;
};

TrainingState init_training_state(const ModelConfig& cfg, const TrainConfig& tc);

// Decoupled-weight-decay Adam over all parameters; missing grads count as
// zero (the decay still applies).
void adamw_step(TrainingState& state, const std::map<std::string, Tensor>& grads,
                const TrainConfig& tc);
void ema_update(ModelParams& ema, const ModelParams& params, float decay);

struct TrainLogEntry {
    std::uint64_t step = 0;
    float loss = 0.0f;
    float grad_norm = 0.0f;
    double wall_ms = 0.0;
};

using CheckpointSink = std::function<void(const TrainingState&, bool final)>;

struct TrainResult {
    TrainingState state;
    std::vector<TrainLogEntry> log;
};

// Runs (or resumes) training up to tc.steps optimizer steps. The log stream,
// when given, receives one JSON object per line.
TrainResult train(const ModelConfig& cfg, const TrainConfig& tc, const synth::Dataset& dataset,
                  std::optional<TrainingState> resume_from = std::nullopt,
                  const CheckpointSink& sink = {}, std::ostream* log_stream = nullptr);

std::string train_log_line(const TrainLogEntry& e);

}  // namespace ff
