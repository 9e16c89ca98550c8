#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/flow.hpp"
#include "flowfoley/metrics.hpp"
#include "flowfoley/mmdit.hpp"
#include "flowfoley/sampler.hpp"
#include "flowfoley/synthdata.hpp"

#include "json.hpp"

namespace ff::cli {

// Merged configuration for one run; serialized into every output sidecar.
struct RunConfig {
    synth::WorldConfig world;
    ModelConfig model;
    TrainConfig train;
    SampleSpec sample;
    bool kl_reverse = false;
    int threads = 1;
    std::int64_t gen_records = 64;
    float qc_threshold = 0.2f;
    float audit_fraction = 0.05f;
    std::uint64_t suite_seed = 7;
    bool eval_use_ema = true;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);  // rejects unknown keys
    void validate() const;  // cross-checks world and model dimensions
};

// Defaults, optional config file, dotted-path overrides ("train.steps=500"),
// then the global seed/threads flags.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed,
                          std::optional<int> threads);

// Command implementations. Paths name the primary artifact; each command
// also writes a canonical-JSON sidecar with the full RunConfig.
void cmd_gen_data(const RunConfig& run, const std::string& out_path);

void cmd_train(const RunConfig& run, const std::string& dataset_path, const std::string& out_prefix,
               const std::string& resume_state_path = "");

struct SampleArgs {
    std::string checkpoint_path;
    std::string dataset_path;
    std::int64_t record = 0;
    bool unconditional = false;
    bool use_ema = true;
    std::string context_path;     // stage2/stage3 input latent
    std::int64_t roi_event = 0;   // stage2
    std::string op = "inpaint";   // stage3
    std::int64_t event_index = 0;
    std::int64_t span_start = -1;  // stage3 inpaint; -1 = seeded draw
    std::int64_t span_len = -1;
    std::int64_t hidden_len = -1;  // stage3 extend; -1 = seeded draw
};

void cmd_sample(const RunConfig& run, const SampleArgs& args, const std::string& out_path);
void cmd_stage1(const RunConfig& run, const SampleArgs& args, const std::string& out_path);
void cmd_stage2(const RunConfig& run, const SampleArgs& args, const std::string& out_path);
void cmd_stage3(const RunConfig& run, const SampleArgs& args, const std::string& out_path);

void cmd_eval(const RunConfig& run, const std::string& checkpoint_path,
              const std::string& dataset_path, const std::string& out_path);

// Returns true if every entry passed.
bool cmd_gradcheck(const RunConfig& run, const std::string& out_path, bool corrupt = false);

// Helpers shared with tests.
ConditionBundle stage1_bundle(const synth::DatasetRecord& rec);
std::string manifest_path_for(const std::string& dataset_path);
std::string sidecar_path_for(const std::string& artifact_path);

}  // namespace ff::cli
