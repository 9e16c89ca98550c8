#pragma once

#include <iosfwd>
#include <string>

#include "flowfoley/mmdit.hpp"

namespace ff {

struct TrainingState;

// Model checkpoint:
//   magic "FFCK" | format version u32 | config canonical JSON (length-
//   prefixed) | param count u32 | (name, tensor)* | EMA section in the same
//   layout | trailing CRC-32 of all prior bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    ModelParams ema;
};

void write_checkpoint(const Checkpoint& ck, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void write_checkpoint_file(const Checkpoint& ck, const std::string& path);
Checkpoint read_checkpoint_file(const std::string& path);

// Optimizer-state sidecar ("FFTS") holding everything a checkpoint lacks to
// resume bit-exactly: step counter, rng state and Adam moments.
void write_train_state(const TrainingState& state, const ModelConfig& cfg, std::ostream& out);
void write_train_state_file(const TrainingState& state, const ModelConfig& cfg,
                            const std::string& path);
// Returns the state and the config it was written under.
std::pair<TrainingState, ModelConfig> read_train_state(std::istream& in);
std::pair<TrainingState, ModelConfig> read_train_state_file(const std::string& path);

}  // namespace ff
