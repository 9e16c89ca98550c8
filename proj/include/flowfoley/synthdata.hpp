#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "flowfoley/mmdit.hpp"
#include "flowfoley/rng.hpp"
#include "flowfoley/tensor.hpp"

namespace ff::synth {

// One sound event inside a clip. Times are fractions of the clip.
struct Event {
    std::int64_t type = 0;
    float onset = 0.0f;      // in [0,1)
    float duration = 0.1f;   // > 0, onset + duration <= 1
    float amplitude = 1.0f;  // > 0
};

struct WorldConfig {
    std::int64_t vocab = 4;  // event types
    std::int64_t latent_len = 8;
    std::int64_t latent_dim = 4;
    std::int64_t video_len = 4;
    std::int64_t video_dim = 6;
    std::int64_t text_dim = 5;
    std::int64_t caption_dim = 7;
    std::int64_t sync_dim = 3;
    std::int64_t max_events = 3;
    float noise_sigma = 0.05f;
    float ambient_scale = 0.05f;
    float cot_jitter = 0.05f;     // CoT rendering noise; lets QC regeneration rescore
    float clip_seconds = 9.1f;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EventScript {
    std::vector<Event> events;
    float clip_seconds = 9.1f;

    void validate(const WorldConfig& world) const;
};

enum class Difficulty : std::uint8_t { easy = 0, medium = 1, hard = 2 };
const char* difficulty_name(Difficulty d);

struct RecordScores {
    float semantic = 0.0f;  // video-audio alignment, higher = better aligned
    float clap = 0.0f;      // CoT-audio alignment in [0,1]
    float desync = 0.0f;    // temporal misalignment, higher = worse
    std::int64_t n_events = 0;
};

struct DatasetRecord {
    EventScript script;
    ConditionBundle bundle;
    Tensor x1;                            // [latent_len x latent_dim]
    std::vector<Tensor> event_components;  // one additive component per event
    Tensor ambient;
    Tensor noise;  // sigma-scaled noise term actually added
    std::int64_t roi_event = 0;
    Difficulty difficulty = Difficulty::easy;
    RecordScores scores;
};

struct Dataset {
    WorldConfig world;
    std::vector<DatasetRecord> records;
};

// Frozen per-world signatures (pure functions of world.seed).
Tensor event_latent_signature(const WorldConfig& world, std::int64_t type);
Tensor event_video_signature(const WorldConfig& world, std::int64_t type);
Tensor ambient_component(const WorldConfig& world);

// Raised-cosine activation of an event over latent or video frames.
float event_window(const Event& e, std::int64_t frame, std::int64_t frames);

// Structured CoT stand-in: one token per event (type one-hot, onset,
// amplitude) through a frozen projection, plus seeded jitter.
Tensor cot_for_script(const WorldConfig& world, const EventScript& script, Rng& rng);
Tensor caption_for_script(const WorldConfig& world, const EventScript& script);
Tensor roi_for_event(const WorldConfig& world, const EventScript& script, std::int64_t event_index);

DatasetRecord render_record(const EventScript& script, const WorldConfig& world, Rng& rng);

// Random script under the world's limits.
EventScript random_script(const WorldConfig& world, Rng& rng);

// Semantic pairing surrogate: two event types may be paired for add/remove
// editing iff their latent signatures are sufficiently distinct.
bool types_pairable(const WorldConfig& world, std::int64_t a, std::int64_t b,
                    float max_cosine = 0.3f);

// Composite difficulty: alignment scores count negated, desync and event
// count positively; low composite = easy.
float difficulty_composite(const RecordScores& s);
std::vector<Difficulty> assign_difficulty(const std::vector<RecordScores>& scores);

// Per-dimension band labels from the benchmark's scoring table; emitted as
// metadata only, the tertile labels are authoritative.
struct BandLabels {
    Difficulty semantic;
    Difficulty clap;
    Difficulty temporal;
    Difficulty complexity;
};
BandLabels score_bands(const RecordScores& s);

struct QcLedger {
    std::int64_t kept = 0;
    std::int64_t regenerated = 0;  // regeneration attempts (subset of kept+dropped)
    std::int64_t dropped = 0;
    float threshold = 0.2f;
    std::int64_t total() const { return kept + dropped; }
};

struct QcResult {
    std::vector<DatasetRecord> kept;
    std::vector<DatasetRecord> dropped;
    QcLedger ledger;
};

using RegenerateFn = std::function<DatasetRecord(const DatasetRecord&)>;

// Keep records with clap >= threshold; below, regenerate once and rescore;
// still below, drop.
QcResult qc_filter(std::vector<DatasetRecord> records, float threshold,
                   const RegenerateFn& regenerate);

// Rerender the CoT tokens with a fresh seed and rescore; the QC regeneration
// callback used by the data pipeline.
DatasetRecord regenerate_cot(const DatasetRecord& rec, const WorldConfig& world, Rng& rng);

// Uniform sample without replacement of ceil(fraction*n) indices.
std::vector<std::size_t> human_audit_sample(std::size_t n, float fraction, Rng& rng);

// Scores a rendered record with the world's frozen scorers.
RecordScores score_record(const WorldConfig& world, const EventScript& script, const Tensor& x1,
                          const ConditionBundle& bundle);

// Dataset container: magic "FFDS" | version u32 | world config JSON |
// record count u64 | records.
void write_dataset(const Dataset& ds, std::ostream& out);
Dataset read_dataset(std::istream& in);
void write_dataset_file(const Dataset& ds, const std::string& path);
Dataset read_dataset_file(const std::string& path);

}  // namespace ff::synth
