#include "flowfoley/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flowfoley/errors.hpp"
#include "flowfoley/json_io.hpp"
#include "flowfoley/metrics.hpp"
#include "flowfoley/tensor_io.hpp"

namespace ff::synth {

const char* difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "?";
}

void WorldConfig::validate() const {
    auto at_least_two = [](std::int64_t v, const char* name) {
        if (v < 2) throw ValidationError(std::string("world config: ") + name + " must be >= 2");
    };
    at_least_two(vocab, "vocab");
    at_least_two(latent_len, "latent_len");
    at_least_two(latent_dim, "latent_dim");
    at_least_two(video_len, "video_len");
    at_least_two(video_dim, "video_dim");
    at_least_two(text_dim, "text_dim");
    at_least_two(caption_dim, "caption_dim");
    at_least_two(sync_dim, "sync_dim");
    if (max_events < 1) throw ValidationError("world config: max_events must be >= 1");
    if (noise_sigma < 0.0f) throw ValidationError("world config: noise_sigma must be >= 0");
    if (clip_seconds <= 0.0f) throw ValidationError("world config: clip_seconds must be positive");
}

void EventScript::validate(const WorldConfig& world) const {
    if (events.empty()) throw ValidationError("script: needs at least one event");
    if (static_cast<std::int64_t>(events.size()) > world.max_events) {
        throw ValidationError("script: " + std::to_string(events.size()) + " events exceed limit " +
                              std::to_string(world.max_events));
    }
    for (const Event& e : events) {
        if (e.type < 0 || e.type >= world.vocab) {
            throw ValidationError("script: event type " + std::to_string(e.type) +
                                  " outside vocabulary of " + std::to_string(world.vocab));
        }
        if (e.onset < 0.0f || e.onset >= 1.0f) throw ValidationError("script: onset must be in [0,1)");
        if (e.duration <= 0.0f) throw ValidationError("script: duration must be positive");
        if (e.onset + e.duration > 1.0f + 1e-6f) {
            throw ValidationError("script: event extends past the clip end");
        }
        // Zero amplitude renders a silent event; only negatives are invalid.
        if (e.amplitude < 0.0f) throw ValidationError("script: amplitude must be non-negative");
    }
}

namespace {

Tensor frozen_randn(const WorldConfig& world, const std::string& tag, std::uint64_t salt,
                    std::vector<std::int64_t> shape, float stddev = 1.0f) {
    Rng r = Rng(world.seed).derive(tag).derive(salt);
    return Tensor::randn(std::move(shape), r, stddev);
}

// Pooled mean over time, then tanh(W x + b); the frozen encoder shape used
// by the synthetic quality scores.
std::vector<double> frozen_encode(const WorldConfig& world, const std::string& tag,
                                  const Tensor& track, std::int64_t out_dim) {
    std::int64_t rows = track.rank() == 2 ? track.dim(0) : 1;
    std::int64_t cols = track.rank() == 2 ? track.dim(1) : track.numel();
    std::vector<double> pooled(static_cast<std::size_t>(cols), 0.0);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) pooled[static_cast<std::size_t>(c)] += track[r * cols + c];
    for (auto& v : pooled) v /= static_cast<double>(rows);
    Tensor w = frozen_randn(world, tag + ".w", 0, {out_dim, cols},
                            1.0f / std::sqrt(static_cast<float>(cols)));
    Tensor b = frozen_randn(world, tag + ".b", 1, {out_dim}, 0.1f);
    std::vector<double> out(static_cast<std::size_t>(out_dim));
    for (std::int64_t i = 0; i < out_dim; ++i) {
        double s = b[i];
        for (std::int64_t c = 0; c < cols; ++c) s += static_cast<double>(w[i * cols + c]) * pooled[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(i)] = std::tanh(s);
    }
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
}

metrics::ScorerSuite world_suite(const WorldConfig& world) {
    return metrics::ScorerSuite::seeded(Rng(world.seed).derive("scorers").state(), world.latent_dim,
                                        world.text_dim, world.caption_dim, world.sync_dim);
}

}  // namespace

Tensor event_latent_signature(const WorldConfig& world, std::int64_t type) {
    return frozen_randn(world, "latent-signature", static_cast<std::uint64_t>(type),
                        {world.latent_dim});
}

Tensor event_video_signature(const WorldConfig& world, std::int64_t type) {
    return frozen_randn(world, "video-signature", static_cast<std::uint64_t>(type),
                        {world.video_dim});
}

Tensor ambient_component(const WorldConfig& world) {
    return frozen_randn(world, "ambient", 0, {world.latent_len, world.latent_dim},
                        world.ambient_scale);
}

float event_window(const Event& e, std::int64_t frame, std::int64_t frames) {
    float u = (static_cast<float>(frame) + 0.5f) / static_cast<float>(frames);
    if (u < e.onset || u > e.onset + e.duration) return 0.0f;
    float phase = (u - e.onset) / e.duration;
    return 0.5f * (1.0f - std::cos(6.2831853f * phase));
}

Tensor cot_for_script(const WorldConfig& world, const EventScript& script, Rng& rng) {
    std::int64_t n = static_cast<std::int64_t>(script.events.size());
    std::int64_t feat_dim = world.vocab + 2;
    Tensor proj = frozen_randn(world, "cot-projection", 0, {world.text_dim, feat_dim},
                               1.0f / std::sqrt(static_cast<float>(feat_dim)));
    Tensor tokens({n, world.text_dim});
    for (std::int64_t i = 0; i < n; ++i) {
        const Event& e = script.events[static_cast<std::size_t>(i)];
        std::vector<float> feat(static_cast<std::size_t>(feat_dim), 0.0f);
        feat[static_cast<std::size_t>(e.type)] = 1.0f;
        feat[static_cast<std::size_t>(world.vocab)] = e.onset;
        feat[static_cast<std::size_t>(world.vocab + 1)] = e.amplitude;
        for (std::int64_t d = 0; d < world.text_dim; ++d) {
            float s = 0.0f;
            for (std::int64_t f = 0; f < feat_dim; ++f) {
                s += proj[d * feat_dim + f] * feat[static_cast<std::size_t>(f)];
            }
            tokens[i * world.text_dim + d] = s + world.cot_jitter * rng.normal();
        }
    }
    return tokens;
}

Tensor caption_for_script(const WorldConfig& world, const EventScript& script) {
    Tensor proj = frozen_randn(world, "caption-projection", 0, {world.caption_dim, world.vocab},
                               1.0f / std::sqrt(static_cast<float>(world.vocab)));
    std::vector<float> hist(static_cast<std::size_t>(world.vocab), 0.0f);
    for (const Event& e : script.events) hist[static_cast<std::size_t>(e.type)] += 1.0f;
    Tensor cap({world.caption_dim});
    for (std::int64_t d = 0; d < world.caption_dim; ++d) {
        float s = 0.0f;
        for (std::int64_t k = 0; k < world.vocab; ++k) {
            s += proj[d * world.vocab + k] * hist[static_cast<std::size_t>(k)];
        }
        cap[d] = s;
    }
    return cap;
}

Tensor roi_for_event(const WorldConfig& world, const EventScript& script, std::int64_t event_index) {
    if (event_index < 0 || event_index >= static_cast<std::int64_t>(script.events.size())) {
        throw ContractError("roi_for_event: event index " + std::to_string(event_index) +
                            " out of range");
    }
    const Event& e = script.events[static_cast<std::size_t>(event_index)];
    Tensor sig = event_video_signature(world, e.type);
    Tensor roi({world.video_len, world.video_dim});
    for (std::int64_t f = 0; f < world.video_len; ++f) {
        float w = event_window(e, f, world.video_len);
        for (std::int64_t d = 0; d < world.video_dim; ++d) roi[f * world.video_dim + d] = w * sig[d];
    }
    return roi;
}

RecordScores score_record(const WorldConfig& world, const EventScript& script, const Tensor& x1,
                          const ConditionBundle& bundle) {
    metrics::ScorerSuite suite = world_suite(world);
    RecordScores s;
    s.n_events = static_cast<std::int64_t>(script.events.size());
    if (bundle.cot_tokens) {
        double c = cosine(suite.audio_align(x1), suite.cot_align(*bundle.cot_tokens));
        s.clap = static_cast<float>(0.5 * (1.0 + c));
    }
    if (bundle.video_feats) {
        double c = cosine(frozen_encode(world, "semantic-video", *bundle.video_feats, 8),
                          frozen_encode(world, "semantic-audio", x1, 8));
        s.semantic = static_cast<float>(0.5 * (1.0 + c));
    }
    if (bundle.sync_feats) {
        double clip = static_cast<double>(world.clip_seconds);
        s.desync = static_cast<float>(
            metrics::desync(x1, *bundle.sync_feats, suite, clip, std::min(4.8, clip)));
    }
    return s;
}

DatasetRecord render_record(const EventScript& script, const WorldConfig& world, Rng& rng) {
    world.validate();
    script.validate(world);

    DatasetRecord rec;
    rec.script = script;

    const std::int64_t ll = world.latent_len, dl = world.latent_dim;
    for (const Event& e : script.events) {
        Tensor sig = event_latent_signature(world, e.type);
        Tensor comp({ll, dl});
        for (std::int64_t f = 0; f < ll; ++f) {
            float w = e.amplitude * event_window(e, f, ll);
            for (std::int64_t d = 0; d < dl; ++d) comp[f * dl + d] = w * sig[d];
        }
        rec.event_components.push_back(std::move(comp));
    }
    rec.ambient = ambient_component(world);
    rec.noise = Tensor({ll, dl});
    for (std::int64_t i = 0; i < rec.noise.numel(); ++i) {
        rec.noise[i] = world.noise_sigma * rng.normal();
    }
    // x1 assembled in stored order: components, then ambient, then noise.
    rec.x1 = Tensor::zeros({ll, dl});
    for (const Tensor& comp : rec.event_components) {
        for (std::int64_t i = 0; i < rec.x1.numel(); ++i) rec.x1[i] += comp[i];
    }
    for (std::int64_t i = 0; i < rec.x1.numel(); ++i) rec.x1[i] += rec.ambient[i];
    for (std::int64_t i = 0; i < rec.x1.numel(); ++i) rec.x1[i] += rec.noise[i];

    Tensor video({world.video_len, world.video_dim});
    for (const Event& e : script.events) {
        Tensor sig = event_video_signature(world, e.type);
        for (std::int64_t f = 0; f < world.video_len; ++f) {
            float w = event_window(e, f, world.video_len);
            for (std::int64_t d = 0; d < world.video_dim; ++d) video[f * world.video_dim + d] += w * sig[d];
        }
    }

    // Smoothed onset indicators along a frozen direction.
    Tensor sync_dir = frozen_randn(world, "sync-direction", 0, {world.sync_dim});
    Tensor sync({world.video_len, world.sync_dim});
    for (const Event& e : script.events) {
        Event marker;
        marker.type = e.type;
        marker.onset = e.onset;
        marker.duration = std::min(0.08f, 1.0f - e.onset);
        for (std::int64_t f = 0; f < world.video_len; ++f) {
            float w = event_window(marker, f, world.video_len);
            for (std::int64_t d = 0; d < world.sync_dim; ++d) sync[f * world.sync_dim + d] += w * sync_dir[d];
        }
    }

    rec.bundle.video_feats = std::move(video);
    rec.bundle.caption_emb = caption_for_script(world, script);
    rec.bundle.cot_tokens = cot_for_script(world, script, rng);
    rec.bundle.sync_feats = std::move(sync);
    rec.roi_event = 0;
    rec.bundle.roi_feats = roi_for_event(world, script, rec.roi_event);

    rec.scores = score_record(world, script, rec.x1, rec.bundle);
    return rec;
}

EventScript random_script(const WorldConfig& world, Rng& rng) {
    EventScript s;
    s.clip_seconds = world.clip_seconds;
    std::int64_t n = 1 + static_cast<std::int64_t>(
                             rng.uniform_index(static_cast<std::uint64_t>(world.max_events)));
    for (std::int64_t i = 0; i < n; ++i) {
        Event e;
        e.type = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(world.vocab)));
        e.onset = 0.7f * rng.uniform();
        e.duration = std::min(0.15f + 0.25f * rng.uniform(), 1.0f - e.onset);
        e.amplitude = 0.8f + 0.8f * rng.uniform();
        s.events.push_back(e);
    }
    return s;
}

bool types_pairable(const WorldConfig& world, std::int64_t a, std::int64_t b, float max_cosine) {
    Tensor sa = event_latent_signature(world, a);
    Tensor sb = event_latent_signature(world, b);
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t i = 0; i < sa.numel(); ++i) {
        num += static_cast<double>(sa[i]) * sb[i];
        na += static_cast<double>(sa[i]) * sa[i];
        nb += static_cast<double>(sb[i]) * sb[i];
    }
    double c = num / (std::sqrt(na) * std::sqrt(nb));
    return c < static_cast<double>(max_cosine);
}

float difficulty_composite(const RecordScores& s) {
    return -s.semantic - s.clap + s.desync + 0.25f * static_cast<float>(s.n_events - 1);
}

std::vector<Difficulty> assign_difficulty(const std::vector<RecordScores>& scores) {
    std::size_t n = scores.size();
    if (n < 3) throw ContractError("assign_difficulty: need at least 3 records");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        float ca = difficulty_composite(scores[a]);
        float cb = difficulty_composite(scores[b]);
        if (ca != cb) return ca < cb;
        return a < b;  // ties broken by record index
    });
    std::vector<Difficulty> out(n);
    std::size_t third = n / 3;
    for (std::size_t rank = 0; rank < n; ++rank) {
        Difficulty d = rank < third            ? Difficulty::easy
                       : rank < 2 * third      ? Difficulty::medium
                                               : Difficulty::hard;
        out[order[rank]] = d;
    }
    return out;
}

BandLabels score_bands(const RecordScores& s) {
    BandLabels b;
    b.semantic = s.semantic >= 0.3f   ? Difficulty::easy
                 : s.semantic >= 0.25f ? Difficulty::medium
                                       : Difficulty::hard;
    b.clap = s.clap >= 0.4f   ? Difficulty::easy
             : s.clap >= 0.3f ? Difficulty::medium
                              : Difficulty::hard;
    b.temporal = s.desync <= 0.3f   ? Difficulty::easy
                 : s.desync <= 0.6f ? Difficulty::medium
                                    : Difficulty::hard;
    b.complexity = s.n_events <= 1   ? Difficulty::easy
                   : s.n_events <= 3 ? Difficulty::medium
                                     : Difficulty::hard;
    return b;
}

QcResult qc_filter(std::vector<DatasetRecord> records, float threshold,
                   const RegenerateFn& regenerate) {
    if (threshold <= 0.0f || threshold >= 1.0f) {
        throw ContractError("qc_filter: threshold must lie in (0,1)");
    }
    QcResult res;
    res.ledger.threshold = threshold;
    for (auto& rec : records) {
        if (rec.scores.clap >= threshold) {
            res.kept.push_back(std::move(rec));
            continue;
        }
        res.ledger.regenerated += 1;
        DatasetRecord retry = regenerate(rec);
        if (retry.scores.clap >= threshold) {
            res.kept.push_back(std::move(retry));
        } else {
            res.dropped.push_back(std::move(retry));
        }
    }
    res.ledger.kept = static_cast<std::int64_t>(res.kept.size());
    res.ledger.dropped = static_cast<std::int64_t>(res.dropped.size());
    return res;
}

DatasetRecord regenerate_cot(const DatasetRecord& rec, const WorldConfig& world, Rng& rng) {
    DatasetRecord out = rec;
    out.bundle.cot_tokens = cot_for_script(world, rec.script, rng);
    out.scores = score_record(world, rec.script, out.x1, out.bundle);
    return out;
}

std::vector<std::size_t> human_audit_sample(std::size_t n, float fraction, Rng& rng) {
    if (fraction <= 0.0f || fraction > 1.0f) {
        throw ContractError("human_audit_sample: fraction must lie in (0,1]");
    }
    // The 1e-6 relative slack keeps float fractions like 0.05f from pushing
    // an exact product such as 5.0 over the next integer.
    std::size_t k = static_cast<std::size_t>(std::ceil(
        static_cast<double>(fraction) * static_cast<double>(n) * (1.0 - 1e-6)));
    k = std::min(k, n);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<std::size_t> out(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.begin(), out.end());
    return out;
}

namespace {
constexpr std::uint32_t kDatasetVersion = 1;

void write_record(const DatasetRecord& rec, std::ostream& out) {
    nlohmann::json sj = rec.script;
    put_string(out, sj.dump());
    write_bundle(rec.bundle, out);
    write_tensor(rec.x1, out);
    put_u32(out, static_cast<std::uint32_t>(rec.event_components.size()));
    for (const Tensor& c : rec.event_components) write_tensor(c, out);
    write_tensor(rec.ambient, out);
    write_tensor(rec.noise, out);
    put_u32(out, static_cast<std::uint32_t>(rec.roi_event));
    char d = static_cast<char>(rec.difficulty);
    put_bytes(out, &d, 1);
    put_f32(out, rec.scores.semantic);
    put_f32(out, rec.scores.clap);
    put_f32(out, rec.scores.desync);
    put_f32(out, static_cast<float>(rec.scores.n_events));
}

DatasetRecord read_record(std::istream& in) {
    DatasetRecord rec;
    std::string sj = get_string(in, "record script");
    rec.script = nlohmann::json::parse(sj).get<EventScript>();
    rec.bundle = read_bundle(in);
    rec.x1 = read_tensor(in);
    std::uint32_t ncomp = get_u32(in, "record component count");
    for (std::uint32_t i = 0; i < ncomp; ++i) rec.event_components.push_back(read_tensor(in));
    rec.ambient = read_tensor(in);
    rec.noise = read_tensor(in);
    rec.roi_event = get_u32(in, "record roi event");
    char d;
    get_bytes(in, &d, 1, "record difficulty");
    if (d < 0 || d > 2) throw FormatError("invalid difficulty tag " + std::to_string(int(d)), 0);
    rec.difficulty = static_cast<Difficulty>(d);
    rec.scores.semantic = get_f32(in, "record semantic score");
    rec.scores.clap = get_f32(in, "record clap score");
    rec.scores.desync = get_f32(in, "record desync score");
    rec.scores.n_events = static_cast<std::int64_t>(get_f32(in, "record event count"));
    return rec;
}
}  // namespace

void write_dataset(const Dataset& ds, std::ostream& out) {
    put_bytes(out, "FFDS", 4);
    put_u32(out, kDatasetVersion);
    nlohmann::json wj = ds.world;
    put_string(out, wj.dump());
    put_u64(out, ds.records.size());
    for (const DatasetRecord& rec : ds.records) write_record(rec, out);
}

Dataset read_dataset(std::istream& in) {
    expect_magic(in, "FFDS", "dataset");
    std::uint32_t version = get_u32(in, "dataset version");
    if (version != kDatasetVersion) {
        throw FormatError("unsupported dataset version " + std::to_string(version), 4);
    }
    Dataset ds;
    ds.world = nlohmann::json::parse(get_string(in, "world config")).get<WorldConfig>();
    std::uint64_t count = get_u64(in, "record count");
    ds.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) ds.records.push_back(read_record(in));
    return ds;
}

void write_dataset_file(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    write_dataset(ds, f);
}

Dataset read_dataset_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return read_dataset(f);
}

}  // namespace ff::synth
