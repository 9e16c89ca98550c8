#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/tensor.hpp"

#include "json.hpp"

namespace ff::metrics {

// Gaussian fit of an embedding population: sample mean and unbiased (n-1)
// covariance, kept in double precision.
struct EmbedStats {
    std::vector<double> mean;  // d
    std::vector<double> cov;   // d x d row-major, symmetric
    std::int64_t dim = 0;
    std::int64_t count = 0;
};

EmbedStats embed_stats(const std::vector<std::vector<double>>& embeddings);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), computed through the
// symmetric product Sa^{1/2} Sb Sa^{1/2}.
double frechet_distance(const EmbedStats& a, const EmbedStats& b);

// Mean of the per-channel Frechet distances.
double stereo_fd(const EmbedStats& gen_left, const EmbedStats& gen_right,
                 const EmbedStats& ref_left, const EmbedStats& ref_right);
double stereo_fd(const std::vector<std::vector<double>>& gen_left,
                 const std::vector<std::vector<double>>& gen_right,
                 const std::vector<std::vector<double>>& ref_left,
                 const std::vector<std::vector<double>>& ref_right);

// Mean over pairs of KL(reference || generated); both distributions floored
// at 1e-9 and renormalized. `reverse` flips the direction.
double kl_labels(const std::vector<std::vector<double>>& generated,
                 const std::vector<std::vector<double>>& reference, bool reverse = false);

// Cosine similarity; throws on zero vectors.
double clap_score(const std::vector<double>& audio_emb, const std::vector<double>& text_emb);

// Frames covered by a fixed-length window: seconds map to frames by
// round-half-up of fraction * latent_len. Windows are [0,w) and [len-w,len).
std::int64_t desync_window_frames(double clip_seconds, double window_seconds,
                                  std::int64_t latent_len);

// Frozen seeded stand-ins for the pretrained scorers. Every map is an
// affine-plus-nonlinearity function of pooled features; same seed, same
// scorer.
struct ScorerSuite {
    std::uint64_t seed = 0;
    std::int64_t embed_dim = 8;
    std::int64_t num_classes = 8;
    std::int64_t align_dim = 8;

    std::function<std::vector<double>(const Tensor& latent)> embedder;
    std::function<std::vector<double>(const Tensor& latent)> classifier;  // simplex output
    std::function<std::vector<double>(const Tensor& latent)> audio_align;
    std::function<std::vector<double>(const Tensor& cot_tokens)> cot_align;
    std::function<std::vector<double>(const Tensor& caption_emb)> caption_align;
    std::function<double(const Tensor& latent_window, const Tensor& sync_window)> sync_scorer;

    static ScorerSuite seeded(std::uint64_t seed, std::int64_t latent_dim, std::int64_t text_dim,
                              std::int64_t caption_dim, std::int64_t sync_dim,
                              std::int64_t embed_dim = 8, std::int64_t num_classes = 8,
                              std::int64_t align_dim = 8);
};

// Mean of the first-window and last-window misalignment scores.
double desync(const Tensor& latent, const Tensor& sync_feats, const ScorerSuite& suite,
              double clip_seconds = 9.1, double window_seconds = 4.8);

// One clip with the conditioning needed for alignment metrics.
struct EvalItem {
    Tensor latent;
    std::optional<Tensor> cot_tokens;
    std::optional<Tensor> caption_emb;
    std::optional<Tensor> sync_feats;
};

struct MetricProtocol {
    bool kl_reverse = false;
    double clip_seconds = 9.1;
    double window_seconds = 4.8;
    int threads = 1;
};

struct MetricReport {
    std::optional<double> fd;
    std::optional<double> fd_stereo;
    std::optional<double> kl;
    std::optional<double> clap_cot;
    std::optional<double> clap_cap;
    std::optional<double> desync;
    nlohmann::json protocol;
    std::vector<std::string> errors;  // per-metric failure notes
};

MetricReport evaluate(const std::vector<EvalItem>& generated, const std::vector<EvalItem>& reference,
                      const ScorerSuite& suite, const MetricProtocol& protocol);

nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace ff::metrics
