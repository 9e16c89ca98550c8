#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/autodiff.hpp"
#include "flowfoley/rng.hpp"
#include "flowfoley/tensor.hpp"

namespace ff {

// Architecture hyperparameters. The parameter set (names and shapes) is a
// pure function of this struct.
struct ModelConfig {
    std::int64_t hidden_size = 64;
    std::int64_t heads = 4;
    std::int64_t multistream_layers = 2;
    std::int64_t singlestream_layers = 1;
    std::int64_t latent_dim = 4;
    std::int64_t latent_len = 8;
    std::int64_t video_dim = 6;
    std::int64_t text_dim = 5;
    std::int64_t caption_dim = 7;
    std::int64_t sync_dim = 3;
    double mlp_ratio = 4.0;
    bool nearest_upsample = false;  // ablation switch; linear interpolation by default
    float ln_eps = 1e-5f;

    std::int64_t head_dim() const { return hidden_size / heads; }
    std::int64_t mlp_dim() const;
    std::int64_t depth() const { return multistream_layers + singlestream_layers; }

    void validate() const;  // throws ValidationError

    static ModelConfig large();
    static ModelConfig medium();
    static ModelConfig small_size();
    static ModelConfig toy();
};

// All conditioning signals for one clip. Absent fields are replaced by
// learned null embeddings inside forward, never by zeros.
struct ConditionBundle {
    std::optional<Tensor> video_feats;    // [Lv x video_dim]
    std::optional<Tensor> caption_emb;    // [caption_dim]
    std::optional<Tensor> cot_tokens;     // [Lt x text_dim]
    std::optional<Tensor> sync_feats;     // [Lv x sync_dim]
    std::optional<Tensor> roi_feats;      // [Lv x video_dim]
    std::optional<Tensor> audio_context;  // [latent_len x latent_dim]
    std::optional<std::vector<std::uint8_t>> context_mask;  // 1 = frame is given context

    void validate(const ModelConfig& cfg) const;
};

void write_bundle(const ConditionBundle& b, std::ostream& out);
ConditionBundle read_bundle(std::istream& in);
std::string bundle_fingerprint(const ConditionBundle& b);  // SHA-256 hex

struct ModelParams {
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

// Deterministic (name, shape) list for a config.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_spec(const ModelConfig& cfg);

// Seeded initialization. With zero_gates (the default) the AdaLN modulation
// maps start at zero, so every block is the identity at initialization.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, bool zero_gates = true);

std::int64_t count_params(const ModelConfig& cfg);
std::int64_t linear_param_count(std::int64_t in_dim, std::int64_t out_dim);

// Sinusoidal timestep features at geometrically spaced frequencies,
// layout [sin..., cos...]; dim must be even, t in [0,1].
Tensor timestep_features(float t, std::int64_t dim);
Tensor timestep_features_ddt(float t, std::int64_t dim);  // analytic d/dt

// Parameter leaves registered in a graph, shared by all forward passes
// built on that graph.
struct ParamLeaves {
    std::map<std::string, int> ids;
    int at(const std::string& name) const;
};
ParamLeaves add_param_leaves(Graph& g, const ModelParams& params);

// Graph builders for the model pieces. All return node ids.
int linear_node(Graph& g, int x, const ParamLeaves& p, const std::string& prefix);
int timestep_embed_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, float t);
int global_condition_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                          const ConditionBundle& bundle, int t_emb);

struct StreamNodes {
    int audio = -1;
    std::optional<int> video;
    std::optional<int> text;
};

// One multi-stream block: per-modality AdaLN/qkv/output/MLP parameters with
// a single joint attention over the concatenated token sequence.
StreamNodes multi_stream_block(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                               std::int64_t layer, const StreamNodes& in, int silu_cg);
int gated_fuse(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, int audio, int video);
int single_stream_block(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, std::int64_t layer,
                        int x, int silu_cg);

// Channel-wise input augmentation: [x_t | masked context | mask indicator].
Tensor make_audio_input(const ModelConfig& cfg, const Tensor& x_t, const ConditionBundle& bundle);

// Full velocity-field forward pass as a graph; returns the output node id.
int build_forward(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, const Tensor& x_t,
                  float t, const ConditionBundle& bundle);

// Convenience wrapper building a throwaway graph.
Tensor mmdit_forward(const ModelParams& params, const ModelConfig& cfg, const Tensor& x_t, float t,
                     const ConditionBundle& bundle);

}  // namespace ff
