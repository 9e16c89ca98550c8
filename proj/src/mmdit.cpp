#include "flowfoley/mmdit.hpp"

#include <cmath>
#include <sstream>

#include "flowfoley/errors.hpp"
#include "flowfoley/hash.hpp"
#include "flowfoley/tensor_io.hpp"

namespace ff {

std::int64_t ModelConfig::mlp_dim() const {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(hidden_size) * mlp_ratio));
}

void ModelConfig::validate() const {
    auto positive = [](std::int64_t v, const char* name) {
        if (v <= 0) throw ValidationError(std::string("model config: ") + name + " must be positive");
    };
    positive(hidden_size, "hidden_size");
    positive(heads, "heads");
    positive(multistream_layers, "multistream_layers");
    positive(singlestream_layers, "singlestream_layers");
    positive(latent_dim, "latent_dim");
    positive(latent_len, "latent_len");
    positive(video_dim, "video_dim");
    positive(text_dim, "text_dim");
    positive(caption_dim, "caption_dim");
    positive(sync_dim, "sync_dim");
    if (mlp_ratio <= 0) throw ValidationError("model config: mlp_ratio must be positive");
    if (hidden_size % heads != 0) {
        throw ValidationError("model config: hidden_size " + std::to_string(hidden_size) +
                              " not divisible by heads " + std::to_string(heads));
    }
    if (head_dim() % 2 != 0) {
        throw ValidationError("model config: head dim " + std::to_string(head_dim()) +
                              " must be even for rotary phases");
    }
    if (hidden_size % 2 != 0) {
        throw ValidationError("model config: hidden_size must be even for timestep features");
    }
}

namespace {
ModelConfig preset(std::int64_t hidden, std::int64_t heads, std::int64_t ms, std::int64_t ss) {
    ModelConfig c;
    c.hidden_size = hidden;
    c.heads = heads;
    c.multistream_layers = ms;
    c.singlestream_layers = ss;
    c.latent_dim = 64;
    c.latent_len = 196;
    c.video_dim = 1024;
    c.text_dim = 2048;
    c.caption_dim = 1024;
    c.sync_dim = 768;
    return c;
}
}  // namespace

ModelConfig ModelConfig::large() { return preset(1024, 16, 14, 7); }
ModelConfig ModelConfig::medium() { return preset(768, 12, 14, 7); }
ModelConfig ModelConfig::small_size() { return preset(512, 8, 12, 6); }

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.hidden_size = 64;
    c.heads = 4;
    c.multistream_layers = 2;
    c.singlestream_layers = 1;
    c.latent_dim = 4;
    c.latent_len = 8;
    c.video_dim = 6;
    c.text_dim = 5;
    c.caption_dim = 7;
    c.sync_dim = 3;
    return c;
}

void ConditionBundle::validate(const ModelConfig& cfg) const {
    if (audio_context.has_value() != context_mask.has_value()) {
        throw ValidationError("bundle: context_mask must be present iff audio_context is");
    }
    auto check2 = [](const std::optional<Tensor>& t, std::int64_t cols, const char* name) {
        if (t && (t->rank() != 2 || t->dim(1) != cols)) {
            throw ValidationError(std::string("bundle: ") + name + " must be [Lx" +
                                  std::to_string(cols) + "], got " + t->shape_str());
        }
    };
    check2(video_feats, cfg.video_dim, "video_feats");
    check2(cot_tokens, cfg.text_dim, "cot_tokens");
    check2(sync_feats, cfg.sync_dim, "sync_feats");
    check2(roi_feats, cfg.video_dim, "roi_feats");
    if (caption_emb && caption_emb->numel() != cfg.caption_dim) {
        throw ValidationError("bundle: caption_emb must have " + std::to_string(cfg.caption_dim) +
                              " entries, got " + caption_emb->shape_str());
    }
    if (audio_context) {
        if (audio_context->rank() != 2 || audio_context->dim(0) != cfg.latent_len ||
            audio_context->dim(1) != cfg.latent_dim) {
            throw ValidationError("bundle: audio_context must be [" + std::to_string(cfg.latent_len) +
                                  "x" + std::to_string(cfg.latent_dim) + "], got " +
                                  audio_context->shape_str());
        }
        if (static_cast<std::int64_t>(context_mask->size()) != cfg.latent_len) {
            throw ValidationError("bundle: context_mask length " +
                                  std::to_string(context_mask->size()) + " != latent_len");
        }
    }
}

void write_bundle(const ConditionBundle& b, std::ostream& out) {
    std::uint32_t flags = 0;
    if (b.video_feats) flags |= 1u;
    if (b.caption_emb) flags |= 2u;
    if (b.cot_tokens) flags |= 4u;
    if (b.sync_feats) flags |= 8u;
    if (b.roi_feats) flags |= 16u;
    if (b.audio_context) flags |= 32u;
    put_u32(out, flags);
    if (b.video_feats) write_tensor(*b.video_feats, out);
    if (b.caption_emb) write_tensor(*b.caption_emb, out);
    if (b.cot_tokens) write_tensor(*b.cot_tokens, out);
    if (b.sync_feats) write_tensor(*b.sync_feats, out);
    if (b.roi_feats) write_tensor(*b.roi_feats, out);
    if (b.audio_context) {
        write_tensor(*b.audio_context, out);
        put_u32(out, static_cast<std::uint32_t>(b.context_mask->size()));
        put_bytes(out, b.context_mask->data(), b.context_mask->size());
    }
}

ConditionBundle read_bundle(std::istream& in) {
    ConditionBundle b;
    std::uint32_t flags = get_u32(in, "bundle flags");
    if (flags & 1u) b.video_feats = read_tensor(in);
    if (flags & 2u) b.caption_emb = read_tensor(in);
    if (flags & 4u) b.cot_tokens = read_tensor(in);
    if (flags & 8u) b.sync_feats = read_tensor(in);
    if (flags & 16u) b.roi_feats = read_tensor(in);
    if (flags & 32u) {
        b.audio_context = read_tensor(in);
        std::uint32_t len = get_u32(in, "context mask length");
        std::vector<std::uint8_t> mask(len);
        if (len) get_bytes(in, mask.data(), len, "context mask");
        b.context_mask = std::move(mask);
    }
    return b;
}

std::string bundle_fingerprint(const ConditionBundle& b) {
    std::ostringstream os(std::ios::binary);
    write_bundle(b, os);
    std::string s = os.str();
    return sha256_hex(s.data(), s.size());
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_spec(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> spec;
    const std::int64_t h = cfg.hidden_size;
    const std::int64_t mlp = cfg.mlp_dim();
    auto lin = [&](const std::string& prefix, std::int64_t in, std::int64_t out) {
        spec.emplace_back(prefix + ".w", std::vector<std::int64_t>{in, out});
        spec.emplace_back(prefix + ".b", std::vector<std::int64_t>{1, out});
    };
    lin("temb.fc1", h, h);
    lin("temb.fc2", h, h);
    lin("cond.caption", cfg.caption_dim, h);
    lin("cond.video", cfg.video_dim, h);
    lin("cond.sync", cfg.sync_dim, h);
    spec.emplace_back("null.video", std::vector<std::int64_t>{1, cfg.video_dim});
    spec.emplace_back("null.caption", std::vector<std::int64_t>{1, cfg.caption_dim});
    spec.emplace_back("null.cot", std::vector<std::int64_t>{1, cfg.text_dim});
    spec.emplace_back("null.sync", std::vector<std::int64_t>{1, cfg.sync_dim});
    lin("in.audio", 2 * cfg.latent_dim + 1, h);
    lin("in.video", cfg.video_dim, h);
    lin("in.roi", cfg.video_dim, h);
    lin("in.text", cfg.text_dim, h);
    auto block = [&](const std::string& prefix) {
        lin(prefix + ".mod", h, 6 * h);
        lin(prefix + ".qkv", h, 3 * h);
        lin(prefix + ".out", h, h);
        lin(prefix + ".mlp1", h, mlp);
        lin(prefix + ".mlp2", mlp, h);
    };
    for (std::int64_t i = 0; i < cfg.multistream_layers; ++i) {
        for (const char* mod : {"audio", "video", "text"}) {
            block("ms." + std::to_string(i) + "." + mod);
        }
    }
    lin("fuse.gate", 2 * h, h);
    spec.emplace_back("fuse.video.w", std::vector<std::int64_t>{h, h});
    for (std::int64_t i = 0; i < cfg.singlestream_layers; ++i) {
        block("ss." + std::to_string(i));
    }
    lin("out", h, cfg.latent_dim);
    return spec;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, bool zero_gates) {
    ModelParams p;
    Rng root(seed);
    for (const auto& [name, shape] : param_spec(cfg)) {
        Rng r = root.derive(name);
        bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
        // The AdaLN maps and the fused video projection start at zero so a
        // fresh model is the identity between its input and output layers.
        bool is_mod = name.find(".mod.") != std::string::npos || name.rfind("fuse.video", 0) == 0;
        bool is_null = name.rfind("null.", 0) == 0;
        if (is_null) {
            p.tensors.emplace(name, Tensor::randn(shape, r, 0.02f));
        } else if (is_mod && zero_gates) {
            p.tensors.emplace(name, Tensor::zeros(shape));
        } else if (is_bias) {
            p.tensors.emplace(name, Tensor::zeros(shape));
        } else {
            float stddev = 1.0f / std::sqrt(static_cast<float>(shape[0]));
            p.tensors.emplace(name, Tensor::randn(shape, r, stddev));
        }
    }
    return p;
}

std::int64_t count_params(const ModelConfig& cfg) {
    std::int64_t total = 0;
    for (const auto& [name, shape] : param_spec(cfg)) total += shape_numel(shape);
    return total;
}

std::int64_t linear_param_count(std::int64_t in_dim, std::int64_t out_dim) {
    return in_dim * out_dim + out_dim;
}

Tensor timestep_features(float t, std::int64_t dim) {
    if (t < 0.0f || t > 1.0f) {
        throw ContractError("timestep features: t must lie in [0,1], got " + std::to_string(t));
    }
    if (dim <= 0 || dim % 2 != 0) {
        throw ContractError("timestep features: dim must be positive and even");
    }
    std::int64_t half = dim / 2;
    Tensor f({1, dim});
    for (std::int64_t i = 0; i < half; ++i) {
        double omega = half == 1 ? 1.0
                                 : std::pow(10000.0, static_cast<double>(i) /
                                                         static_cast<double>(half - 1));
        f[i] = static_cast<float>(std::sin(omega * static_cast<double>(t)));
        f[half + i] = static_cast<float>(std::cos(omega * static_cast<double>(t)));
    }
    return f;
}

Tensor timestep_features_ddt(float t, std::int64_t dim) {
    std::int64_t half = dim / 2;
    Tensor f({1, dim});
    for (std::int64_t i = 0; i < half; ++i) {
        double omega = half == 1 ? 1.0
                                 : std::pow(10000.0, static_cast<double>(i) /
                                                         static_cast<double>(half - 1));
        f[i] = static_cast<float>(omega * std::cos(omega * static_cast<double>(t)));
        f[half + i] = static_cast<float>(-omega * std::sin(omega * static_cast<double>(t)));
    }
    return f;
}

int ParamLeaves::at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw ContractError("unknown parameter leaf: " + name);
    return it->second;
}

ParamLeaves add_param_leaves(Graph& g, const ModelParams& params) {
    ParamLeaves p;
    for (const auto& [name, t] : params.tensors) p.ids.emplace(name, g.leaf(t));
    return p;
}

int linear_node(Graph& g, int x, const ParamLeaves& p, const std::string& prefix) {
    return g.add_rowvec(g.matmul(x, p.at(prefix + ".w")), p.at(prefix + ".b"));
}

int timestep_embed_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, float t) {
    int feats = g.leaf(timestep_features(t, cfg.hidden_size));
    int h1 = g.silu(linear_node(g, feats, p, "temb.fc1"));
    return linear_node(g, h1, p, "temb.fc2");
}

namespace {

struct RawConditionNodes {
    int video;    // [Lv x video_dim] or null token [1 x video_dim]
    int caption;  // [1 x caption_dim]
    int cot;      // [Lt x text_dim] or null token
    int sync;     // [Lsy x sync_dim] or null token
};

RawConditionNodes raw_condition_nodes(Graph& g, const ParamLeaves& p,
                                      const ConditionBundle& bundle) {
    RawConditionNodes r;
    r.video = bundle.video_feats ? g.leaf(*bundle.video_feats) : p.at("null.video");
    r.caption = bundle.caption_emb
                    ? g.leaf(bundle.caption_emb->reshaped({1, bundle.caption_emb->numel()}))
                    : p.at("null.caption");
    r.cot = bundle.cot_tokens ? g.leaf(*bundle.cot_tokens) : p.at("null.cot");
    r.sync = bundle.sync_feats ? g.leaf(*bundle.sync_feats) : p.at("null.sync");
    return r;
}

int global_condition_from_raw(Graph& g, const ParamLeaves& p, const RawConditionNodes& raw,
                              int t_emb) {
    int cap = linear_node(g, raw.caption, p, "cond.caption");
    int vid = linear_node(g, g.mean_rows(raw.video), p, "cond.video");
    int syn = linear_node(g, g.mean_rows(raw.sync), p, "cond.sync");
    return g.add(g.add(g.add(cap, vid), syn), t_emb);
}

struct Modulation {
    int shift_attn, scale_attn, gate_attn, shift_mlp, scale_mlp, gate_mlp;
};

Modulation modulation_nodes(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                            const std::string& prefix, int silu_cg) {
    int mod = linear_node(g, silu_cg, p, prefix + ".mod");
    const std::int64_t h = cfg.hidden_size;
    Modulation m;
    m.shift_attn = g.slice_cols(mod, 0, h);
    m.scale_attn = g.slice_cols(mod, h, 2 * h);
    m.gate_attn = g.slice_cols(mod, 2 * h, 3 * h);
    m.shift_mlp = g.slice_cols(mod, 3 * h, 4 * h);
    m.scale_mlp = g.slice_cols(mod, 4 * h, 5 * h);
    m.gate_mlp = g.slice_cols(mod, 5 * h, 6 * h);
    return m;
}

int mlp_nodes(Graph& g, const ParamLeaves& p, const std::string& prefix, int x) {
    return linear_node(g, g.gelu(linear_node(g, x, p, prefix + ".mlp1")), p, prefix + ".mlp2");
}

struct QkvNodes {
    int q, k, v;
};

QkvNodes qkv_nodes(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                   const std::string& prefix, int x_norm) {
    const std::int64_t h = cfg.hidden_size;
    int qkv = linear_node(g, x_norm, p, prefix + ".qkv");
    QkvNodes out;
    out.q = g.rope(g.slice_cols(qkv, 0, h), cfg.heads);
    out.k = g.rope(g.slice_cols(qkv, h, 2 * h), cfg.heads);
    out.v = g.slice_cols(qkv, 2 * h, 3 * h);
    return out;
}

}  // namespace

int global_condition_node(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                          const ConditionBundle& bundle, int t_emb) {
    bundle.validate(cfg);
    RawConditionNodes raw = raw_condition_nodes(g, p, bundle);
    return global_condition_from_raw(g, p, raw, t_emb);
}

StreamNodes multi_stream_block(Graph& g, const ParamLeaves& p, const ModelConfig& cfg,
                               std::int64_t layer, const StreamNodes& in, int silu_cg) {
    if (in.audio < 0) throw ContractError("multi_stream_block: audio stream is required");
    const std::string base = "ms." + std::to_string(layer) + ".";

    struct Stream {
        std::string prefix;
        int x;
        Modulation mod;
        QkvNodes qkv;
        std::int64_t len;
        int attn_out = -1;
    };
    std::vector<Stream> streams;
    streams.push_back({base + "audio", in.audio, {}, {}, 0, -1});
    if (in.video) streams.push_back({base + "video", *in.video, {}, {}, 0, -1});
    if (in.text) streams.push_back({base + "text", *in.text, {}, {}, 0, -1});

    std::vector<int> qs, ks, vs;
    for (auto& s : streams) {
        s.len = g.value(s.x).dim(0);
        s.mod = modulation_nodes(g, p, cfg, s.prefix, silu_cg);
        int xn = modulated_layer_norm(g, s.x, s.mod.scale_attn, s.mod.shift_attn, cfg.ln_eps);
        s.qkv = qkv_nodes(g, p, cfg, s.prefix, xn);
        qs.push_back(s.qkv.q);
        ks.push_back(s.qkv.k);
        vs.push_back(s.qkv.v);
    }

    // One joint attention over the concatenated token sequence.
    int q_all = streams.size() == 1 ? qs[0] : g.concat_rows(qs);
    int k_all = streams.size() == 1 ? ks[0] : g.concat_rows(ks);
    int v_all = streams.size() == 1 ? vs[0] : g.concat_rows(vs);
    int attn = g.merge_heads(g.attention(g.split_heads(q_all, cfg.heads),
                                         g.split_heads(k_all, cfg.heads),
                                         g.split_heads(v_all, cfg.heads)));

    std::int64_t offset = 0;
    for (auto& s : streams) {
        s.attn_out = streams.size() == 1 ? attn : g.slice_rows(attn, offset, offset + s.len);
        offset += s.len;
    }

    std::vector<int> outs;
    for (auto& s : streams) {
        int proj = linear_node(g, s.attn_out, p, s.prefix + ".out");
        int x1 = g.add(s.x, g.mul_rowvec(proj, s.mod.gate_attn));
        int xn2 = modulated_layer_norm(g, x1, s.mod.scale_mlp, s.mod.shift_mlp, cfg.ln_eps);
        int mlp = mlp_nodes(g, p, s.prefix, xn2);
        outs.push_back(g.add(x1, g.mul_rowvec(mlp, s.mod.gate_mlp)));
    }

    StreamNodes result;
    std::size_t idx = 0;
    result.audio = outs[idx++];
    if (in.video) result.video = outs[idx++];
    if (in.text) result.text = outs[idx++];
    return result;
}

int gated_fuse(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, int audio, int video) {
    std::int64_t la = g.value(audio).dim(0);
    std::int64_t lv = g.value(video).dim(0);
    if (lv > la) {
        throw ContractError("gated_fuse: video length " + std::to_string(lv) +
                            " exceeds audio length " + std::to_string(la));
    }
    int vup = g.upsample_rows(video, la, cfg.nearest_upsample);
    int gate = g.sigmoid(linear_node(g, g.concat_cols(audio, vup), p, "fuse.gate"));
    int vproj = g.matmul(vup, p.at("fuse.video.w"));
    return g.add(audio, g.mul(gate, vproj));
}

int single_stream_block(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, std::int64_t layer,
                        int x, int silu_cg) {
    const std::string prefix = "ss." + std::to_string(layer);
    Modulation mod = modulation_nodes(g, p, cfg, prefix, silu_cg);
    int xn = modulated_layer_norm(g, x, mod.scale_attn, mod.shift_attn, cfg.ln_eps);
    QkvNodes qkv = qkv_nodes(g, p, cfg, prefix, xn);
    int attn = g.merge_heads(g.attention(g.split_heads(qkv.q, cfg.heads),
                                         g.split_heads(qkv.k, cfg.heads),
                                         g.split_heads(qkv.v, cfg.heads)));
    int proj = linear_node(g, attn, p, prefix + ".out");
    int x1 = g.add(x, g.mul_rowvec(proj, mod.gate_attn));
    int xn2 = modulated_layer_norm(g, x1, mod.scale_mlp, mod.shift_mlp, cfg.ln_eps);
    int mlp = mlp_nodes(g, p, prefix, xn2);
    return g.add(x1, g.mul_rowvec(mlp, mod.gate_mlp));
}

Tensor make_audio_input(const ModelConfig& cfg, const Tensor& x_t, const ConditionBundle& bundle) {
    if (x_t.rank() != 2 || x_t.dim(0) != cfg.latent_len || x_t.dim(1) != cfg.latent_dim) {
        throw ShapeError("forward: x_t must be [" + std::to_string(cfg.latent_len) + "x" +
                         std::to_string(cfg.latent_dim) + "], got " + x_t.shape_str());
    }
    const std::int64_t dl = cfg.latent_dim;
    const std::int64_t cols = 2 * dl + 1;
    Tensor aug({cfg.latent_len, cols});
    for (std::int64_t f = 0; f < cfg.latent_len; ++f) {
        for (std::int64_t c = 0; c < dl; ++c) aug[f * cols + c] = x_t[f * dl + c];
        bool given = bundle.audio_context && (*bundle.context_mask)[static_cast<std::size_t>(f)] != 0;
        if (given) {
            for (std::int64_t c = 0; c < dl; ++c)
                aug[f * cols + dl + c] = (*bundle.audio_context)[f * dl + c];
        }
        aug[f * cols + 2 * dl] = given ? 1.0f : 0.0f;
    }
    return aug;
}

int build_forward(Graph& g, const ParamLeaves& p, const ModelConfig& cfg, const Tensor& x_t,
                  float t, const ConditionBundle& bundle) {
    cfg.validate();
    bundle.validate(cfg);
    if (t < 0.0f || t > 1.0f) {
        throw ContractError("forward: t must lie in [0,1], got " + std::to_string(t));
    }
    x_t.require_finite("forward x_t");

    RawConditionNodes raw = raw_condition_nodes(g, p, bundle);
    int t_emb = timestep_embed_node(g, p, cfg, t);
    int c_g = global_condition_from_raw(g, p, raw, t_emb);
    int silu_cg = g.silu(c_g);

    StreamNodes streams;
    streams.audio = linear_node(g, g.leaf(make_audio_input(cfg, x_t, bundle)), p, "in.audio");
    // ROI features ride the video stream; with video absent they carry it alone.
    if (bundle.roi_feats) {
        int roi = linear_node(g, g.leaf(*bundle.roi_feats), p, "in.roi");
        if (bundle.video_feats) {
            streams.video = g.add(linear_node(g, raw.video, p, "in.video"), roi);
        } else {
            streams.video = roi;
        }
    } else {
        streams.video = linear_node(g, raw.video, p, "in.video");
    }
    streams.text = linear_node(g, raw.cot, p, "in.text");

    for (std::int64_t i = 0; i < cfg.multistream_layers; ++i) {
        streams = multi_stream_block(g, p, cfg, i, streams, silu_cg);
    }
    int fused = gated_fuse(g, p, cfg, streams.audio, *streams.video);
    for (std::int64_t i = 0; i < cfg.singlestream_layers; ++i) {
        fused = single_stream_block(g, p, cfg, i, fused, silu_cg);
    }
    return linear_node(g, fused, p, "out");
}

Tensor mmdit_forward(const ModelParams& params, const ModelConfig& cfg, const Tensor& x_t, float t,
                     const ConditionBundle& bundle) {
    Graph g;
    ParamLeaves p = add_param_leaves(g, params);
    int out = build_forward(g, p, cfg, x_t, t, bundle);
    return g.value(out);
}

}  // namespace ff
