#include "flowfoley/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "flowfoley/errors.hpp"
#include "flowfoley/linalg.hpp"
#include "flowfoley/rng.hpp"

namespace ff::metrics {

EmbedStats embed_stats(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.size() < 2) throw ContractError("embed_stats: need at least 2 embeddings");
    const std::int64_t n = static_cast<std::int64_t>(embeddings.size());
    const std::int64_t d = static_cast<std::int64_t>(embeddings[0].size());
    for (const auto& e : embeddings) {
        if (static_cast<std::int64_t>(e.size()) != d) {
            throw ShapeError("embed_stats: inconsistent embedding dims");
        }
    }
    EmbedStats s;
    s.dim = d;
    s.count = n;
    s.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (const auto& e : embeddings)
        for (std::int64_t i = 0; i < d; ++i) s.mean[static_cast<std::size_t>(i)] += e[static_cast<std::size_t>(i)];
    for (auto& m : s.mean) m /= static_cast<double>(n);
    s.cov.assign(static_cast<std::size_t>(d * d), 0.0);
    for (const auto& e : embeddings) {
        for (std::int64_t i = 0; i < d; ++i) {
            double di = e[static_cast<std::size_t>(i)] - s.mean[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < d; ++j) {
                double dj = e[static_cast<std::size_t>(j)] - s.mean[static_cast<std::size_t>(j)];
                s.cov[static_cast<std::size_t>(i * d + j)] += di * dj;
            }
        }
    }
    for (auto& c : s.cov) c /= static_cast<double>(n - 1);  // unbiased
    return s;
}

double frechet_distance(const EmbedStats& a, const EmbedStats& b) {
    if (a.dim != b.dim) {
        throw ShapeError("frechet_distance: dims " + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim));
    }
    const std::int64_t d = a.dim;
    double mean_term = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        double diff = a.mean[static_cast<std::size_t>(i)] - b.mean[static_cast<std::size_t>(i)];
        mean_term += diff * diff;
    }
    double tr_a = 0.0, tr_b = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        tr_a += a.cov[static_cast<std::size_t>(i * d + i)];
        tr_b += b.cov[static_cast<std::size_t>(i * d + i)];
    }
    // Tr((Sa Sb)^{1/2}) through the symmetric form Sa^{1/2} Sb Sa^{1/2}.
    std::vector<double> ra = psd_sqrt(a.cov, d);
    std::vector<double> mid = matmul_dense(matmul_dense(ra, b.cov, d), ra, d);
    for (std::int64_t i = 0; i < d; ++i) {
        for (std::int64_t j = i + 1; j < d; ++j) {
            double v = 0.5 * (mid[static_cast<std::size_t>(i * d + j)] +
                              mid[static_cast<std::size_t>(j * d + i)]);
            mid[static_cast<std::size_t>(i * d + j)] = v;
            mid[static_cast<std::size_t>(j * d + i)] = v;
        }
    }
    double tr_sqrt = trace_psd_sqrt(mid, d);
    return mean_term + tr_a + tr_b - 2.0 * tr_sqrt;
}

double stereo_fd(const EmbedStats& gen_left, const EmbedStats& gen_right,
                 const EmbedStats& ref_left, const EmbedStats& ref_right) {
    return 0.5 * (frechet_distance(gen_left, ref_left) + frechet_distance(gen_right, ref_right));
}

double stereo_fd(const std::vector<std::vector<double>>& gen_left,
                 const std::vector<std::vector<double>>& gen_right,
                 const std::vector<std::vector<double>>& ref_left,
                 const std::vector<std::vector<double>>& ref_right) {
    return stereo_fd(embed_stats(gen_left), embed_stats(gen_right), embed_stats(ref_left),
                     embed_stats(ref_right));
}

namespace {
std::vector<double> floor_and_normalize(const std::vector<double>& p) {
    std::vector<double> q(p.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        q[i] = std::max(p[i], 1e-9);
        sum += q[i];
    }
    for (auto& v : q) v /= sum;
    return q;
}
}  // namespace

double kl_labels(const std::vector<std::vector<double>>& generated,
                 const std::vector<std::vector<double>>& reference, bool reverse) {
    if (generated.size() != reference.size()) {
        throw ShapeError("kl_labels: " + std::to_string(generated.size()) + " generated vs " +
                         std::to_string(reference.size()) + " reference distributions");
    }
    if (generated.empty()) throw ContractError("kl_labels: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        if (generated[i].size() != reference[i].size()) {
            throw ShapeError("kl_labels: class count mismatch at pair " + std::to_string(i));
        }
        std::vector<double> p = floor_and_normalize(reverse ? generated[i] : reference[i]);
        std::vector<double> q = floor_and_normalize(reverse ? reference[i] : generated[i]);
        double kl = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) kl += p[k] * std::log(p[k] / q[k]);
        total += kl;
    }
    return total / static_cast<double>(generated.size());
}

double clap_score(const std::vector<double>& audio_emb, const std::vector<double>& text_emb) {
    if (audio_emb.size() != text_emb.size()) {
        throw ShapeError("clap_score: dims " + std::to_string(audio_emb.size()) + " vs " +
                         std::to_string(text_emb.size()));
    }
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < audio_emb.size(); ++i) {
        num += audio_emb[i] * text_emb[i];
        na += audio_emb[i] * audio_emb[i];
        nb += text_emb[i] * text_emb[i];
    }
    if (na == 0.0 || nb == 0.0) throw ContractError("clap_score: zero vector");
    return num / (std::sqrt(na) * std::sqrt(nb));
}

std::int64_t desync_window_frames(double clip_seconds, double window_seconds,
                                  std::int64_t latent_len) {
    if (clip_seconds < window_seconds) {
        throw ContractError("desync: clip of " + std::to_string(clip_seconds) +
                            " s is shorter than the " + std::to_string(window_seconds) +
                            " s window");
    }
    // Seconds map to frames by round-half-up of the clip fraction.
    double frames = window_seconds / clip_seconds * static_cast<double>(latent_len);
    std::int64_t w = static_cast<std::int64_t>(std::floor(frames + 0.5));
    return std::max<std::int64_t>(1, std::min(w, latent_len));
}

namespace {

Tensor slice_row_range(const Tensor& t, std::int64_t r0, std::int64_t r1) {
    std::int64_t cols = t.dim(1);
    Tensor out({r1 - r0, cols});
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = t[r0 * cols + i];
    return out;
}

// Mean over time plus the means of the first and second halves; gives the
// frozen scorers a little temporal sensitivity.
std::vector<double> pool3(const Tensor& track) {
    std::int64_t rows = track.rank() == 2 ? track.dim(0) : 1;
    std::int64_t cols = track.rank() == 2 ? track.dim(1) : track.numel();
    std::vector<double> out(static_cast<std::size_t>(3 * cols), 0.0);
    std::int64_t half = std::max<std::int64_t>(1, rows / 2);
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            double v = track[r * cols + c];
            out[static_cast<std::size_t>(c)] += v / static_cast<double>(rows);
            if (r < half) out[static_cast<std::size_t>(cols + c)] += v / static_cast<double>(half);
            if (r >= half && rows > half) {
                out[static_cast<std::size_t>(2 * cols + c)] += v / static_cast<double>(rows - half);
            }
        }
    }
    return out;
}

struct AffineMap {
    std::vector<double> w;  // out x in
    std::vector<double> b;
    std::int64_t in = 0, out = 0;

    static AffineMap seeded(Rng rng, std::int64_t in, std::int64_t out) {
        AffineMap m;
        m.in = in;
        m.out = out;
        m.w.resize(static_cast<std::size_t>(in * out));
        m.b.resize(static_cast<std::size_t>(out));
        double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& v : m.w) v = static_cast<double>(rng.normal()) * s;
        for (auto& v : m.b) v = static_cast<double>(rng.normal()) * 0.1;
        return m;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(static_cast<std::size_t>(out));
        for (std::int64_t i = 0; i < out; ++i) {
            double s = b[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < in; ++j) {
                s += w[static_cast<std::size_t>(i * in + j)] * x[static_cast<std::size_t>(j)];
            }
            y[static_cast<std::size_t>(i)] = s;
        }
        return y;
    }
};

std::vector<double> tanh_vec(std::vector<double> v) {
    for (auto& x : v) x = std::tanh(x);
    return v;
}

double cosine_d(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

ScorerSuite ScorerSuite::seeded(std::uint64_t seed, std::int64_t latent_dim, std::int64_t text_dim,
                                std::int64_t caption_dim, std::int64_t sync_dim,
                                std::int64_t embed_dim, std::int64_t num_classes,
                                std::int64_t align_dim) {
    ScorerSuite s;
    s.seed = seed;
    s.embed_dim = embed_dim;
    s.num_classes = num_classes;
    s.align_dim = align_dim;
    Rng root(seed);

    AffineMap embed = AffineMap::seeded(root.derive("embedder"), 3 * latent_dim, embed_dim);
    s.embedder = [embed](const Tensor& latent) { return tanh_vec(embed.apply(pool3(latent))); };

    AffineMap cls = AffineMap::seeded(root.derive("classifier"), 3 * latent_dim, num_classes);
    s.classifier = [cls](const Tensor& latent) {
        std::vector<double> logits = cls.apply(pool3(latent));
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (auto& v : logits) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : logits) v /= sum;
        return floor_and_normalize(logits);
    };

    AffineMap a_align = AffineMap::seeded(root.derive("align.audio"), 3 * latent_dim, align_dim);
    s.audio_align = [a_align](const Tensor& latent) {
        return tanh_vec(a_align.apply(pool3(latent)));
    };
    AffineMap t_align = AffineMap::seeded(root.derive("align.cot"), 3 * text_dim, align_dim);
    s.cot_align = [t_align](const Tensor& cot) { return tanh_vec(t_align.apply(pool3(cot))); };
    AffineMap c_align = AffineMap::seeded(root.derive("align.caption"), 3 * caption_dim, align_dim);
    s.caption_align = [c_align](const Tensor& cap) {
        return tanh_vec(c_align.apply(pool3(cap)));
    };

    AffineMap sync_a = AffineMap::seeded(root.derive("sync.audio"), 3 * latent_dim, align_dim);
    AffineMap sync_s = AffineMap::seeded(root.derive("sync.feats"), 3 * sync_dim, align_dim);
    s.sync_scorer = [sync_a, sync_s](const Tensor& latent_win, const Tensor& sync_win) {
        std::vector<double> ea = tanh_vec(sync_a.apply(pool3(latent_win)));
        std::vector<double> es = tanh_vec(sync_s.apply(pool3(sync_win)));
        return 0.5 * (1.0 - cosine_d(ea, es));  // 0 = aligned, 1 = opposed
    };
    return s;
}

double desync(const Tensor& latent, const Tensor& sync_feats, const ScorerSuite& suite,
              double clip_seconds, double window_seconds) {
    std::int64_t wl = desync_window_frames(clip_seconds, window_seconds, latent.dim(0));
    std::int64_t ws = desync_window_frames(clip_seconds, window_seconds, sync_feats.dim(0));
    double first = suite.sync_scorer(slice_row_range(latent, 0, wl),
                                     slice_row_range(sync_feats, 0, ws));
    double last = suite.sync_scorer(slice_row_range(latent, latent.dim(0) - wl, latent.dim(0)),
                                    slice_row_range(sync_feats, sync_feats.dim(0) - ws,
                                                    sync_feats.dim(0)));
    return 0.5 * (first + last);
}

namespace {

// Runs fn(i) for i in [0,n) across the requested thread count; results land
// by index, so the reduction order downstream is deterministic.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = std::min<std::int64_t>(threads, n);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::int64_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace

MetricReport evaluate(const std::vector<EvalItem>& generated, const std::vector<EvalItem>& reference,
                      const ScorerSuite& suite, const MetricProtocol& protocol) {
    if (generated.empty() || reference.empty()) {
        throw ContractError("evaluate: generated and reference sets must be non-empty");
    }
    MetricReport report;

    std::vector<std::vector<double>> gen_emb(generated.size()), ref_emb(reference.size());
    std::vector<std::vector<double>> gen_probs(generated.size()), ref_probs(reference.size());
    parallel_for(static_cast<std::int64_t>(generated.size()), protocol.threads, [&](std::int64_t i) {
        gen_emb[static_cast<std::size_t>(i)] = suite.embedder(generated[static_cast<std::size_t>(i)].latent);
        gen_probs[static_cast<std::size_t>(i)] =
            suite.classifier(generated[static_cast<std::size_t>(i)].latent);
    });
    parallel_for(static_cast<std::int64_t>(reference.size()), protocol.threads, [&](std::int64_t i) {
        ref_emb[static_cast<std::size_t>(i)] = suite.embedder(reference[static_cast<std::size_t>(i)].latent);
        ref_probs[static_cast<std::size_t>(i)] =
            suite.classifier(reference[static_cast<std::size_t>(i)].latent);
    });

    try {
        report.fd = frechet_distance(embed_stats(gen_emb), embed_stats(ref_emb));
    } catch (const Error& e) {
        report.errors.push_back(std::string("fd: ") + e.what());
    }
    try {
        if (generated.size() != reference.size()) {
            throw ContractError("kl needs paired sets of equal size");
        }
        report.kl = kl_labels(gen_probs, ref_probs, protocol.kl_reverse);
    } catch (const Error& e) {
        report.errors.push_back(std::string("kl: ") + e.what());
    }

    double clap_cot_sum = 0.0, clap_cap_sum = 0.0, desync_sum = 0.0;
    std::int64_t clap_cot_n = 0, clap_cap_n = 0, desync_n = 0;
    for (const EvalItem& item : generated) {
        std::vector<double> audio = suite.audio_align(item.latent);
        if (item.cot_tokens) {
            clap_cot_sum += clap_score(audio, suite.cot_align(*item.cot_tokens));
            clap_cot_n += 1;
        }
        if (item.caption_emb) {
            clap_cap_sum += clap_score(audio, suite.caption_align(*item.caption_emb));
            clap_cap_n += 1;
        }
        if (item.sync_feats) {
            desync_sum += desync(item.latent, *item.sync_feats, suite, protocol.clip_seconds,
                                 protocol.window_seconds);
            desync_n += 1;
        }
    }
    if (clap_cot_n > 0) report.clap_cot = clap_cot_sum / static_cast<double>(clap_cot_n);
    if (clap_cap_n > 0) report.clap_cap = clap_cap_sum / static_cast<double>(clap_cap_n);
    if (desync_n > 0) report.desync = desync_sum / static_cast<double>(desync_n);

    report.protocol = nlohmann::json{{"generated_count", generated.size()},
                                     {"reference_count", reference.size()},
                                     {"scorer_seed", suite.seed},
                                     {"embed_dim", suite.embed_dim},
                                     {"num_classes", suite.num_classes},
                                     {"align_dim", suite.align_dim},
                                     {"kl_direction", protocol.kl_reverse ? "generated||reference"
                                                                          : "reference||generated"},
                                     {"kl_aggregation", "per_pair_mean"},
                                     {"kl_floor", 1e-9},
                                     {"eig_clamp", 0.0},
                                     {"clip_seconds", protocol.clip_seconds},
                                     {"window_seconds", protocol.window_seconds}};
    return report;
}

namespace {
void put_opt(nlohmann::json& j, const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
}
std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
    if (j.contains(key)) return j.at(key).get<double>();
    return std::nullopt;
}
}  // namespace

nlohmann::json report_to_json(const MetricReport& r) {
    nlohmann::json j;
    put_opt(j, "fd", r.fd);
    put_opt(j, "fd_stereo", r.fd_stereo);
    put_opt(j, "kl", r.kl);
    put_opt(j, "clap_cot", r.clap_cot);
    put_opt(j, "clap_cap", r.clap_cap);
    put_opt(j, "desync", r.desync);
    j["protocol"] = r.protocol;
    j["errors"] = r.errors;
    return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.fd = get_opt(j, "fd");
    r.fd_stereo = get_opt(j, "fd_stereo");
    r.kl = get_opt(j, "kl");
    r.clap_cot = get_opt(j, "clap_cot");
    r.clap_cap = get_opt(j, "clap_cap");
    r.desync = get_opt(j, "desync");
    if (j.contains("protocol")) r.protocol = j.at("protocol");
    if (j.contains("errors")) j.at("errors").get_to(r.errors);
    return r;
}

}  // namespace ff::metrics
