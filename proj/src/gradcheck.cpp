#include "flowfoley/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowfoley/errors.hpp"
#include "flowfoley/flow.hpp"
#include "flowfoley/rng.hpp"

namespace ff {

namespace {

using DVec = std::vector<double>;

double rope_theta_d(std::int64_t pair, std::int64_t half) {
    return std::pow(10000.0, -static_cast<double>(pair) / static_cast<double>(half));
}

}  // namespace

std::vector<double> eval_graph_double(const Graph& g, int node,
                                      const std::map<int, std::vector<double>>& leaf_overrides) {
    const auto& nodes = g.nodes();
    if (node < 0 || node >= static_cast<int>(nodes.size())) {
        throw ContractError("eval_graph_double: bad node id");
    }
    std::vector<DVec> vals(static_cast<std::size_t>(node) + 1);
    for (int id = 0; id <= node; ++id) {
        const auto& n = nodes[static_cast<std::size_t>(id)];
        const auto shape_of = [&](int input) -> const Tensor& {
            return nodes[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(input)])].value;
        };
        const auto in = [&](int input) -> const DVec& {
            return vals[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(input)])];
        };
        DVec out(static_cast<std::size_t>(n.value.numel()));
        switch (n.tag) {
            case OpTag::leaf: {
                auto it = leaf_overrides.find(id);
                if (it != leaf_overrides.end()) {
                    out = it->second;
                } else {
                    for (std::int64_t i = 0; i < n.value.numel(); ++i) {
                        out[static_cast<std::size_t>(i)] = static_cast<double>(n.value[i]);
                    }
                }
                break;
            }
            case OpTag::add:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] + in(1)[i];
                break;
            case OpTag::sub:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] - in(1)[i];
                break;
            case OpTag::mul:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] * in(1)[i];
                break;
            case OpTag::scale:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out[i] = in(0)[i] * static_cast<double>(n.fattrs[0]);
                }
                break;
            case OpTag::add_const:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out[i] = in(0)[i] + static_cast<double>(n.fattrs[0]);
                }
                break;
            case OpTag::matmul: {
                std::int64_t m = shape_of(0).dim(0), k = shape_of(0).dim(1), c = shape_of(1).dim(1);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < c; ++j) {
                        double s = 0.0;
                        for (std::int64_t p = 0; p < k; ++p) {
                            s += in(0)[static_cast<std::size_t>(i * k + p)] *
                                 in(1)[static_cast<std::size_t>(p * c + j)];
                        }
                        out[static_cast<std::size_t>(i * c + j)] = s;
                    }
                break;
            }
            case OpTag::add_rowvec: {
                std::int64_t rows = shape_of(0).dim(0), cols = shape_of(0).dim(1);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        out[static_cast<std::size_t>(r * cols + c)] =
                            in(0)[static_cast<std::size_t>(r * cols + c)] + in(1)[static_cast<std::size_t>(c)];
                break;
            }
            case OpTag::mul_rowvec: {
                std::int64_t rows = shape_of(0).dim(0), cols = shape_of(0).dim(1);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        out[static_cast<std::size_t>(r * cols + c)] =
                            in(0)[static_cast<std::size_t>(r * cols + c)] * in(1)[static_cast<std::size_t>(c)];
                break;
            }
            case OpTag::concat_rows: {
                std::size_t at = 0;
                for (std::size_t s = 0; s < n.inputs.size(); ++s) {
                    const DVec& v = vals[static_cast<std::size_t>(n.inputs[s])];
                    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(at));
                    at += v.size();
                }
                break;
            }
            case OpTag::slice_rows: {
                std::int64_t cols = n.value.dim(1), r0 = n.iattrs[0];
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out[i] = in(0)[static_cast<std::size_t>(r0 * cols) + i];
                }
                break;
            }
            case OpTag::slice_cols: {
                std::int64_t rows = n.value.dim(0), w = n.value.dim(1);
                std::int64_t cols = shape_of(0).dim(1), c0 = n.iattrs[0];
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < w; ++c)
                        out[static_cast<std::size_t>(r * w + c)] =
                            in(0)[static_cast<std::size_t>(r * cols + c0 + c)];
                break;
            }
            case OpTag::concat_cols: {
                std::int64_t rows = n.value.dim(0);
                std::int64_t d1 = shape_of(0).dim(1), d2 = shape_of(1).dim(1);
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t c = 0; c < d1; ++c)
                        out[static_cast<std::size_t>(r * (d1 + d2) + c)] =
                            in(0)[static_cast<std::size_t>(r * d1 + c)];
                    for (std::int64_t c = 0; c < d2; ++c)
                        out[static_cast<std::size_t>(r * (d1 + d2) + d1 + c)] =
                            in(1)[static_cast<std::size_t>(r * d2 + c)];
                }
                break;
            }
            case OpTag::mean_rows: {
                std::int64_t rows = shape_of(0).dim(0), cols = shape_of(0).dim(1);
                for (std::int64_t c = 0; c < cols; ++c) {
                    double s = 0.0;
                    for (std::int64_t r = 0; r < rows; ++r) s += in(0)[static_cast<std::size_t>(r * cols + c)];
                    out[static_cast<std::size_t>(c)] = s / static_cast<double>(rows);
                }
                break;
            }
            case OpTag::layer_norm_rows: {
                std::int64_t rows = n.value.dim(0), cols = n.value.dim(1);
                double eps = static_cast<double>(n.fattrs[0]);
                for (std::int64_t r = 0; r < rows; ++r) {
                    double mean = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) mean += in(0)[static_cast<std::size_t>(r * cols + c)];
                    mean /= static_cast<double>(cols);
                    double var = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) {
                        double d = in(0)[static_cast<std::size_t>(r * cols + c)] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(cols);
                    double is = 1.0 / std::sqrt(var + eps);
                    for (std::int64_t c = 0; c < cols; ++c)
                        out[static_cast<std::size_t>(r * cols + c)] =
                            (in(0)[static_cast<std::size_t>(r * cols + c)] - mean) * is;
                }
                break;
            }
            case OpTag::split_heads: {
                std::int64_t heads = n.iattrs[0];
                std::int64_t rows = shape_of(0).dim(0), dh = shape_of(0).dim(1) / heads;
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < dh; ++j)
                            out[static_cast<std::size_t>((h * rows + r) * dh + j)] =
                                in(0)[static_cast<std::size_t>(r * heads * dh + h * dh + j)];
                break;
            }
            case OpTag::merge_heads: {
                std::int64_t heads = shape_of(0).dim(0), rows = shape_of(0).dim(1),
                             dh = shape_of(0).dim(2);
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (std::int64_t j = 0; j < dh; ++j)
                            out[static_cast<std::size_t>(r * heads * dh + h * dh + j)] =
                                in(0)[static_cast<std::size_t>((h * rows + r) * dh + j)];
                break;
            }
            case OpTag::rope: {
                std::int64_t heads = n.iattrs[0];
                std::int64_t rows = n.value.dim(0), cols = n.value.dim(1);
                std::int64_t dh = cols / heads, half = dh / 2;
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t h = 0; h < heads; ++h)
                        for (std::int64_t j = 0; j < half; ++j) {
                            double ang = static_cast<double>(r) * rope_theta_d(j, half);
                            double c = std::cos(ang), s = std::sin(ang);
                            std::size_t i0 = static_cast<std::size_t>(r * cols + h * dh + 2 * j);
                            double x0 = in(0)[i0], x1 = in(0)[i0 + 1];
                            out[i0] = c * x0 - s * x1;
                            out[i0 + 1] = s * x0 + c * x1;
                        }
                break;
            }
            case OpTag::attention: {
                std::int64_t heads = shape_of(0).dim(0), rows = shape_of(0).dim(1),
                             dh = shape_of(0).dim(2);
                double sc = 1.0 / std::sqrt(static_cast<double>(dh));
                DVec srow(static_cast<std::size_t>(rows));
                for (std::int64_t h = 0; h < heads; ++h) {
                    for (std::int64_t i = 0; i < rows; ++i) {
                        double mx = -std::numeric_limits<double>::infinity();
                        for (std::int64_t j = 0; j < rows; ++j) {
                            double s = 0.0;
                            for (std::int64_t p = 0; p < dh; ++p)
                                s += in(0)[static_cast<std::size_t>((h * rows + i) * dh + p)] *
                                     in(1)[static_cast<std::size_t>((h * rows + j) * dh + p)];
                            srow[static_cast<std::size_t>(j)] = s * sc;
                            mx = std::max(mx, s * sc);
                        }
                        double denom = 0.0;
                        for (std::int64_t j = 0; j < rows; ++j) {
                            srow[static_cast<std::size_t>(j)] = std::exp(srow[static_cast<std::size_t>(j)] - mx);
                            denom += srow[static_cast<std::size_t>(j)];
                        }
                        for (std::int64_t p = 0; p < dh; ++p) {
                            double acc = 0.0;
                            for (std::int64_t j = 0; j < rows; ++j)
                                acc += srow[static_cast<std::size_t>(j)] / denom *
                                       in(2)[static_cast<std::size_t>((h * rows + j) * dh + p)];
                            out[static_cast<std::size_t>((h * rows + i) * dh + p)] = acc;
                        }
                    }
                }
                break;
            }
            case OpTag::gelu:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    double u = in(0)[i];
                    out[i] = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
                }
                break;
            case OpTag::silu:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    double u = in(0)[i];
                    out[i] = u / (1.0 + std::exp(-u));
                }
                break;
            case OpTag::sigmoid:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    out[i] = 1.0 / (1.0 + std::exp(-in(0)[i]));
                }
                break;
            case OpTag::upsample_linear:
            case OpTag::upsample_nearest: {
                std::int64_t out_rows = n.iattrs[0];
                std::int64_t in_rows = shape_of(0).dim(0), cols = shape_of(0).dim(1);
                bool nearest = n.tag == OpTag::upsample_nearest;
                for (std::int64_t j = 0; j < out_rows; ++j) {
                    // Matches the float kernel's index map (computed in float
                    // so both paths pick identical source rows).
                    float posf = out_rows == 1
                                     ? 0.0f
                                     : static_cast<float>(j) * static_cast<float>(in_rows - 1) /
                                           static_cast<float>(out_rows - 1);
                    std::int64_t i0 = static_cast<std::int64_t>(posf);
                    double w = static_cast<double>(posf) - static_cast<double>(i0);
                    std::int64_t i1 = std::min(i0 + 1, in_rows - 1);
                    for (std::int64_t c = 0; c < cols; ++c) {
                        if (nearest) {
                            std::int64_t i = w < 0.5 ? i0 : i1;
                            out[static_cast<std::size_t>(j * cols + c)] =
                                in(0)[static_cast<std::size_t>(i * cols + c)];
                        } else {
                            out[static_cast<std::size_t>(j * cols + c)] =
                                (1.0 - w) * in(0)[static_cast<std::size_t>(i0 * cols + c)] +
                                w * in(0)[static_cast<std::size_t>(i1 * cols + c)];
                        }
                    }
                }
                break;
            }
            case OpTag::mean_all: {
                double s = 0.0;
                for (double v : in(0)) s += v;
                out[0] = s / static_cast<double>(in(0).size());
                break;
            }
            case OpTag::sum_all: {
                double s = 0.0;
                for (double v : in(0)) s += v;
                out[0] = s;
                break;
            }
            case OpTag::mse: {
                double s = 0.0;
                for (std::size_t i = 0; i < in(0).size(); ++i) {
                    double d = in(0)[i] - in(1)[i];
                    s += d * d;
                }
                out[0] = s / static_cast<double>(in(0).size());
                break;
            }
        }
        vals[static_cast<std::size_t>(id)] = std::move(out);
    }
    return vals[static_cast<std::size_t>(node)];
}

namespace {

std::map<int, DVec> base_overrides(const Graph& g, const std::vector<int>& leaves) {
    std::map<int, DVec> o;
    for (int id : leaves) {
        const Tensor& t = g.value(id);
        DVec v(static_cast<std::size_t>(t.numel()));
        for (std::int64_t i = 0; i < t.numel(); ++i) v[static_cast<std::size_t>(i)] = t[i];
        o.emplace(id, std::move(v));
    }
    return o;
}

}  // namespace

GradCheckEntry check_graph_gradients(Graph& g, int loss, const std::vector<int>& leaves,
                                     const std::string& name, double h, double rel_tol,
                                     double abs_tol) {
    g.backward(loss);
    GradCheckEntry entry;
    entry.name = name;
    entry.pass = true;
    std::map<int, DVec> overrides = base_overrides(g, leaves);
    for (int id : leaves) {
        const Tensor& value = g.value(id);
        const bool has = g.has_grad(id);
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            double saved = overrides[id][static_cast<std::size_t>(i)];
            overrides[id][static_cast<std::size_t>(i)] = saved + h;
            double lp = eval_graph_double(g, loss, overrides)[0];
            overrides[id][static_cast<std::size_t>(i)] = saved - h;
            double lm = eval_graph_double(g, loss, overrides)[0];
            overrides[id][static_cast<std::size_t>(i)] = saved;
            double fd = (lp - lm) / (2.0 * h);
            double analytic = has ? static_cast<double>(g.grad(id)[i]) : 0.0;
            double abs_err = std::fabs(fd - analytic);
            double denom = std::max(std::fabs(fd), std::fabs(analytic));
            double rel = denom > 0.0 ? abs_err / denom : 0.0;
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            if (abs_err > abs_tol) {
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
                if (rel > rel_tol) entry.pass = false;
            }
        }
    }
    return entry;
}

namespace {

Tensor rt(Rng& rng, std::vector<std::int64_t> shape) { return Tensor::randn(std::move(shape), rng); }

// loss = sum(x * w) with a fixed random weighting; exercises every output.
int weighted_loss(Graph& g, int x, Rng& rng) {
    Tensor w = rt(rng, g.value(x).shape());
    return g.sum_all(g.mul(x, g.leaf(std::move(w))));
}

struct PrimitiveCase {
    std::string name;
    // Builds the graph, returns (loss, leaves to check).
    std::function<std::pair<int, std::vector<int>>(Graph&, Rng&)> build;
};

std::vector<PrimitiveCase> primitive_cases() {
    std::vector<PrimitiveCase> cases;
    auto push = [&](std::string name,
                    std::function<std::pair<int, std::vector<int>>(Graph&, Rng&)> fn) {
        cases.push_back({std::move(name), std::move(fn)});
    };
    push("add", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4})), b = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.add(a, b), r), std::vector<int>{a, b});
    });
    push("sub", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4})), b = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.sub(a, b), r), std::vector<int>{a, b});
    });
    push("mul", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4})), b = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.mul(a, b), r), std::vector<int>{a, b});
    });
    push("scale", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.scale(a, 1.7f), r), std::vector<int>{a});
    });
    push("add_const", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.add_const(a, -0.3f), r), std::vector<int>{a});
    });
    push("matmul", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {4, 3})), b = g.leaf(rt(r, {3, 5}));
        return std::make_pair(weighted_loss(g, g.matmul(a, b), r), std::vector<int>{a, b});
    });
    push("add_rowvec", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {4, 5})), v = g.leaf(rt(r, {1, 5}));
        return std::make_pair(weighted_loss(g, g.add_rowvec(x, v), r), std::vector<int>{x, v});
    });
    push("mul_rowvec", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {4, 5})), v = g.leaf(rt(r, {1, 5}));
        return std::make_pair(weighted_loss(g, g.mul_rowvec(x, v), r), std::vector<int>{x, v});
    });
    push("concat_rows", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {2, 3})), b = g.leaf(rt(r, {4, 3})), c = g.leaf(rt(r, {1, 3}));
        return std::make_pair(weighted_loss(g, g.concat_rows({a, b, c}), r),
                              std::vector<int>{a, b, c});
    });
    push("slice_rows", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {5, 3}));
        return std::make_pair(weighted_loss(g, g.slice_rows(x, 1, 4), r), std::vector<int>{x});
    });
    push("slice_cols", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 6}));
        return std::make_pair(weighted_loss(g, g.slice_cols(x, 2, 5), r), std::vector<int>{x});
    });
    push("concat_cols", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 2})), b = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.concat_cols(a, b), r), std::vector<int>{a, b});
    });
    push("mean_rows", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {5, 4}));
        return std::make_pair(weighted_loss(g, g.mean_rows(x), r), std::vector<int>{x});
    });
    push("layer_norm_rows", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {4, 6}));
        return std::make_pair(weighted_loss(g, g.layer_norm_rows(x, 1e-5f), r),
                              std::vector<int>{x});
    });
    push("split_heads", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 8}));
        return std::make_pair(weighted_loss(g, g.split_heads(x, 2), r), std::vector<int>{x});
    });
    push("merge_heads", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 8}));
        return std::make_pair(weighted_loss(g, g.merge_heads(g.split_heads(x, 2)), r),
                              std::vector<int>{x});
    });
    push("rope", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {5, 8}));
        return std::make_pair(weighted_loss(g, g.rope(x, 2), r), std::vector<int>{x});
    });
    push("attention", [](Graph& g, Rng& r) {
        int q = g.leaf(rt(r, {2, 4, 3})), k = g.leaf(rt(r, {2, 4, 3})), v = g.leaf(rt(r, {2, 4, 3}));
        return std::make_pair(weighted_loss(g, g.attention(q, k, v), r),
                              std::vector<int>{q, k, v});
    });
    push("gelu", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.gelu(x), r), std::vector<int>{x});
    });
    push("silu", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.silu(x), r), std::vector<int>{x});
    });
    push("sigmoid", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.sigmoid(x), r), std::vector<int>{x});
    });
    push("upsample_linear", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.upsample_rows(x, 7, false), r),
                              std::vector<int>{x});
    });
    push("upsample_nearest", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(weighted_loss(g, g.upsample_rows(x, 7, true), r),
                              std::vector<int>{x});
    });
    push("mean_all", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(g.mean_all(x), std::vector<int>{x});
    });
    push("sum_all", [](Graph& g, Rng& r) {
        int x = g.leaf(rt(r, {3, 4}));
        return std::make_pair(g.sum_all(x), std::vector<int>{x});
    });
    push("mse", [](Graph& g, Rng& r) {
        int a = g.leaf(rt(r, {3, 4})), b = g.leaf(rt(r, {3, 4}));
        return std::make_pair(g.mse(a, b), std::vector<int>{a, b});
    });
    return cases;
}

}  // namespace

std::vector<GradCheckEntry> primitive_gradient_suite(std::uint64_t seed, int rounds, double h,
                                                     double rel_tol, double abs_tol) {
    std::vector<GradCheckEntry> entries;
    for (const PrimitiveCase& pc : primitive_cases()) {
        GradCheckEntry agg;
        agg.name = pc.name;
        agg.pass = true;
        for (int round = 0; round < rounds; ++round) {
            Rng rng = Rng(seed).derive(pc.name).derive(static_cast<std::uint64_t>(round));
            Graph g;
            auto [loss, leaves] = pc.build(g, rng);
            GradCheckEntry e = check_graph_gradients(g, loss, leaves, pc.name, h, rel_tol, abs_tol);
            agg.max_rel_err = std::max(agg.max_rel_err, e.max_rel_err);
            agg.max_abs_err = std::max(agg.max_abs_err, e.max_abs_err);
            agg.pass = agg.pass && e.pass;
        }
        entries.push_back(agg);
    }
    return entries;
}

std::vector<GradCheckEntry> full_model_gradient_check(const ModelConfig& cfg, std::uint64_t seed,
                                                      int directions, double h, double rel_tol) {
    // Random modulation weights so gradients flow through every block.
    ModelParams params = init_params(cfg, seed, /*zero_gates=*/false);
    Rng rng = Rng(seed).derive("full-model");

    ConditionBundle bundle;
    bundle.video_feats = rt(rng, {3, cfg.video_dim});
    bundle.caption_emb = rt(rng, {cfg.caption_dim});
    bundle.cot_tokens = rt(rng, {2, cfg.text_dim});
    bundle.sync_feats = rt(rng, {3, cfg.sync_dim});
    Tensor x_t = rt(rng, {cfg.latent_len, cfg.latent_dim});
    Tensor v_target = rt(rng, {cfg.latent_len, cfg.latent_dim});

    Graph g;
    ParamLeaves p = add_param_leaves(g, params);
    int out = build_forward(g, p, cfg, x_t, 0.37f, bundle);
    int loss = g.mse(out, g.leaf(v_target));
    g.backward(loss);

    std::vector<int> leaves;
    for (const auto& [name, id] : p.ids) leaves.push_back(id);
    std::map<int, DVec> base = base_overrides(g, leaves);

    std::vector<GradCheckEntry> entries;
    for (int dir = 0; dir < directions; ++dir) {
        Rng drng = rng.derive(static_cast<std::uint64_t>(dir + 1));
        std::map<int, DVec> u;
        double norm2 = 0.0;
        for (int id : leaves) {
            DVec v(base[id].size());
            for (auto& x : v) {
                x = drng.normal();
                norm2 += x * x;
            }
            u.emplace(id, std::move(v));
        }
        double inv_norm = 1.0 / std::sqrt(norm2);
        double analytic = 0.0;
        std::map<int, DVec> plus = base, minus = base;
        for (int id : leaves) {
            const DVec& ui = u[id];
            const bool has = g.has_grad(id);
            for (std::size_t i = 0; i < ui.size(); ++i) {
                double d = ui[i] * inv_norm;
                plus[id][i] += h * d;
                minus[id][i] -= h * d;
                if (has) analytic += d * static_cast<double>(g.grad(id)[static_cast<std::int64_t>(i)]);
            }
        }
        double lp = eval_graph_double(g, loss, plus)[0];
        double lm = eval_graph_double(g, loss, minus)[0];
        double fd = (lp - lm) / (2.0 * h);
        GradCheckEntry e;
        e.name = "full_model.dir" + std::to_string(dir);
        e.max_abs_err = std::fabs(fd - analytic);
        double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-12});
        e.max_rel_err = e.max_abs_err / denom;
        e.pass = e.max_rel_err < rel_tol;
        entries.push_back(e);
    }
    return entries;
}

nlohmann::json gradcheck_report(std::uint64_t seed, bool corrupt_gradient) {
    const double h = 1e-3, prim_rel = 1e-4, prim_abs = 1e-6, model_rel = 1e-3;
    std::vector<GradCheckEntry> entries = primitive_gradient_suite(seed, 20, h, prim_rel, prim_abs);
    std::vector<GradCheckEntry> model =
        full_model_gradient_check(ModelConfig::toy(), seed, 4, h, model_rel);
    entries.insert(entries.end(), model.begin(), model.end());

    if (corrupt_gradient) {
        // Fault-injection hook: report a deliberately biased comparison so
        // harnesses can verify failures are detected.
        Rng rng(seed);
        Graph g;
        int a = g.leaf(rt(rng, {4, 3})), b = g.leaf(rt(rng, {3, 5}));
        int loss = weighted_loss(g, g.matmul(a, b), rng);
        GradCheckEntry e = check_graph_gradients(g, loss, {a, b}, "matmul[corrupted]", h, prim_rel,
                                                 prim_abs);
        e.max_rel_err += 0.01;
        e.max_abs_err += 0.01;
        e.pass = false;
        entries.push_back(e);
    }

    bool all_pass = true;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : entries) {
        all_pass = all_pass && e.pass;
        rows.push_back(nlohmann::json{{"name", e.name},
                                      {"max_rel_err", e.max_rel_err},
                                      {"max_abs_err", e.max_abs_err},
                                      {"pass", e.pass}});
    }
    return nlohmann::json{{"entries", rows},
                          {"pass", all_pass},
                          {"seed", seed},
                          {"tolerances",
                           {{"h", h},
                            {"primitive_rel", prim_rel},
                            {"primitive_abs", prim_abs},
                            {"full_model_rel", model_rel}}}};
}

bool gradcheck_passed(const nlohmann::json& report) { return report.at("pass").get<bool>(); }

}  // namespace ff
