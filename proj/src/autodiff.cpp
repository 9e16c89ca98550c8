#include "flowfoley/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "flowfoley/errors.hpp"

namespace ff {

const char* op_name(OpTag tag) {
    switch (tag) {
        case OpTag::leaf: return "leaf";
        case OpTag::add: return "add";
        case OpTag::sub: return "sub";
        case OpTag::mul: return "mul";
        case OpTag::scale: return "scale";
        case OpTag::add_const: return "add_const";
        case OpTag::matmul: return "matmul";
        case OpTag::add_rowvec: return "add_rowvec";
        case OpTag::mul_rowvec: return "mul_rowvec";
        case OpTag::concat_rows: return "concat_rows";
        case OpTag::slice_rows: return "slice_rows";
        case OpTag::slice_cols: return "slice_cols";
        case OpTag::concat_cols: return "concat_cols";
        case OpTag::mean_rows: return "mean_rows";
        case OpTag::layer_norm_rows: return "layer_norm_rows";
        case OpTag::split_heads: return "split_heads";
        case OpTag::merge_heads: return "merge_heads";
        case OpTag::rope: return "rope";
        case OpTag::attention: return "attention";
        case OpTag::gelu: return "gelu";
        case OpTag::silu: return "silu";
        case OpTag::sigmoid: return "sigmoid";
        case OpTag::upsample_linear: return "upsample_linear";
        case OpTag::upsample_nearest: return "upsample_nearest";
        case OpTag::mean_all: return "mean_all";
        case OpTag::sum_all: return "sum_all";
        case OpTag::mse: return "mse";
    }
    return "?";
}

namespace {

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

void require_rowvec(const Tensor& v, std::int64_t d, const char* op) {
    if (v.rank() != 2 || v.dim(0) != 1 || v.dim(1) != d) {
        throw ShapeError(std::string(op) + ": expected [1x" + std::to_string(d) + "] row vector, got " +
                         v.shape_str());
    }
}

// C[m x n] += or = A[m x k] * B[k x n]; cache-friendly ikj order.
void matmul_into(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k,
                 std::int64_t n, bool accumulate) {
    if (!accumulate) {
        for (std::int64_t i = 0; i < m * n; ++i) c[i] = 0.0f;
    }
    for (std::int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        float* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void matmul_at_b(const float* a, const float* b, float* c, std::int64_t k, std::int64_t m,
                 std::int64_t n) {
    for (std::int64_t p = 0; p < k; ++p) {
        const float* arow = a + p * m;
        const float* brow = b + p * n;
        for (std::int64_t i = 0; i < m; ++i) {
            float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B[k x n]^T
void matmul_a_bt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t n,
                 std::int64_t k) {
    for (std::int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * n;
        float* crow = c + i * k;
        for (std::int64_t j = 0; j < k; ++j) {
            const float* brow = b + j * n;
            float s = 0.0f;
            for (std::int64_t p = 0; p < n; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

float rope_theta(std::int64_t pair, std::int64_t half_dim) {
    // Geometric frequency ladder, RoPE convention with base 10000.
    return std::pow(10000.0f, -static_cast<float>(pair) / static_cast<float>(half_dim));
}

}  // namespace

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(Tensor v) {
    Node n;
    n.tag = OpTag::leaf;
    n.value = std::move(v);
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "add");
    Node n;
    n.tag = OpTag::add;
    n.inputs = {a, b};
    n.value = ta;
    for (std::int64_t i = 0; i < tb.numel(); ++i) n.value[i] += tb[i];
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "sub");
    Node n;
    n.tag = OpTag::sub;
    n.inputs = {a, b};
    n.value = ta;
    for (std::int64_t i = 0; i < tb.numel(); ++i) n.value[i] -= tb[i];
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "mul");
    Node n;
    n.tag = OpTag::mul;
    n.inputs = {a, b};
    n.value = ta;
    for (std::int64_t i = 0; i < tb.numel(); ++i) n.value[i] *= tb[i];
    return push(std::move(n));
}

int Graph::scale(int a, float s) {
    Node n;
    n.tag = OpTag::scale;
    n.inputs = {a};
    n.fattrs = {s};
    n.value = value(a);
    for (std::int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= s;
    return push(std::move(n));
}

int Graph::add_const(int a, float s) {
    Node n;
    n.tag = OpTag::add_const;
    n.inputs = {a};
    n.fattrs = {s};
    n.value = value(a);
    for (std::int64_t i = 0; i < n.value.numel(); ++i) n.value[i] += s;
    return push(std::move(n));
}

int Graph::matmul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_rank2(ta, "matmul");
    require_rank2(tb, "matmul");
    if (ta.dim(1) != tb.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree, " + ta.shape_str() + " x " +
                         tb.shape_str());
    }
    Node n;
    n.tag = OpTag::matmul;
    n.inputs = {a, b};
    n.value = Tensor({ta.dim(0), tb.dim(1)});
    matmul_into(ta.ptr(), tb.ptr(), n.value.ptr(), ta.dim(0), ta.dim(1), tb.dim(1), false);
    return push(std::move(n));
}

int Graph::add_rowvec(int x, int v) {
    const Tensor& tx = value(x);
    const Tensor& tv = value(v);
    require_rank2(tx, "add_rowvec");
    require_rowvec(tv, tx.dim(1), "add_rowvec");
    Node n;
    n.tag = OpTag::add_rowvec;
    n.inputs = {x, v};
    n.value = tx;
    std::int64_t rows = tx.dim(0), cols = tx.dim(1);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) n.value[r * cols + c] += tv[c];
    return push(std::move(n));
}

int Graph::mul_rowvec(int x, int v) {
    const Tensor& tx = value(x);
    const Tensor& tv = value(v);
    require_rank2(tx, "mul_rowvec");
    require_rowvec(tv, tx.dim(1), "mul_rowvec");
    Node n;
    n.tag = OpTag::mul_rowvec;
    n.inputs = {x, v};
    n.value = tx;
    std::int64_t rows = tx.dim(0), cols = tx.dim(1);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) n.value[r * cols + c] *= tv[c];
    return push(std::move(n));
}

int Graph::concat_rows(const std::vector<int>& xs) {
    if (xs.empty()) throw ContractError("concat_rows: no inputs");
    std::int64_t cols = value(xs[0]).dim(1);
    std::int64_t rows = 0;
    for (int x : xs) {
        require_rank2(value(x), "concat_rows");
        if (value(x).dim(1) != cols) {
            throw ShapeError("concat_rows: column mismatch " + value(x).shape_str());
        }
        rows += value(x).dim(0);
    }
    Node n;
    n.tag = OpTag::concat_rows;
    n.inputs = xs;
    n.value = Tensor({rows, cols});
    std::int64_t at = 0;
    for (int x : xs) {
        const Tensor& t = value(x);
        for (std::int64_t i = 0; i < t.numel(); ++i) n.value[at + i] = t[i];
        at += t.numel();
    }
    return push(std::move(n));
}

int Graph::slice_rows(int x, std::int64_t r0, std::int64_t r1) {
    const Tensor& t = value(x);
    require_rank2(t, "slice_rows");
    if (r0 < 0 || r1 <= r0 || r1 > t.dim(0)) {
        throw ContractError("slice_rows: bad range [" + std::to_string(r0) + "," +
                            std::to_string(r1) + ") for " + t.shape_str());
    }
    Node n;
    n.tag = OpTag::slice_rows;
    n.inputs = {x};
    n.iattrs = {r0, r1};
    std::int64_t cols = t.dim(1);
    n.value = Tensor({r1 - r0, cols});
    for (std::int64_t i = 0; i < n.value.numel(); ++i) n.value[i] = t[r0 * cols + i];
    return push(std::move(n));
}

int Graph::slice_cols(int x, std::int64_t c0, std::int64_t c1) {
    const Tensor& t = value(x);
    require_rank2(t, "slice_cols");
    if (c0 < 0 || c1 <= c0 || c1 > t.dim(1)) {
        throw ContractError("slice_cols: bad range [" + std::to_string(c0) + "," +
                            std::to_string(c1) + ") for " + t.shape_str());
    }
    Node n;
    n.tag = OpTag::slice_cols;
    n.inputs = {x};
    n.iattrs = {c0, c1};
    std::int64_t rows = t.dim(0), cols = t.dim(1), w = c1 - c0;
    n.value = Tensor({rows, w});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < w; ++c) n.value[r * w + c] = t[r * cols + c0 + c];
    return push(std::move(n));
}

int Graph::concat_cols(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_rank2(ta, "concat_cols");
    require_rank2(tb, "concat_cols");
    if (ta.dim(0) != tb.dim(0)) {
        throw ShapeError("concat_cols: row mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    }
    Node n;
    n.tag = OpTag::concat_cols;
    n.inputs = {a, b};
    std::int64_t rows = ta.dim(0), d1 = ta.dim(1), d2 = tb.dim(1);
    n.value = Tensor({rows, d1 + d2});
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < d1; ++c) n.value[r * (d1 + d2) + c] = ta[r * d1 + c];
        for (std::int64_t c = 0; c < d2; ++c) n.value[r * (d1 + d2) + d1 + c] = tb[r * d2 + c];
    }
    return push(std::move(n));
}

int Graph::mean_rows(int x) {
    const Tensor& t = value(x);
    require_rank2(t, "mean_rows");
    Node n;
    n.tag = OpTag::mean_rows;
    n.inputs = {x};
    std::int64_t rows = t.dim(0), cols = t.dim(1);
    n.value = Tensor({1, cols});
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) n.value[c] += t[r * cols + c];
    for (std::int64_t c = 0; c < cols; ++c) n.value[c] /= static_cast<float>(rows);
    return push(std::move(n));
}

int Graph::layer_norm_rows(int x, float eps) {
    const Tensor& t = value(x);
    require_rank2(t, "layer_norm_rows");
    if (eps <= 0.0f) throw ContractError("layer_norm_rows: eps must be positive");
    Node n;
    n.tag = OpTag::layer_norm_rows;
    n.inputs = {x};
    n.fattrs = {eps};
    std::int64_t rows = t.dim(0), cols = t.dim(1);
    n.value = Tensor({rows, cols});
    Tensor inv_std({rows, 1});
    for (std::int64_t r = 0; r < rows; ++r) {
        float mean = 0.0f;
        for (std::int64_t c = 0; c < cols; ++c) mean += t[r * cols + c];
        mean /= static_cast<float>(cols);
        float var = 0.0f;
        for (std::int64_t c = 0; c < cols; ++c) {
            float d = t[r * cols + c] - mean;
            var += d * d;
        }
        var /= static_cast<float>(cols);
        float is = 1.0f / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::int64_t c = 0; c < cols; ++c) n.value[r * cols + c] = (t[r * cols + c] - mean) * is;
    }
    n.aux.push_back(std::move(inv_std));
    return push(std::move(n));
}

int Graph::split_heads(int x, std::int64_t heads) {
    const Tensor& t = value(x);
    require_rank2(t, "split_heads");
    if (heads <= 0 || t.dim(1) % heads != 0) {
        throw ShapeError("split_heads: " + std::to_string(heads) + " heads do not divide " +
                         t.shape_str());
    }
    std::int64_t rows = t.dim(0), dh = t.dim(1) / heads;
    Node n;
    n.tag = OpTag::split_heads;
    n.inputs = {x};
    n.iattrs = {heads};
    n.value = Tensor({heads, rows, dh});
    for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < dh; ++j)
                n.value[(h * rows + r) * dh + j] = t[r * (heads * dh) + h * dh + j];
    return push(std::move(n));
}

int Graph::merge_heads(int x) {
    const Tensor& t = value(x);
    if (t.rank() != 3) throw ShapeError("merge_heads: expected rank-3, got " + t.shape_str());
    std::int64_t heads = t.dim(0), rows = t.dim(1), dh = t.dim(2);
    Node n;
    n.tag = OpTag::merge_heads;
    n.inputs = {x};
    n.value = Tensor({rows, heads * dh});
    for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < dh; ++j)
                n.value[r * (heads * dh) + h * dh + j] = t[(h * rows + r) * dh + j];
    return push(std::move(n));
}

int Graph::rope(int x, std::int64_t heads) {
    const Tensor& t = value(x);
    require_rank2(t, "rope");
    if (heads <= 0 || t.dim(1) % heads != 0) {
        throw ShapeError("rope: " + std::to_string(heads) + " heads do not divide " + t.shape_str());
    }
    std::int64_t dh = t.dim(1) / heads;
    if (dh % 2 != 0) throw ShapeError("rope: head dim must be even, got " + std::to_string(dh));
    Node n;
    n.tag = OpTag::rope;
    n.inputs = {x};
    n.iattrs = {heads};
    std::int64_t rows = t.dim(0), cols = t.dim(1), half = dh / 2;
    n.value = Tensor({rows, cols});
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t j = 0; j < half; ++j) {
                float ang = static_cast<float>(r) * rope_theta(j, half);
                float c = std::cos(ang), s = std::sin(ang);
                std::int64_t i0 = r * cols + h * dh + 2 * j;
                float x0 = t[i0], x1 = t[i0 + 1];
                n.value[i0] = c * x0 - s * x1;
                n.value[i0 + 1] = s * x0 + c * x1;
            }
        }
    }
    return push(std::move(n));
}

int Graph::attention(int q, int k, int v) {
    const Tensor& tq = value(q);
    const Tensor& tk = value(k);
    const Tensor& tv = value(v);
    if (tq.rank() != 3) throw ShapeError("attention: expected rank-3 [HxLxd], got " + tq.shape_str());
    require_same_shape(tq, tk, "attention");
    require_same_shape(tq, tv, "attention");
    std::int64_t heads = tq.dim(0), rows = tq.dim(1), dh = tq.dim(2);
    float sc = 1.0f / std::sqrt(static_cast<float>(dh));
    Node n;
    n.tag = OpTag::attention;
    n.inputs = {q, k, v};
    n.value = Tensor({heads, rows, dh});
    Tensor probs({heads, rows, rows});
    std::vector<float> srow(static_cast<std::size_t>(rows));
    for (std::int64_t h = 0; h < heads; ++h) {
        const float* qh = tq.ptr() + h * rows * dh;
        const float* kh = tk.ptr() + h * rows * dh;
        const float* vh = tv.ptr() + h * rows * dh;
        float* ph = probs.ptr() + h * rows * rows;
        float* oh = n.value.ptr() + h * rows * dh;
        for (std::int64_t i = 0; i < rows; ++i) {
            float mx = -std::numeric_limits<float>::infinity();
            for (std::int64_t j = 0; j < rows; ++j) {
                float s = 0.0f;
                for (std::int64_t p = 0; p < dh; ++p) s += qh[i * dh + p] * kh[j * dh + p];
                s *= sc;
                srow[static_cast<std::size_t>(j)] = s;
                mx = std::max(mx, s);
            }
            float denom = 0.0f;
            for (std::int64_t j = 0; j < rows; ++j) {
                float e = std::exp(srow[static_cast<std::size_t>(j)] - mx);
                ph[i * rows + j] = e;
                denom += e;
            }
            for (std::int64_t j = 0; j < rows; ++j) ph[i * rows + j] /= denom;
            for (std::int64_t p = 0; p < dh; ++p) {
                float acc = 0.0f;
                for (std::int64_t j = 0; j < rows; ++j) acc += ph[i * rows + j] * vh[j * dh + p];
                oh[i * dh + p] = acc;
            }
        }
    }
    n.aux.push_back(std::move(probs));
    return push(std::move(n));
}

int Graph::gelu(int x) {
    Node n;
    n.tag = OpTag::gelu;
    n.inputs = {x};
    n.value = value(x);
    for (std::int64_t i = 0; i < n.value.numel(); ++i) {
        float u = n.value[i];
        n.value[i] = 0.5f * u * (1.0f + std::erf(u * 0.70710678f));
    }
    return push(std::move(n));
}

int Graph::silu(int x) {
    Node n;
    n.tag = OpTag::silu;
    n.inputs = {x};
    n.value = value(x);
    for (std::int64_t i = 0; i < n.value.numel(); ++i) {
        float u = n.value[i];
        n.value[i] = u / (1.0f + std::exp(-u));
    }
    return push(std::move(n));
}

int Graph::sigmoid(int x) {
    Node n;
    n.tag = OpTag::sigmoid;
    n.inputs = {x};
    n.value = value(x);
    for (std::int64_t i = 0; i < n.value.numel(); ++i) {
        n.value[i] = 1.0f / (1.0f + std::exp(-n.value[i]));
    }
    return push(std::move(n));
}

int Graph::upsample_rows(int x, std::int64_t out_rows, bool nearest) {
    const Tensor& t = value(x);
    require_rank2(t, "upsample_rows");
    std::int64_t in_rows = t.dim(0), cols = t.dim(1);
    if (out_rows < in_rows) {
        throw ContractError("upsample_rows: downsampling " + std::to_string(in_rows) + " -> " +
                            std::to_string(out_rows) + " not supported");
    }
    Node n;
    n.tag = nearest ? OpTag::upsample_nearest : OpTag::upsample_linear;
    n.inputs = {x};
    n.iattrs = {out_rows};
    n.value = Tensor({out_rows, cols});
    for (std::int64_t j = 0; j < out_rows; ++j) {
        // Endpoint-aligned index map: out_rows-1 -> in_rows-1.
        float pos = out_rows == 1 ? 0.0f
                                  : static_cast<float>(j) * static_cast<float>(in_rows - 1) /
                                        static_cast<float>(out_rows - 1);
        std::int64_t i0 = static_cast<std::int64_t>(pos);
        float w = pos - static_cast<float>(i0);
        std::int64_t i1 = std::min(i0 + 1, in_rows - 1);
        if (nearest) {
            std::int64_t i = w < 0.5f ? i0 : i1;
            for (std::int64_t c = 0; c < cols; ++c) n.value[j * cols + c] = t[i * cols + c];
        } else {
            for (std::int64_t c = 0; c < cols; ++c)
                n.value[j * cols + c] = (1.0f - w) * t[i0 * cols + c] + w * t[i1 * cols + c];
        }
    }
    return push(std::move(n));
}

int Graph::mean_all(int x) {
    Node n;
    n.tag = OpTag::mean_all;
    n.inputs = {x};
    double s = 0.0;
    const Tensor& t = value(x);
    for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i];
    n.value = Tensor::scalar(static_cast<float>(s / static_cast<double>(t.numel())));
    return push(std::move(n));
}

int Graph::sum_all(int x) {
    Node n;
    n.tag = OpTag::sum_all;
    n.inputs = {x};
    double s = 0.0;
    const Tensor& t = value(x);
    for (std::int64_t i = 0; i < t.numel(); ++i) s += t[i];
    n.value = Tensor::scalar(static_cast<float>(s));
    return push(std::move(n));
}

int Graph::mse(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_shape(ta, tb, "mse");
    Node n;
    n.tag = OpTag::mse;
    n.inputs = {a, b};
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.numel(); ++i) {
        double d = static_cast<double>(ta[i]) - static_cast<double>(tb[i]);
        s += d * d;
    }
    n.value = Tensor::scalar(static_cast<float>(s / static_cast<double>(ta.numel())));
    return push(std::move(n));
}

void Graph::truncate(int count) {
    if (count < 0 || count > size()) throw ContractError("truncate: bad node count");
    nodes_.resize(static_cast<std::size_t>(count));
    for (auto& n : nodes_) n.grad.reset();
}

void Graph::set_leaf(int id, const Tensor& v) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.tag != OpTag::leaf) throw ContractError("set_leaf: node is not a leaf");
    if (!n.value.same_shape(v)) {
        throw ShapeError("set_leaf: shape " + v.shape_str() + " != " + n.value.shape_str());
    }
    n.value = v;
    n.grad.reset();
}

const Tensor& Graph::grad(int id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad) throw ContractError("grad: node " + std::to_string(id) + " has no gradient");
    return *n.grad;
}

Tensor& Graph::grad_slot(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad) n.grad = Tensor::zeros(n.value.shape());
    return *n.grad;
}

void Graph::backward(int loss) {
    if (loss < 0 || loss >= size()) throw ContractError("backward: bad loss node id");
    if (value(loss).numel() != 1) {
        throw ContractError("backward: loss must be scalar, got " + value(loss).shape_str());
    }
    grad_slot(loss)[0] = 1.0f;
    for (int id = loss; id >= 0; --id) {
        if (!nodes_[static_cast<std::size_t>(id)].grad) continue;
        backward_node(id);
    }
}

void Graph::backward_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& go = *n.grad;
    switch (n.tag) {
        case OpTag::leaf:
            break;
        case OpTag::add: {
            Tensor& ga = grad_slot(n.inputs[0]);
            Tensor& gb = grad_slot(n.inputs[1]);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
            break;
        }
        case OpTag::sub: {
            Tensor& ga = grad_slot(n.inputs[0]);
            Tensor& gb = grad_slot(n.inputs[1]);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] -= go[i];
            }
            break;
        }
        case OpTag::mul: {
            const Tensor& a = in_val(n, 0);
            const Tensor& b = in_val(n, 1);
            Tensor& ga = grad_slot(n.inputs[0]);
            Tensor& gb = grad_slot(n.inputs[1]);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i] * b[i];
                gb[i] += go[i] * a[i];
            }
            break;
        }
        case OpTag::scale: {
            Tensor& ga = grad_slot(n.inputs[0]);
            float s = n.fattrs[0];
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
            break;
        }
        case OpTag::add_const: {
            Tensor& ga = grad_slot(n.inputs[0]);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            break;
        }
        case OpTag::matmul: {
            const Tensor& a = in_val(n, 0);
            const Tensor& b = in_val(n, 1);
            std::int64_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
            matmul_a_bt(go.ptr(), b.ptr(), grad_slot(n.inputs[0]).ptr(), m, nn, k);
            matmul_at_b(a.ptr(), go.ptr(), grad_slot(n.inputs[1]).ptr(), m, k, nn);
            break;
        }
        case OpTag::add_rowvec: {
            Tensor& gx = grad_slot(n.inputs[0]);
            Tensor& gv = grad_slot(n.inputs[1]);
            std::int64_t rows = go.dim(0), cols = go.dim(1);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += go[r * cols + c];
                    gv[c] += go[r * cols + c];
                }
            break;
        }
        case OpTag::mul_rowvec: {
            const Tensor& x = in_val(n, 0);
            const Tensor& v = in_val(n, 1);
            Tensor& gx = grad_slot(n.inputs[0]);
            Tensor& gv = grad_slot(n.inputs[1]);
            std::int64_t rows = go.dim(0), cols = go.dim(1);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] += go[r * cols + c] * v[c];
                    gv[c] += go[r * cols + c] * x[r * cols + c];
                }
            break;
        }
        case OpTag::concat_rows: {
            std::int64_t at = 0;
            for (int x : n.inputs) {
                Tensor& gx = grad_slot(x);
                for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += go[at + i];
                at += gx.numel();
            }
            break;
        }
        case OpTag::slice_rows: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t r0 = n.iattrs[0];
            std::int64_t cols = go.dim(1);
            for (std::int64_t i = 0; i < go.numel(); ++i) gx[r0 * cols + i] += go[i];
            break;
        }
        case OpTag::slice_cols: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t c0 = n.iattrs[0];
            std::int64_t rows = go.dim(0), w = go.dim(1), cols = gx.dim(1);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < w; ++c) gx[r * cols + c0 + c] += go[r * w + c];
            break;
        }
        case OpTag::concat_cols: {
            Tensor& ga = grad_slot(n.inputs[0]);
            Tensor& gb = grad_slot(n.inputs[1]);
            std::int64_t rows = go.dim(0), d1 = ga.dim(1), d2 = gb.dim(1);
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t c = 0; c < d1; ++c) ga[r * d1 + c] += go[r * (d1 + d2) + c];
                for (std::int64_t c = 0; c < d2; ++c) gb[r * d2 + c] += go[r * (d1 + d2) + d1 + c];
            }
            break;
        }
        case OpTag::mean_rows: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t rows = gx.dim(0), cols = gx.dim(1);
            float inv = 1.0f / static_cast<float>(rows);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) gx[r * cols + c] += go[c] * inv;
            break;
        }
        case OpTag::layer_norm_rows: {
            Tensor& gx = grad_slot(n.inputs[0]);
            const Tensor& xhat = n.value;
            const Tensor& inv_std = n.aux[0];
            std::int64_t rows = gx.dim(0), cols = gx.dim(1);
            for (std::int64_t r = 0; r < rows; ++r) {
                float mean_g = 0.0f, mean_gx = 0.0f;
                for (std::int64_t c = 0; c < cols; ++c) {
                    mean_g += go[r * cols + c];
                    mean_gx += go[r * cols + c] * xhat[r * cols + c];
                }
                mean_g /= static_cast<float>(cols);
                mean_gx /= static_cast<float>(cols);
                float is = inv_std[r];
                for (std::int64_t c = 0; c < cols; ++c) {
                    gx[r * cols + c] +=
                        is * (go[r * cols + c] - mean_g - xhat[r * cols + c] * mean_gx);
                }
            }
            break;
        }
        case OpTag::split_heads: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t heads = n.iattrs[0];
            std::int64_t rows = gx.dim(0), dh = gx.dim(1) / heads;
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < dh; ++j)
                        gx[r * (heads * dh) + h * dh + j] += go[(h * rows + r) * dh + j];
            break;
        }
        case OpTag::merge_heads: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t heads = gx.dim(0), rows = gx.dim(1), dh = gx.dim(2);
            for (std::int64_t h = 0; h < heads; ++h)
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < dh; ++j)
                        gx[(h * rows + r) * dh + j] += go[r * (heads * dh) + h * dh + j];
            break;
        }
        case OpTag::rope: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t heads = n.iattrs[0];
            std::int64_t rows = gx.dim(0), cols = gx.dim(1), dh = cols / heads, half = dh / 2;
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t j = 0; j < half; ++j) {
                        float ang = static_cast<float>(r) * rope_theta(j, half);
                        float c = std::cos(ang), s = std::sin(ang);
                        std::int64_t i0 = r * cols + h * dh + 2 * j;
                        float g0 = go[i0], g1 = go[i0 + 1];
                        gx[i0] += c * g0 + s * g1;
                        gx[i0 + 1] += -s * g0 + c * g1;
                    }
            break;
        }
        case OpTag::attention: {
            const Tensor& q = in_val(n, 0);
            const Tensor& k = in_val(n, 1);
            const Tensor& v = in_val(n, 2);
            Tensor& gq = grad_slot(n.inputs[0]);
            Tensor& gk = grad_slot(n.inputs[1]);
            Tensor& gv = grad_slot(n.inputs[2]);
            const Tensor& probs = n.aux[0];
            std::int64_t heads = q.dim(0), rows = q.dim(1), dh = q.dim(2);
            float sc = 1.0f / std::sqrt(static_cast<float>(dh));
            std::vector<float> dprow(static_cast<std::size_t>(rows));
            std::vector<float> dsrow(static_cast<std::size_t>(rows));
            for (std::int64_t h = 0; h < heads; ++h) {
                const float* qh = q.ptr() + h * rows * dh;
                const float* kh = k.ptr() + h * rows * dh;
                const float* vh = v.ptr() + h * rows * dh;
                const float* ph = probs.ptr() + h * rows * rows;
                const float* goh = go.ptr() + h * rows * dh;
                float* gqh = gq.ptr() + h * rows * dh;
                float* gkh = gk.ptr() + h * rows * dh;
                float* gvh = gv.ptr() + h * rows * dh;
                for (std::int64_t i = 0; i < rows; ++i) {
                    // dV += P^T dO and dP = dO V^T, row i.
                    float dot = 0.0f;
                    for (std::int64_t j = 0; j < rows; ++j) {
                        float dp = 0.0f;
                        for (std::int64_t p = 0; p < dh; ++p) dp += goh[i * dh + p] * vh[j * dh + p];
                        dprow[static_cast<std::size_t>(j)] = dp;
                        dot += dp * ph[i * rows + j];
                    }
                    for (std::int64_t j = 0; j < rows; ++j) {
                        float pij = ph[i * rows + j];
                        dsrow[static_cast<std::size_t>(j)] =
                            pij * (dprow[static_cast<std::size_t>(j)] - dot);
                        for (std::int64_t p = 0; p < dh; ++p)
                            gvh[j * dh + p] += pij * goh[i * dh + p];
                    }
                    for (std::int64_t j = 0; j < rows; ++j) {
                        float ds = dsrow[static_cast<std::size_t>(j)] * sc;
                        if (ds == 0.0f) continue;
                        for (std::int64_t p = 0; p < dh; ++p) {
                            gqh[i * dh + p] += ds * kh[j * dh + p];
                            gkh[j * dh + p] += ds * qh[i * dh + p];
                        }
                    }
                }
            }
            break;
        }
        case OpTag::gelu: {
            const Tensor& x = in_val(n, 0);
            Tensor& gx = grad_slot(n.inputs[0]);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                float u = x[i];
                float cdf = 0.5f * (1.0f + std::erf(u * 0.70710678f));
                float pdf = 0.39894228f * std::exp(-0.5f * u * u);
                gx[i] += go[i] * (cdf + u * pdf);
            }
            break;
        }
        case OpTag::silu: {
            const Tensor& x = in_val(n, 0);
            Tensor& gx = grad_slot(n.inputs[0]);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                float s = 1.0f / (1.0f + std::exp(-x[i]));
                gx[i] += go[i] * s * (1.0f + x[i] * (1.0f - s));
            }
            break;
        }
        case OpTag::sigmoid: {
            Tensor& gx = grad_slot(n.inputs[0]);
            const Tensor& y = n.value;
            for (std::int64_t i = 0; i < go.numel(); ++i) gx[i] += go[i] * y[i] * (1.0f - y[i]);
            break;
        }
        case OpTag::upsample_linear:
        case OpTag::upsample_nearest: {
            Tensor& gx = grad_slot(n.inputs[0]);
            std::int64_t out_rows = n.iattrs[0];
            std::int64_t in_rows = gx.dim(0), cols = gx.dim(1);
            bool nearest = n.tag == OpTag::upsample_nearest;
            for (std::int64_t j = 0; j < out_rows; ++j) {
                float pos = out_rows == 1 ? 0.0f
                                          : static_cast<float>(j) * static_cast<float>(in_rows - 1) /
                                                static_cast<float>(out_rows - 1);
                std::int64_t i0 = static_cast<std::int64_t>(pos);
                float w = pos - static_cast<float>(i0);
                std::int64_t i1 = std::min(i0 + 1, in_rows - 1);
                if (nearest) {
                    std::int64_t i = w < 0.5f ? i0 : i1;
                    for (std::int64_t c = 0; c < cols; ++c) gx[i * cols + c] += go[j * cols + c];
                } else {
                    for (std::int64_t c = 0; c < cols; ++c) {
                        gx[i0 * cols + c] += (1.0f - w) * go[j * cols + c];
                        gx[i1 * cols + c] += w * go[j * cols + c];
                    }
                }
            }
            break;
        }
        case OpTag::mean_all: {
            Tensor& gx = grad_slot(n.inputs[0]);
            float g = go[0] / static_cast<float>(gx.numel());
            for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
            break;
        }
        case OpTag::sum_all: {
            Tensor& gx = grad_slot(n.inputs[0]);
            for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += go[0];
            break;
        }
        case OpTag::mse: {
            const Tensor& a = in_val(n, 0);
            const Tensor& b = in_val(n, 1);
            Tensor& ga = grad_slot(n.inputs[0]);
            Tensor& gb = grad_slot(n.inputs[1]);
            float g = go[0] * 2.0f / static_cast<float>(a.numel());
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                float d = a[i] - b[i];
                ga[i] += g * d;
                gb[i] -= g * d;
            }
            break;
        }
    }
}

int modulated_layer_norm(Graph& g, int x, int scale, int shift, float eps) {
    int normed = g.layer_norm_rows(x, eps);
    int gain = g.add_const(scale, 1.0f);
    return g.add_rowvec(g.mul_rowvec(normed, gain), shift);
}

}  // namespace ff
