#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flowfoley/tensor.hpp"

namespace ff {

enum class OpTag {
    leaf,
    add,
    sub,
    mul,
    scale,
    add_const,
    matmul,
    add_rowvec,
    mul_rowvec,
    concat_rows,
    slice_rows,
    slice_cols,
    concat_cols,
    mean_rows,
    layer_norm_rows,
    split_heads,
    merge_heads,
    rope,
    attention,
    gelu,
    silu,
    sigmoid,
    upsample_linear,
    upsample_nearest,
    mean_all,
    sum_all,
    mse,
};

const char* op_name(OpTag tag);

// Reverse-mode tape. Nodes are append-only; an op's inputs always have
// smaller ids than the op itself, so the graph is acyclic by construction.
class Graph {
public:
    struct Node {
        OpTag tag;
        std::vector<int> inputs;
        Tensor value;
        std::vector<std::int64_t> iattrs;  // integer attributes (sizes, offsets)
        std::vector<float> fattrs;         // float attributes (scales, eps)
        std::vector<Tensor> aux;           // saved intermediates for backward
        std::optional<Tensor> grad;
    };

    int leaf(Tensor v);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, float s);
    int add_const(int a, float s);
    int matmul(int a, int b);
    int add_rowvec(int x, int v);  // v: [1 x d]
    int mul_rowvec(int x, int v);
    int concat_rows(const std::vector<int>& xs);
    int slice_rows(int x, std::int64_t r0, std::int64_t r1);
    int slice_cols(int x, std::int64_t c0, std::int64_t c1);
    int concat_cols(int a, int b);
    int mean_rows(int x);                          // [L x d] -> [1 x d]
    int layer_norm_rows(int x, float eps);         // per-row zero mean / unit variance
    int split_heads(int x, std::int64_t heads);    // [L x H*dh] -> [H x L x dh]
    int merge_heads(int x);                        // [H x L x dh] -> [L x H*dh]
    int rope(int x, std::int64_t heads);           // rotary phase by row position
    int attention(int q, int k, int v);            // [H x L x dh] each
    int gelu(int x);
    int silu(int x);
    int sigmoid(int x);
    int upsample_rows(int x, std::int64_t out_rows, bool nearest);
    int mean_all(int x);  // -> rank-0 scalar
    int sum_all(int x);
    int mse(int a, int b);  // mean squared error -> scalar

    // Reverse accumulation from a scalar loss node. Fills gradient slots for
    // every node the loss depends on; other slots stay empty.
    void backward(int loss);

    // Drop every node with id >= count and clear remaining gradient slots.
    // Lets a caller keep a parameter prefix alive across many forward passes.
    void truncate(int count);
    // Replace a leaf's value in place; shape must match.
    void set_leaf(int id, const Tensor& v);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.has_value(); }
    const Tensor& grad(int id) const;
    const std::vector<Node>& nodes() const { return nodes_; }
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    int push(Node n);
    const Tensor& in_val(const Node& n, std::size_t i) const {
        return nodes_[static_cast<std::size_t>(n.inputs[i])].value;
    }
    Tensor& grad_slot(int id);
    void backward_node(int id);

    std::vector<Node> nodes_;
};

// Convenience: layer_norm then (1+scale) * xhat + shift with row broadcast.
// scale/shift are [1 x d] nodes.
int modulated_layer_norm(Graph& g, int x, int scale, int shift, float eps = 1e-5f);

}  // namespace ff
