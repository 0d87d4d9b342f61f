#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "actjepa/diffcore/ops.hpp"
#include "actjepa/model/params.hpp"

namespace actjepa {

// Fixed sinusoidal tables. Channel 2i holds sin(p / 10000^(2i/d)), channel
// 2i+1 the matching cosine.
template <class T>
Tensor<T> sinusoid_1d(std::size_t len, std::size_t d) {
    Tensor<T> pe({len, d});
    for (std::size_t p = 0; p < len; ++p) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            pe.at(p, i) = static_cast<T>(std::sin(static_cast<double>(p) * freq));
            if (i + 1 < d) pe.at(p, i + 1) = static_cast<T>(std::cos(static_cast<double>(p) * freq));
        }
    }
    return pe;
}

/// Grid positions in row-major order; the first half of the channels encode
/// the row, the second half the column.
template <class T>
Tensor<T> sinusoid_2d(std::size_t rows, std::size_t cols, std::size_t d) {
    const auto pr = sinusoid_1d<T>(rows, d / 2);
    const auto pc = sinusoid_1d<T>(cols, d / 2);
    Tensor<T> pe({rows * cols, d});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t j = 0; j < d / 2; ++j) {
                pe.at(r * cols + c, j) = pr.at(r, j);
                pe.at(r * cols + c, d / 2 + j) = pc.at(c, j);
            }
        }
    }
    return pe;
}

template <class T>
struct Linear {
    Var<T> w, b;

    static Linear build(ParamBuilder<T>& pb, const std::string& name, std::size_t in, std::size_t out) {
        return {pb.uniform(name + ".w", {in, out}, in), pb.filled(name + ".b", {1, out}, T(0))};
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const { return linear(g, x, w, b); }
};

template <class T>
struct LayerNorm {
    Var<T> gamma, beta;

    static LayerNorm build(ParamBuilder<T>& pb, const std::string& name, std::size_t d) {
        return {pb.filled(name + ".gamma", {1, d}, T(1)), pb.filled(name + ".beta", {1, d}, T(0))};
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const { return layer_norm(g, x, gamma, beta); }
};

template <class T>
struct FeedForward {
    Linear<T> fc1, fc2;

    static FeedForward build(ParamBuilder<T>& pb, const std::string& name, std::size_t d, std::size_t hidden) {
        auto fc1 = Linear<T>::build(pb, name + ".fc1", d, hidden);
        return {fc1, Linear<T>::build(pb, name + ".fc2", hidden, d)};
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x) const { return fc2(g, gelu(g, fc1(g, x))); }
};

template <class T>
struct Attention {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;

    static Attention build(ParamBuilder<T>& pb, const std::string& name, std::size_t d, std::size_t heads) {
        Attention a;
        a.q = Linear<T>::build(pb, name + ".q", d, d);
        a.k = Linear<T>::build(pb, name + ".k", d, d);
        a.v = Linear<T>::build(pb, name + ".v", d, d);
        a.o = Linear<T>::build(pb, name + ".o", d, d);
        a.heads = heads;
        return a;
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& xq, const Var<T>& xkv, AttentionLayout L) const {
        L.heads = heads;
        return o(g, multi_head_attention(g, q(g, xq), k(g, xkv), v(g, xkv), L));
    }
};

/// Pre-LN transformer block.
template <class T>
struct SelfBlock {
    LayerNorm<T> ln1, ln2;
    Attention<T> attn;
    FeedForward<T> ffn;

    static SelfBlock build(ParamBuilder<T>& pb, const std::string& name, std::size_t d, std::size_t heads,
                           std::size_t hidden) {
        SelfBlock b;
        b.ln1 = LayerNorm<T>::build(pb, name + ".ln1", d);
        b.attn = Attention<T>::build(pb, name + ".attn", d, heads);
        b.ln2 = LayerNorm<T>::build(pb, name + ".ln2", d);
        b.ffn = FeedForward<T>::build(pb, name + ".ffn", d, hidden);
        return b;
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& x, std::size_t groups, std::size_t len, bool causal = false) const {
        const auto h = ln1(g, x);
        auto y = add(g, x, attn(g, h, h, {groups, 0, len, len, causal}));
        return add(g, y, ffn(g, ln2(g, y)));
    }
};

/// Queries attend to a separately normalized context.
template <class T>
struct CrossBlock {
    LayerNorm<T> ln_q, ln_kv, ln2;
    Attention<T> attn;
    FeedForward<T> ffn;

    static CrossBlock build(ParamBuilder<T>& pb, const std::string& name, std::size_t d, std::size_t heads,
                            std::size_t hidden) {
        CrossBlock b;
        b.ln_q = LayerNorm<T>::build(pb, name + ".ln_q", d);
        b.ln_kv = LayerNorm<T>::build(pb, name + ".ln_kv", d);
        b.attn = Attention<T>::build(pb, name + ".attn", d, heads);
        b.ln2 = LayerNorm<T>::build(pb, name + ".ln2", d);
        b.ffn = FeedForward<T>::build(pb, name + ".ffn", d, hidden);
        return b;
    }
    Var<T> operator()(Graph<T>& g, const Var<T>& queries, const Var<T>& context, std::size_t groups, std::size_t q_len,
                      std::size_t kv_len) const {
        auto y = add(g, queries, attn(g, ln_q(g, queries), ln_kv(g, context), {groups, 0, q_len, kv_len, false}));
        return add(g, y, ffn(g, ln2(g, y)));
    }
};

}  // namespace actjepa
