#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "actjepa/datastore/io.hpp"
#include "actjepa/diffcore/grad_check.hpp"
#include "actjepa/diffcore/ops.hpp"
#include "actjepa/model/actjepa.hpp"

namespace actjepa::testing {

inline ModelConfig tiny_config() {
    ModelConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.ffn_hidden = 16;
    c.chunk = 2;
    c.image_height = 12;
    c.image_width = 12;
    return c;
}

/// Expert episodes on 12x12 renders, matching tiny_config().
inline Dataset tiny_dataset(std::size_t per_task, std::uint64_t seed = 0) {
    const auto c = tiny_config();
    std::vector<sim::TaskSpec> tasks;
    for (int i = 0; i < sim::kTaskCount; ++i) tasks.push_back(sim::task_from_id(i));
    return collect_dataset(tasks, per_task, seed, c.chunk,
                           sim::RenderSpec{static_cast<int>(c.image_height), static_cast<int>(c.image_width)});
}

inline Observation random_observation(const ModelConfig& c, Rng& rng) {
    Observation o;
    o.image.resize(c.image_height * c.image_width);
    for (auto& p : o.image) p = static_cast<float>(rng.uniform());
    for (auto& v : o.proprio) v = rng.uniform(-1, 1);
    o.task_id = static_cast<int>(rng.below(c.task_count));
    return o;
}

inline std::vector<ChunkSample> random_chunks(const ModelConfig& c, std::size_t count, Rng& rng) {
    std::vector<ChunkSample> out(count);
    for (auto& ch : out) {
        ch.context = random_observation(c, rng);
        ch.task_id = ch.context.task_id;
        for (std::size_t k = 0; k < c.chunk; ++k) {
            ActionVector a;
            Proprio p;
            for (auto& v : a) v = rng.normal();
            for (auto& v : p) v = rng.normal();
            ch.action_targets.push_back(a);
            ch.obs_targets.push_back(p);
        }
    }
    return out;
}

inline NormStats identity_norm() {
    NormStats n;
    n.proprio_std.fill(1.0);
    n.action_std.fill(1.0);
    return n;
}

struct OpCheck {
    std::string op;
    GradCheckResult result;
};

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.storage()) v = rng.uniform(lo, hi);
    return t;
}

inline Var<double> rparam(Shape shape, Rng& rng, std::string name = {}) {
    return make_param(random_tensor(std::move(shape), rng), std::move(name));
}

/// Every differentiable op against central differences (h = 1e-5) for one
/// seed: linear, matmul, attention (plain, causal, multi-head), layer norm,
/// GELU, softmax, the structural ops, L1 and sum.
inline std::vector<OpCheck> op_grad_checks(std::uint64_t seed) {
    Rng rng(seed);
    const double h = 1e-5;
    std::vector<OpCheck> out;

    {
        auto x = rparam({4, 3}, rng), w = rparam({3, 2}, rng), b = rparam({2}, rng);
        auto t = make_const(random_tensor({4, 2}, rng));
        auto r = grad_check([&](Graph<double>& g) { return l2_loss(g, linear(g, x, w, b), t); }, {x, w, b}, h);
        out.push_back(OpCheck{"linear", r});
    }
    {
        auto x = rparam({2, 3}, rng), w = rparam({3, 4}, rng);
        auto t = make_const(random_tensor({2, 4}, rng));
        auto r = grad_check([&](Graph<double>& g) { return l2_loss(g, matmul(g, x, w), t); }, {x, w}, h);
        out.push_back(OpCheck{"matmul", r});
    }
    for (bool causal : {false, true}) {
        auto q = rparam({3, 4}, rng), k = rparam({3, 4}, rng), v = rparam({3, 4}, rng);
        auto t = make_const(random_tensor({3, 4}, rng));
        auto r = grad_check([&](Graph<double>& g) { return l2_loss(g, attention(g, q, k, v, causal), t); }, {q, k, v}, h);
        out.push_back(OpCheck{causal ? "attention (causal)" : "attention", r});
    }
    {
        auto q = rparam({2 * 3, 4}, rng), k = rparam({2 * 5, 4}, rng), v = rparam({2 * 5, 4}, rng);
        auto t = make_const(random_tensor({6, 4}, rng));
        auto r = grad_check(
            [&](Graph<double>& g) { return l2_loss(g, multi_head_attention(g, q, k, v, {2, 2, 3, 5, false}), t); },
            {q, k, v}, h);
        out.push_back(OpCheck{"mha", r});
    }
    {
        auto x = rparam({3, 5}, rng), ga = rparam({5}, rng), be = rparam({5}, rng);
        auto t = make_const(random_tensor({3, 5}, rng));
        auto r = grad_check([&](Graph<double>& g) { return l2_loss(g, layer_norm(g, x, ga, be), t); }, {x, ga, be}, h);
        out.push_back(OpCheck{"layer_norm", r});
    }
    {
        auto x = rparam({3, 4}, rng);
        auto t = make_const(random_tensor({3, 4}, rng));
        auto r1 = grad_check([&](Graph<double>& g) { return l2_loss(g, gelu(g, x), t); }, {x}, h);
        out.push_back(OpCheck{"gelu", r1});
        auto r2 = grad_check([&](Graph<double>& g) { return l2_loss(g, softmax(g, x), t); }, {x}, h);
        out.push_back(OpCheck{"softmax", r2});
    }
    {
        auto a = rparam({2, 3}, rng), b = rparam({2, 3}, rng), p = rparam({1, 3}, rng);
        auto t = make_const(random_tensor({4, 3}, rng));
        auto r = grad_check(
            [&](Graph<double>& g) {
                auto s = sub(g, add(g, a, scale(g, b, 0.7)), b);
                auto tiled = add_tiled(g, concat_rows(g, std::vector<Var<double>>{s, a}), p);
                auto picked = gather_rows(g, tiled, {3, 0, 0, 2});
                return l2_loss(g, add(g, picked, tile_rows(g, p, 4)), t);
            },
            {a, b, p}, h);
        out.push_back(OpCheck{"structural ops", r});
    }
    {
        // L1 only at smooth points: keep |pred - target| well above h.
        auto x = rparam({3, 3}, rng);
        Tensor<double> tv = x->value;
        for (std::size_t i = 0; i < tv.numel(); ++i) tv[i] += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.0);
        auto t = make_const(tv);
        auto r = grad_check([&](Graph<double>& g) { return l1_loss(g, x, t); }, {x}, h);
        out.push_back(OpCheck{"l1", r});
        auto s = grad_check([&](Graph<double>& g) { return sum(g, x); }, {x}, h);
        out.push_back(OpCheck{"sum", s});
    }
    return out;
}

/// Central-difference check of the joint loss w.r.t. every trainable
/// parameter (θ, φ, τ and both mask tokens), batch 2, double precision.
inline GradCheckResult full_model_grad_check(std::uint64_t seed) {
    const auto c = tiny_config();
    auto m = init_model<double>(c, seed);
    Rng rng = Rng::derive(seed, 77);
    const auto chunks = random_chunks(c, 2, rng);
    const auto ctx = make_context_batch<double>(chunks, c, identity_norm());
    const auto tgt = make_target_batch<double>(chunks, c);
    std::vector<Var<double>> params;
    for (const auto& p : m.trainable()) params.push_back(p.var);
    return grad_check([&](Graph<double>& g) { return forward_losses(g, m, ctx, tgt).loss.total; }, params);
}

}  // namespace actjepa::testing
