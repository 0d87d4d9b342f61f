#pragma once

#include <deque>
#include <string>
#include <vector>

#include "actjepa/datastore/dataset.hpp"
#include "actjepa/model/actjepa.hpp"

namespace actjepa {

/// GPT-style next-action regressor over an interleaved stream
/// o_1, a_1, o_2, a_2, ... with a strictly causal mask.
template <class T>
class RbcModel {
public:
    ModelKind kind = ModelKind::rbc;
    ModelConfig config;
    ParamStore<T> store;
    Linear<T> image, proprio, action;
    Var<T> task_embed;
    std::vector<SelfBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Linear<T> head;
    Tensor<T> pe;  // [2h, D]

    RbcModel() = default;
    RbcModel(const RbcModel&) = delete;
    RbcModel& operator=(const RbcModel&) = delete;
    RbcModel(RbcModel&&) = default;
    RbcModel& operator=(RbcModel&&) = default;

    ParamList<T> trainable() const { return store.trainable(); }
    RbcModel clone() const;
};

template <class T>
RbcModel<T> init_rbc(const ModelConfig& c, std::uint64_t seed) {
    c.validate();
    RbcModel<T> m;
    m.config = c;
    ParamBuilder<T> pb(m.store, Rng::derive(seed, 5));
    const std::size_t D = c.d_model;
    m.image = Linear<T>::build(pb, "rbc.image", c.image_height * c.image_width, D);
    m.proprio = Linear<T>::build(pb, "rbc.proprio", c.proprio_dim, D);
    m.task_embed = pb.uniform("rbc.task_embed", {c.task_count, D}, c.task_count);
    m.action = Linear<T>::build(pb, "rbc.action", c.action_dim, D);
    // depth matches the ACT encoder + decoder stack
    for (std::size_t i = 0; i < c.encoder_layers + c.decoder_layers; ++i) {
        m.blocks.push_back(SelfBlock<T>::build(pb, "rbc.block" + std::to_string(i), D, c.n_heads, c.ffn_hidden));
    }
    m.ln_f = LayerNorm<T>::build(pb, "rbc.ln_f", D);
    m.head = Linear<T>::build(pb, "rbc.head", D, c.action_dim);
    m.pe = sinusoid_1d<T>(2 * c.history, D);
    return m;
}

template <class T>
RbcModel<T> RbcModel<T>::clone() const {
    auto m = init_rbc<T>(config, 0);
    for (const auto& p : store.all()) m.store.get(p.name)->value = p.var->value;
    return m;
}

/// `groups` windows of `len` steps each; the action of the last step is an
/// input placeholder that the causal mask hides from its own prediction.
template <class T>
struct RbcBatch {
    std::size_t groups = 0, len = 0;
    Tensor<T> images;       // [G*len, H*W]
    Tensor<T> proprio;      // [G*len, 4], normalized
    Tensor<T> task_onehot;  // [G*len, K]
    Tensor<T> actions;      // [G*len, 3], normalized; inputs and targets
};

template <class T>
RbcBatch<T> make_rbc_batch(const std::vector<std::vector<const Observation*>>& obs,
                           const std::vector<std::vector<ActionVector>>& actions, const ModelConfig& c,
                           const NormStats& norm) {
    if (obs.empty() || obs.front().empty()) throw DimensionError("rbc: empty history");
    RbcBatch<T> b;
    b.groups = obs.size();
    b.len = obs.front().size();
    if (b.len > c.history) throw DimensionError("rbc: history longer than the model window");
    const std::size_t rows = b.groups * b.len, pixels = c.image_height * c.image_width;
    b.images = Tensor<T>({rows, pixels});
    b.proprio = Tensor<T>({rows, c.proprio_dim});
    b.task_onehot = Tensor<T>({rows, c.task_count});
    b.actions = Tensor<T>({rows, c.action_dim});
    for (std::size_t gi = 0; gi < b.groups; ++gi) {
        if (obs[gi].size() != b.len || actions[gi].size() != b.len) throw DimensionError("rbc: ragged batch");
        for (std::size_t k = 0; k < b.len; ++k) {
            const std::size_t r = gi * b.len + k;
            const auto& o = *obs[gi][k];
            check_observation<T>(o, c);
            std::copy(o.image.begin(), o.image.end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(r * pixels));
            const auto z = norm.normalize_proprio(o.proprio);
            for (std::size_t j = 0; j < c.proprio_dim; ++j) b.proprio.at(r, j) = static_cast<T>(z[j]);
            b.task_onehot.at(r, static_cast<std::size_t>(o.task_id)) = T(1);
            const auto a = norm.normalize_action(actions[gi][k]);
            for (std::size_t j = 0; j < c.action_dim; ++j) b.actions.at(r, j) = static_cast<T>(a[j]);
        }
    }
    return b;
}

/// Next-action predictions at every observation position: [G*len, 3].
template <class T>
Var<T> rbc_forward(Graph<T>& g, const RbcModel<T>& m, const RbcBatch<T>& b) {
    const std::size_t G = b.groups, L = b.len, D = m.config.d_model;
    auto obs_tok = add(g, add(g, m.image(g, make_const(b.images)), m.proprio(g, make_const(b.proprio))),
                       matmul(g, make_const(b.task_onehot), m.task_embed));
    auto act_tok = m.action(g, make_const(b.actions));
    std::vector<std::size_t> order;
    for (std::size_t gi = 0; gi < G; ++gi) {
        for (std::size_t k = 0; k < L; ++k) {
            order.push_back(gi * L + k);
            order.push_back(G * L + gi * L + k);
        }
    }
    auto x = gather_rows(g, concat_rows(g, {obs_tok, act_tok}), std::move(order));
    Tensor<T> pe({2 * L, D});
    std::copy_n(m.pe.data().begin(), 2 * L * D, pe.data().begin());
    x = add_tiled(g, x, make_const(std::move(pe)));
    for (const auto& blk : m.blocks) x = blk(g, x, G, 2 * L, true);
    std::vector<std::size_t> at_obs;
    for (std::size_t gi = 0; gi < G; ++gi)
        for (std::size_t k = 0; k < L; ++k) at_obs.push_back(gi * 2 * L + 2 * k);
    return m.head(g, m.ln_f(g, gather_rows(g, x, std::move(at_obs))));
}

/// Rolling window of the most recent (observation, executed action) pairs.
class RbcBuffer {
public:
    explicit RbcBuffer(std::size_t history) : history_(history) {}

    /// Acts on `obs` given the stored past and records the pair.
    template <class T>
    ActionVector step(const RbcModel<T>& m, const NormStats& norm, const Observation& obs) {
        past_.push_back({obs, ActionVector{}});
        while (past_.size() > history_) past_.pop_front();  // left-truncation
        std::vector<const Observation*> os;
        std::vector<ActionVector> as;
        for (const auto& [o, a] : past_) {
            os.push_back(&o);
            as.push_back(a);
        }
        as.back() = norm.action_mean;  // placeholder, masked from its own prediction
        Graph<T> g(false);
        const auto out = rbc_forward(g, m, make_rbc_batch<T>({os}, {as}, m.config, norm));
        ActionVector z{};
        for (std::size_t j = 0; j < kActionDim; ++j) z[j] = static_cast<double>(out->value.at(past_.size() - 1, j));
        const auto a = norm.denormalize_action(z);
        past_.back().second = a;
        ++queries_;
        return a;
    }

    std::size_t size() const { return past_.size(); }
    std::size_t queries() const { return queries_; }

private:
    std::size_t history_;
    std::deque<std::pair<Observation, ActionVector>> past_;
    std::size_t queries_ = 0;
};

/// Training windows: every start s in [0, L-h] of every episode.
inline std::vector<ChunkRef> rbc_window_refs(const std::vector<Trajectory>& episodes, std::size_t h) {
    std::vector<ChunkRef> refs;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        if (episodes[e].length() < h) {
            throw DatasetError(DatasetError::Kind::sampling, "episode shorter than the RBC history window");
        }
        for (std::size_t s = 0; s + h <= episodes[e].length(); ++s) refs.push_back({e, s});
    }
    return refs;
}

template <class T>
RbcBatch<T> make_rbc_window_batch(const std::vector<Trajectory>& episodes, const std::vector<ChunkRef>& refs,
                                  const ModelConfig& c, const NormStats& norm) {
    std::vector<std::vector<const Observation*>> os;
    std::vector<std::vector<ActionVector>> as;
    for (const auto& r : refs) {
        const auto& ep = episodes.at(r.episode);
        os.emplace_back();
        as.emplace_back();
        for (std::size_t k = 0; k < c.history; ++k) {
            os.back().push_back(&ep.observations.at(r.t + k));
            as.back().push_back(ep.actions.at(r.t + k));
        }
    }
    return make_rbc_batch<T>(os, as, c, norm);
}

}  // namespace actjepa
