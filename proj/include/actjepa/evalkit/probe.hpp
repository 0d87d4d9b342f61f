#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actjepa/evalkit/evaluate.hpp"
#include "actjepa/evalkit/metrics.hpp"
#include "actjepa/trainer/trainer.hpp"

namespace actjepa {

struct ProbeConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double holdout_fraction = 0.2;
};

struct ProbeResult {
    std::uint64_t probe_seed = 0;
    double rmse = 0;  // denormalized proprio units
    double ate = 0;   // over the (x, y) position columns
    std::string hash_before, hash_after;
    std::size_t train_chunks = 0;
    std::size_t holdout_chunks = 0;
};

struct ProbeReport {
    std::string model;
    std::vector<ProbeResult> seeds;

    MeanStd rmse() const { return stat(&ProbeResult::rmse); }
    MeanStd ate() const { return stat(&ProbeResult::ate); }

private:
    MeanStd stat(double ProbeResult::*field) const {
        std::vector<double> xs;
        for (const auto& s : seeds) xs.push_back(s.*field);
        return mean_std(xs);
    }
};

namespace detail {

/// Frozen s_x of every chunk start, stacked: [refs * n_ctx, D].
inline Tensor<float> encode_all(const Model<float>& m, const std::vector<Trajectory>& eps, const std::vector<ChunkRef>& refs,
                                const NormStats& norm) {
    const std::size_t L = m.config.n_ctx(), D = m.config.d_model, step = 64;
    Tensor<float> out({refs.size() * L, D});
    for (std::size_t i = 0; i < refs.size(); i += step) {
        std::vector<const Observation*> obs;
        for (std::size_t j = i; j < std::min(refs.size(), i + step); ++j) obs.push_back(&eps[refs[j].episode].observations[refs[j].t]);
        Graph<float> g(false);
        const auto s = encode_context(g, m, make_context_batch<float>(obs, m.config, norm))->value;
        std::copy(s.data().begin(), s.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * L * D));
    }
    return out;
}

inline Tensor<float> gather_groups(const Tensor<float>& all, const std::vector<std::size_t>& idx, std::size_t rows_per) {
    const std::size_t D = all.cols();
    Tensor<float> out({idx.size() * rows_per, D});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto src = all.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * rows_per * D);
        std::copy(src, src + static_cast<std::ptrdiff_t>(rows_per * D), out.data().begin() + static_cast<std::ptrdiff_t>(k * rows_per * D));
    }
    return out;
}

}  // namespace detail

/// Freezes the context encoder, trains a fresh decoder-shaped head with a
/// proprio-sized output to regress normalized o_{t+1..t+n} on the training
/// split, and scores it on held-out episodes in denormalized units.
inline ProbeResult probe_representation(const Model<float>& m, const NormStats& norm, const Dataset& d,
                                        std::uint64_t probe_seed, const ProbeConfig& pc = {}) {
    const auto& c = m.config;
    check_compatible(d, c);
    ProbeResult r;
    r.probe_seed = probe_seed;
    r.hash_before = hash_params(m.encoder_params());

    const auto split = split_by_seed(d.episodes, pc.holdout_fraction);
    if (split.train.empty() || split.holdout.empty()) throw DatasetError(DatasetError::Kind::empty, "probe: empty train or held-out split");
    const auto train_refs = all_chunk_refs(split.train, c.chunk);
    const auto hold_refs = all_chunk_refs(split.holdout, c.chunk);
    r.train_chunks = train_refs.size();
    r.holdout_chunks = hold_refs.size();
    const auto train_x = detail::encode_all(m, split.train, train_refs, norm);
    const auto hold_x = detail::encode_all(m, split.holdout, hold_refs, norm);
    const ChunkOptions copt{c.chunk, false};
    auto targets = [&](const std::vector<Trajectory>& eps, const std::vector<ChunkRef>& refs) {
        Tensor<float> t({refs.size() * c.chunk, c.proprio_dim});
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const auto ch = make_chunk(eps, norm, refs[i], copt);
            for (std::size_t k = 0; k < c.chunk; ++k)
                for (std::size_t j = 0; j < c.proprio_dim; ++j) t.at(i * c.chunk + k, j) = static_cast<float>(ch.obs_targets[k][j]);
        }
        return t;
    };
    const auto train_y = targets(split.train, train_refs);

    ParamStore<float> store;
    ParamBuilder<float> pb(store, Rng::derive(probe_seed, 6));
    const auto head = QueryStack<float>::build(pb, "probe", c, c.decoder_layers, c.proprio_dim);
    const auto params = store.trainable();
    AdamConfig ac;
    ac.lr = pc.lr;
    ac.weight_decay = pc.weight_decay;
    auto opt = OptimState<float>::create(params, ac);
    const std::size_t L = c.n_ctx();

    std::vector<ChunkRef> idx_refs(train_refs.size());
    for (std::size_t i = 0; i < idx_refs.size(); ++i) idx_refs[i] = {i, 0};
    for (std::size_t e = 1; e <= pc.epochs; ++e) {
        for (const auto& batch : cut_batches(idx_refs, pc.batch_size, epoch_seed(probe_seed, e, 3), 0)) {
            std::vector<std::size_t> idx;
            for (const auto& b : batch) idx.push_back(b.episode);
            Graph<float> g;
            const auto pred = run_query_stack(g, head, m.time_pe, make_const(detail::gather_groups(train_x, idx, L)), idx.size(), L,
                                              c.chunk, nullptr);
            const auto loss = l2_loss(g, pred, make_const(detail::gather_groups(train_y, idx, c.chunk)));
            if (!std::isfinite(static_cast<double>(loss->value.item()))) throw DivergenceError(e, opt.step + 1);
            adam_step(params, g.backward(loss), opt);
        }
    }

    Tensor<double> pred({hold_refs.size() * c.chunk, c.proprio_dim}), truth(pred.shape());
    Tensor<double> pred_xy({pred.rows(), 2}), truth_xy(pred_xy.shape());
    for (std::size_t i = 0; i < hold_refs.size(); i += 64) {
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(hold_refs.size(), i + 64); ++j) idx.push_back(j);
        Graph<float> g(false);
        const auto out = run_query_stack(g, head, m.time_pe, make_const(detail::gather_groups(hold_x, idx, L)), idx.size(), L,
                                         c.chunk, nullptr)->value;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& ref = hold_refs[idx[k]];
            for (std::size_t s = 0; s < c.chunk; ++s) {
                const std::size_t row = idx[k] * c.chunk + s;
                Proprio z{};
                for (std::size_t j = 0; j < c.proprio_dim; ++j) z[j] = static_cast<double>(out.at(k * c.chunk + s, j));
                const auto p = norm.denormalize_proprio(z);
                const auto& t = split.holdout[ref.episode].observations[ref.t + s + 1].proprio;
                for (std::size_t j = 0; j < c.proprio_dim; ++j) {
                    pred.at(row, j) = p[j];
                    truth.at(row, j) = t[j];
                }
                for (std::size_t j = 0; j < 2; ++j) {
                    pred_xy.at(row, j) = p[j];
                    truth_xy.at(row, j) = t[j];
                }
            }
        }
    }
    r.rmse = rmse(pred, truth);
    r.ate = ate(pred_xy, truth_xy);
    r.hash_after = hash_params(m.encoder_params());
    if (r.hash_after != r.hash_before) throw ContractError("probe: encoder parameters changed");
    return r;
}

/// probe_representation for seeds base, base+1, ..., base+count-1.
inline ProbeReport probe_seeds(const std::string& label, const Model<float>& m, const NormStats& norm, const Dataset& d,
                               std::size_t count, std::uint64_t base = 0, const ProbeConfig& pc = {}) {
    ProbeReport rep;
    rep.model = label;
    rep.seeds.resize(count);
    parallel_for(count, worker_threads(), [&](std::size_t i) { rep.seeds[i] = probe_representation(m, norm, d, base + i, pc); });
    return rep;
}

}  // namespace actjepa
