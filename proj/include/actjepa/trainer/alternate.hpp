#pragma once

#include <string>
#include <vector>

#include "actjepa/trainer/trainer.hpp"

namespace actjepa {

/// Observation-only pretraining state: the model plus an optimizer over
/// everything except the action decoder (which stays bitwise untouched).
struct PretrainState {
    Model<float> model;
    ParamList<float> params;
    OptimState<float> opt;
    std::size_t epoch = 0;
    std::size_t step = 0;
};

inline PretrainState start_pretraining(const ModelConfig& mc, const TrainConfig& tc) {
    PretrainState s{init_model<float>(mc, tc.seed, ModelKind::actjepa), {}, {}, 0, 0};
    s.params = without_prefix(s.model.trainable(), "decoder.");
    s.opt = OptimState<float>::create(s.params, tc.adam());
    return s;
}

/// One epoch of L_observations minimization with EMA after every step.
/// Returns the epoch's rows.
inline std::vector<LossRow> pretrain_jepa(PretrainState& s, const Dataset& d, const TrainConfig& tc,
                                          std::size_t total_epochs) {
    const std::size_t epoch = ++s.epoch;
    const std::size_t per_epoch = batches_per_epoch(d, s.model.config, tc);
    const auto momentum = [&](std::size_t step) -> std::optional<double> {
        return s.model.config.momentum_at(step, per_epoch * total_epochs);
    };
    auto rows = run_model_epoch(s.model, s.params, s.opt, d, Objective::observations_only, ActionLoss::l1, epoch,
                                epoch_seed(tc.seed, epoch, 1), tc.batch_size, tc.steps_per_epoch, momentum, s.step);
    s.step += rows.size();
    return rows;
}

struct FinetuneResult {
    Model<float> model;
    double final_action_loss = 0;  // mean over the final epoch
};

/// Copies `source`, appends a fresh decoder drawn from `decoder_seed` and
/// trains it on L_actions. The source is never modified.
inline FinetuneResult finetune_actions(const Model<float>& source, const Dataset& d, const TrainConfig& tc,
                                       std::uint64_t decoder_seed, bool freeze_encoder, std::size_t epochs = 1,
                                       std::uint64_t order_stream = 2) {
    FinetuneResult r{source.clone(), 0.0};
    auto& m = r.model;
    reset_decoder(m, decoder_seed);
    ParamList<float> params = m.decoder_params();
    if (!freeze_encoder) {
        for (const auto& p : m.encoder_params()) params.push_back(p);
    }
    auto opt = OptimState<float>::create(params, tc.adam());
    const auto none = [](std::size_t) -> std::optional<double> { return std::nullopt; };
    std::size_t step = 0;
    for (std::size_t e = 1; e <= epochs; ++e) {
        const auto rows = run_model_epoch(m, params, opt, d, Objective::actions_only, ActionLoss::l1, e,
                                          epoch_seed(tc.seed, e, order_stream), tc.batch_size, tc.steps_per_epoch, none, step);
        step += rows.size();
        double sum = 0;
        for (const auto& row : rows) sum += row.actions;
        r.final_action_loss = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
    }
    return r;
}

struct AlternationPoint {
    std::size_t epoch = 0;
    double finetune_action_loss = 0;
    double pretrain_obs_loss = 0;  // mean over the pretraining epoch
    std::string encoder_hash;      // pretraining lineage after this round
};

struct AlternationCurve {
    std::vector<AlternationPoint> points;
};

/// Decoder seed of alternation round k.
inline std::uint64_t round_decoder_seed(std::uint64_t seed, std::size_t round) { return Rng::derive(seed, round, 0xDEC).next(); }

/// Pretrain one epoch → fine-tune a throwaway copy for one epoch → record →
/// continue pretraining the untouched original.
inline AlternationCurve alternate(const Dataset& d, const ModelConfig& mc, const TrainConfig& tc, std::size_t pretrain_epochs,
                                  PretrainState* final_state = nullptr,
                                  const std::function<void(const AlternationPoint&)>& on_point = {}) {
    if (pretrain_epochs < 2) throw ConfigError("alternate: pretrain_epochs must be >= 2");
    check_compatible(d, mc);
    auto s = start_pretraining(mc, tc);
    AlternationCurve curve;
    for (std::size_t k = 1; k <= pretrain_epochs; ++k) {
        const auto rows = pretrain_jepa(s, d, tc, pretrain_epochs);
        double obs = 0;
        for (const auto& r : rows) obs += *r.observations;
        const auto before = hash_params(s.model.store.all());
        const auto ft = finetune_actions(s.model, d, tc, round_decoder_seed(tc.seed, k), tc.freeze_encoder);
        if (hash_params(s.model.store.all()) != before) throw ContractError("alternate: fine-tuning touched the pretraining lineage");
        AlternationPoint p{k, ft.final_action_loss, rows.empty() ? 0.0 : obs / static_cast<double>(rows.size()), before};
        curve.points.push_back(p);
        if (on_point) on_point(p);
    }
    if (final_state) *final_state = std::move(s);
    return curve;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
            i = j + 1;
        }
        return r;
    };
    if (x.size() != y.size() || x.size() < 2) throw DimensionError("spearman: need two equal-length samples");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxx == 0 || syy == 0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

}  // namespace actjepa
