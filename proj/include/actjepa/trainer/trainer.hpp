#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "actjepa/baselines/act.hpp"
#include "actjepa/baselines/rbc.hpp"
#include "actjepa/datastore/io.hpp"
#include "actjepa/evalkit/rollout.hpp"
#include "actjepa/model/checkpoint.hpp"

namespace actjepa {

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, std::size_t step)
        : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step)),
          epoch(epoch),
          step(step) {}
    std::size_t epoch, step;
};

struct TrainConfig {
    ModelKind kind = ModelKind::actjepa;
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    std::size_t steps_per_epoch = 0;  // 0: one full pass over all chunk starts
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    ActionLoss act_loss = ActionLoss::l1;  // ACT baseline only
    bool freeze_encoder = false;            // fine-tuning only
    std::size_t log_every = 1;              // steps between loss-log rows
    std::size_t select_every = 5;           // epochs between selection rollouts; 0 keeps the last epoch
    std::size_t select_seeds = 5;           // per task
    std::uint64_t select_seed_base = 5000;

    AdamConfig adam() const {
        AdamConfig a;
        a.lr = lr;
        a.weight_decay = weight_decay;
        return a;
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"kind", kind_name(c.kind)},          {"epochs", c.epochs},
            {"batch_size", c.batch_size},         {"steps_per_epoch", c.steps_per_epoch},
            {"lr", c.lr},                         {"weight_decay", c.weight_decay},
            {"seed", c.seed},                     {"act_loss", c.act_loss == ActionLoss::l1 ? "l1" : "l2"},
            {"freeze_encoder", c.freeze_encoder}, {"log_every", c.log_every},
            {"select_every", c.select_every},     {"select_seeds", c.select_seeds},
            {"select_seed_base", c.select_seed_base}};
}

/// One loss-log row. `observations` is absent for the baselines.
struct LossRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double actions = 0;
    std::optional<double> observations;
    double total = 0;
};

inline std::string loss_log_header(bool with_observations) {
    return with_observations ? "epoch,step,L_actions,L_observations,L" : "epoch,step,L_actions,L";
}

inline std::string format_loss_row(const LossRow& r) {
    char buf[160];
    if (r.observations) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g", r.epoch, r.step, r.actions, *r.observations, r.total);
    } else {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g", r.epoch, r.step, r.actions, r.total);
    }
    return buf;
}

/// Per-epoch batch order: depends only on (seed, epoch, stream).
inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch, std::uint64_t stream = 0) {
    return Rng::derive(seed, epoch, stream).next();
}

inline std::vector<std::vector<ChunkRef>> cut_batches(std::vector<ChunkRef> refs, std::size_t batch_size,
                                                      std::uint64_t seed, std::size_t max_batches) {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    Rng rng(seed);
    shuffle(refs, rng);
    std::vector<std::vector<ChunkRef>> out;
    for (std::size_t i = 0; i < refs.size(); i += batch_size) {
        out.emplace_back(refs.begin() + static_cast<std::ptrdiff_t>(i),
                         refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), i + batch_size)));
        if (max_batches && out.size() == max_batches) break;
    }
    return out;
}

inline std::vector<sim::TaskSpec> dataset_tasks(const Dataset& d) {
    std::vector<sim::TaskSpec> out;
    for (const auto& name : d.manifest.tasks) {
        const auto t = sim::task_from_name(name);
        if (!t) throw DatasetError(DatasetError::Kind::integrity, "unknown task '" + name + "' in dataset");
        out.push_back(*t);
    }
    return out;
}

inline sim::RenderSpec render_spec(const Dataset& d) { return {d.manifest.image_height, d.manifest.image_width}; }

inline void check_compatible(const Dataset& d, const ModelConfig& c) {
    if (static_cast<std::size_t>(d.manifest.image_height) != c.image_height ||
        static_cast<std::size_t>(d.manifest.image_width) != c.image_width) {
        throw DimensionError("dataset images are " + std::to_string(d.manifest.image_height) + "x" +
                             std::to_string(d.manifest.image_width) + ", model expects " +
                             std::to_string(c.image_height) + "x" + std::to_string(c.image_width));
    }
    for (const auto& ep : d.episodes) {
        if (static_cast<std::size_t>(ep.task_id) >= c.task_count) throw DimensionError("dataset task id exceeds model task count");
    }
}

/// Parameters touched by each regime.
template <class T>
ParamList<T> without_prefix(const ParamList<T>& ps, std::string_view prefix) {
    ParamList<T> out;
    for (const auto& p : ps)
        if (std::string_view(p.name).substr(0, prefix.size()) != prefix) out.push_back(p);
    return out;
}

/// One optimizer step of an ACT-JEPA/ACT model on the given chunks.
template <class T>
LossRow model_step(Model<T>& m, const ParamList<T>& params, OptimState<T>& opt, const std::vector<ChunkSample>& chunks,
                   const NormStats& norm, Objective obj, ActionLoss act_loss, std::optional<double> ema_momentum) {
    Graph<T> g;
    const auto ctx = make_context_batch<T>(chunks, m.config, norm);
    const auto tgt = make_target_batch<T>(chunks, m.config);
    const auto r = forward_losses(g, m, ctx, tgt, obj, act_loss == ActionLoss::l2);
    LossRow row;
    row.total = static_cast<double>(r.loss.total->value.item());
    if (r.loss.actions) row.actions = static_cast<double>(r.loss.actions->value.item());
    if (r.loss.observations) row.observations = static_cast<double>(r.loss.observations->value.item());
    if (!std::isfinite(row.total)) return row;
    adam_step(params, g.backward(r.loss.total), opt);
    if (ema_momentum) ema_update(m, *ema_momentum);
    return row;
}

template <class T>
LossRow rbc_step(RbcModel<T>& m, const ParamList<T>& params, OptimState<T>& opt, const std::vector<Trajectory>& episodes,
                 const std::vector<ChunkRef>& windows, const NormStats& norm) {
    Graph<T> g;
    const auto b = make_rbc_window_batch<T>(episodes, windows, m.config, norm);
    const auto loss = l2_loss(g, rbc_forward(g, m, b), make_const(b.actions));
    LossRow row;
    row.actions = row.total = static_cast<double>(loss->value.item());
    if (!std::isfinite(row.total)) return row;
    adam_step(params, g.backward(loss), opt);
    return row;
}

/// Runs one epoch of a model regime; returns per-step rows (unfiltered).
template <class T>
std::vector<LossRow> run_model_epoch(Model<T>& m, const ParamList<T>& params, OptimState<T>& opt, const Dataset& d,
                                     Objective obj, ActionLoss act_loss, std::size_t epoch, std::uint64_t order_seed,
                                     std::size_t batch_size, std::size_t max_batches,
                                     const std::function<std::optional<double>(std::size_t)>& momentum,
                                     std::size_t first_step) {
    const ChunkOptions copt{m.config.chunk, false};
    const auto batches = cut_batches(all_chunk_refs(d.episodes, copt.n), batch_size, order_seed, max_batches);
    std::vector<LossRow> rows;
    std::size_t step = first_step;
    for (const auto& refs : batches) {
        std::vector<ChunkSample> chunks;
        chunks.reserve(refs.size());
        for (const auto& r : refs) chunks.push_back(make_chunk(d.episodes, d.manifest.norm, r, copt));
        auto row = model_step(m, params, opt, chunks, d.manifest.norm, obj, act_loss, momentum(step));
        row.epoch = epoch;
        row.step = ++step;
        if (!std::isfinite(row.total)) throw DivergenceError(epoch, row.step);
        rows.push_back(row);
    }
    return rows;
}

template <class T>
std::vector<LossRow> run_rbc_epoch(RbcModel<T>& m, const ParamList<T>& params, OptimState<T>& opt, const Dataset& d,
                                   std::size_t epoch, std::uint64_t order_seed, std::size_t batch_size,
                                   std::size_t max_batches, std::size_t first_step) {
    const auto batches = cut_batches(rbc_window_refs(d.episodes, m.config.history), batch_size, order_seed, max_batches);
    std::vector<LossRow> rows;
    std::size_t step = first_step;
    for (const auto& refs : batches) {
        auto row = rbc_step(m, params, opt, d.episodes, refs, d.manifest.norm);
        row.epoch = epoch;
        row.step = ++step;
        if (!std::isfinite(row.total)) throw DivergenceError(epoch, row.step);
        rows.push_back(row);
    }
    return rows;
}

inline std::size_t batches_per_epoch(const Dataset& d, const ModelConfig& mc, const TrainConfig& tc) {
    const std::size_t n = tc.kind == ModelKind::rbc ? rbc_window_refs(d.episodes, mc.history).size()
                                                     : all_chunk_refs(d.episodes, mc.chunk).size();
    std::size_t b = (n + tc.batch_size - 1) / tc.batch_size;
    if (tc.steps_per_epoch) b = std::min(b, tc.steps_per_epoch);
    return b;
}

/// Progress bookkeeping stored in every checkpoint's train_state.
struct RunState {
    std::size_t epoch = 0;  // completed epochs
    std::size_t step = 0;   // completed optimizer steps
    std::size_t log_rows = 0;
    double best_success = -1.0;
    std::size_t best_epoch = 0;
};

inline nlohmann::json to_json(const RunState& s) {
    return {{"epoch", s.epoch},
            {"step", s.step},
            {"log_rows", s.log_rows},
            {"best_success", s.best_success},
            {"best_epoch", s.best_epoch}};
}

inline RunState run_state_from_json(const nlohmann::json& j) {
    RunState s;
    s.epoch = j.at("epoch").get<std::size_t>();
    s.step = j.at("step").get<std::size_t>();
    s.log_rows = j.at("log_rows").get<std::size_t>();
    s.best_success = j.at("best_success").get<double>();
    s.best_epoch = j.at("best_epoch").get<std::size_t>();
    return s;
}

inline nlohmann::json norm_json(const NormStats& n) { return norm_to_json(n); }

/// Norm stats stored alongside a policy so it can be evaluated without
/// the dataset.
inline NormStats checkpoint_norm(const CheckpointData& d) {
    if (!d.train_state.contains("norm")) throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint has no norm stats");
    return norm_from_json(d.train_state.at("norm"));
}

struct TrainResult {
    std::vector<LossRow> rows;  // rows logged by this invocation
    RunState state;
    CheckpointData last;
    CheckpointData best;
};

/// Output locations inside a run directory.
struct RunPaths {
    std::filesystem::path root;
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path logs() const { return root / "logs"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path last() const { return checkpoints() / "last.ckpt"; }
    std::filesystem::path best() const { return checkpoints() / "best.ckpt"; }
    std::filesystem::path loss_log() const { return logs() / "loss.csv"; }
};

/// Keeps only the header and the first `rows` data lines of a loss log.
inline void truncate_log(const std::filesystem::path& p, std::size_t rows) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read loss log " + p.string());
    std::string line, kept;
    for (std::size_t i = 0; i <= rows && std::getline(in, line); ++i) kept += line + "\n";
    in.close();
    write_file(p, kept);
}

/// Trains an actjepa, act or rbc policy. With `out` set, writes the loss log
/// and last/best checkpoints there; with `resume`, continues from the last
/// checkpoint in `out` and reproduces the unbroken run.
inline TrainResult train_policy(const Dataset& d, const ModelConfig& mc, const TrainConfig& tc,
                                const std::optional<RunPaths>& out = std::nullopt, bool resume = false,
                                std::size_t stop_after_epoch = 0) {
    using T = float;
    mc.validate();
    check_compatible(d, mc);
    const bool is_rbc = tc.kind == ModelKind::rbc;
    const bool jepa = tc.kind == ModelKind::actjepa;
    std::optional<Model<T>> model;
    std::optional<RbcModel<T>> rbc;
    if (is_rbc) rbc.emplace(init_rbc<T>(mc, tc.seed));
    else model.emplace(init_model<T>(mc, tc.seed, tc.kind));
    const ParamList<T> params = is_rbc ? rbc->trainable() : model->trainable();
    auto opt = OptimState<T>::create(params, tc.adam());
    const auto tasks = dataset_tasks(d);
    const std::size_t per_epoch = batches_per_epoch(d, mc, tc);
    const std::size_t total_steps = per_epoch * tc.epochs;

    RunState state;
    auto snap = [&](const RunState& s) {
        nlohmann::json ts = to_json(s);
        ts["norm"] = norm_json(d.manifest.norm);
        ts["train"] = to_json(tc);
        return is_rbc ? snapshot<T>(*rbc, &opt, ts) : snapshot<T>(*model, &opt, ts);
    };
    if (resume) {
        if (!out) throw ConfigError("resume requires a run directory");
        const auto ck = load_checkpoint(out->last());
        if (is_rbc) restore_params<T>(*rbc, ck);
        else restore_params<T>(*model, ck);
        opt = restore_optimizer(params, ck);
        state = run_state_from_json(ck.train_state);
        truncate_log(out->loss_log(), state.log_rows);
    }
    std::ofstream log;
    if (out) {
        std::filesystem::create_directories(out->checkpoints());
        std::filesystem::create_directories(out->logs());
        if (!resume) {
            std::ofstream(out->loss_log(), std::ios::trunc) << loss_log_header(jepa) << "\n";
        }
        log.open(out->loss_log(), std::ios::app);
        if (!log) throw std::runtime_error("cannot open loss log " + out->loss_log().string());
    }

    TrainResult result;
    std::vector<std::uint64_t> sel_seeds;
    for (std::size_t i = 0; i < tc.select_seeds; ++i) sel_seeds.push_back(tc.select_seed_base + i);
    if (!resume) result.best = snap(state);
    else if (out && std::filesystem::exists(out->best())) result.best = load_checkpoint(out->best());

    for (std::size_t epoch = state.epoch + 1; epoch <= tc.epochs; ++epoch) {
        const auto order = epoch_seed(tc.seed, epoch);
        std::vector<LossRow> rows;
        if (is_rbc) {
            rows = run_rbc_epoch(*rbc, params, opt, d, epoch, order, tc.batch_size, tc.steps_per_epoch, state.step);
        } else {
            const auto momentum = [&](std::size_t step) -> std::optional<double> {
                if (!jepa) return std::nullopt;
                return mc.momentum_at(step, total_steps);
            };
            rows = run_model_epoch(*model, params, opt, d, jepa ? Objective::joint : Objective::actions_only, tc.act_loss,
                                   epoch, order, tc.batch_size, tc.steps_per_epoch, momentum, state.step);
        }
        state.step += rows.size();
        state.epoch = epoch;
        for (const auto& r : rows) {
            if (r.step % tc.log_every != 0) continue;
            result.rows.push_back(r);
            ++state.log_rows;
            if (log.is_open()) log << format_loss_row(r) << "\n";
        }
        if (log.is_open()) log.flush();

        const bool select = tc.select_every == 0 ? epoch == tc.epochs
                                                  : (epoch % tc.select_every == 0 || epoch == tc.epochs);
        if (select) {
            double sr = 1.0;
            if (tc.select_every != 0) {
                const auto factory = is_rbc ? rbc_agent_factory(*rbc, d.manifest.norm)
                                            : chunk_agent_factory(*model, d.manifest.norm);
                sr = success_rate(factory, tasks, sel_seeds, render_spec(d));
            }
            if (sr >= state.best_success) {
                state.best_success = sr;
                state.best_epoch = epoch;
                result.best = snap(state);
                if (out) save_checkpoint(result.best, out->best());
            }
        }
        result.last = snap(state);
        if (out) save_checkpoint(result.last, out->last());
        if (stop_after_epoch && epoch == stop_after_epoch) break;
    }
    result.state = state;
    return result;
}

}  // namespace actjepa
