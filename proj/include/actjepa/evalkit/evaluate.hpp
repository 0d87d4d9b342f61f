#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "actjepa/datastore/io.hpp"
#include "actjepa/evalkit/metrics.hpp"
#include "actjepa/evalkit/rollout.hpp"
#include "actjepa/model/checkpoint.hpp"

namespace actjepa {

/// Evaluation seeds start here; collection uses 0.., selection 5000...
inline constexpr std::uint64_t kEvalSeedBase = 10000;

inline std::vector<std::uint64_t> eval_seed_list(std::size_t count, std::uint64_t base = kEvalSeedBase) {
    std::vector<std::uint64_t> s(count);
    for (std::size_t i = 0; i < count; ++i) s[i] = base + i;
    return s;
}

/// Worker count from ACTJEPA_THREADS (default 1).
inline std::size_t worker_threads() {
    const char* v = std::getenv("ACTJEPA_THREADS");
    if (!v || !*v) return 1;
    const long n = std::strtol(v, nullptr, 10);
    return n >= 1 ? static_cast<std::size_t>(n) : 1;
}

/// Runs f(i) for i in [0, count) on up to `threads` workers. Callers write
/// results by index, so output does not depend on scheduling.
template <class F>
void parallel_for(std::size_t count, std::size_t threads, F&& f) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

using TaskAgentFactory = std::function<std::unique_ptr<Agent>(const sim::TaskSpec&)>;

inline TaskAgentFactory any_task(AgentFactory f) {
    return [f = std::move(f)](const sim::TaskSpec&) { return f(); };
}

inline TaskAgentFactory expert_factory() {
    return [](const sim::TaskSpec& t) { return std::make_unique<ExpertAgent>(t); };
}

inline TaskAgentFactory null_factory() {
    return [](const sim::TaskSpec&) { return std::make_unique<NullAgent>(); };
}

/// A trained policy rebuilt from a checkpoint. Shares ownership of the
/// parameters, so copies are cheap and factories stay valid.
struct LoadedPolicy {
    ModelKind kind = ModelKind::actjepa;
    ModelConfig config;
    NormStats norm;
    std::uint64_t train_seed = 0;
    std::shared_ptr<const Model<float>> model;
    std::shared_ptr<const RbcModel<float>> rbc;

    TaskAgentFactory factory() const {
        if (rbc) {
            return [m = rbc, n = norm](const sim::TaskSpec&) { return std::make_unique<RbcAgent<float>>(*m, n); };
        }
        return [m = model, n = norm](const sim::TaskSpec&) { return std::make_unique<ChunkAgent<float>>(*m, n); };
    }
};

/// ACT-JEPA or ACT model with the checkpoint's parameters.
inline Model<float> model_from_checkpoint(const CheckpointData& ck) {
    if (ck.kind == ModelKind::rbc) throw CheckpointError(CheckpointError::Kind::model_kind, "rbc checkpoints carry no context encoder");
    auto m = init_model<float>(ck.config, 0, ck.kind);
    restore_params<float>(m, ck);
    return m;
}

inline LoadedPolicy load_policy(const CheckpointData& ck) {
    LoadedPolicy p;
    p.kind = ck.kind;
    p.config = ck.config;
    if (!ck.train_state.contains("norm")) throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint has no norm stats");
    p.norm = norm_from_json(ck.train_state.at("norm"));
    if (ck.train_state.contains("train")) p.train_seed = ck.train_state.at("train").value("seed", std::uint64_t{0});
    if (ck.kind == ModelKind::rbc) {
        auto m = init_rbc<float>(ck.config, 0);
        restore_params<float>(m, ck);
        p.rbc = std::make_shared<const RbcModel<float>>(std::move(m));
    } else {
        p.model = std::make_shared<const Model<float>>(model_from_checkpoint(ck));
    }
    return p;
}

/// One policy under evaluation: a model label, its training seed and a
/// per-episode agent factory.
struct EvalPolicy {
    std::string model;
    std::uint64_t train_seed = 0;
    TaskAgentFactory make;
};

struct EvalCell {
    std::string model;
    std::string task;
    int task_id = 0;
    std::uint64_t train_seed = 0;
    std::uint64_t eval_seed = 0;
    bool success = false;
    std::size_t steps = 0;
    std::size_t queries = 0;
};

/// Success rates (percent) of one model: per training seed, then mean ± std
/// across training seeds.
struct ModelSummary {
    std::string model;
    std::size_t evaluations = 0;
    std::size_t successes = 0;
    std::map<std::uint64_t, double> per_seed;
    MeanStd rate;
};

struct EvalTable {
    std::vector<EvalCell> cells;

    /// Grouped by model name and seed in sorted order, so the result does
    /// not depend on the order cells were produced in.
    std::vector<ModelSummary> summary() const {
        std::map<std::string, std::map<std::uint64_t, std::pair<std::size_t, std::size_t>>> counts;
        for (const auto& c : cells) {
            auto& [ok, n] = counts[c.model][c.train_seed];
            ok += c.success;
            ++n;
        }
        std::vector<ModelSummary> out;
        for (const auto& [model, seeds] : counts) {
            ModelSummary s;
            s.model = model;
            std::vector<double> rates;
            for (const auto& [seed, on] : seeds) {
                s.successes += on.first;
                s.evaluations += on.second;
                const double r = 100.0 * static_cast<double>(on.first) / static_cast<double>(on.second);
                s.per_seed[seed] = r;
                rates.push_back(r);
            }
            s.rate = mean_std(rates);
            out.push_back(std::move(s));
        }
        return out;
    }

    std::optional<ModelSummary> summary_of(const std::string& model) const {
        for (auto& s : summary())
            if (s.model == model) return s;
        return std::nullopt;
    }
};

/// Full policies × tasks × seeds evaluation; rollouts may run on
/// `threads` workers, cells keep the serial (policy, task, seed) order.
inline EvalTable evaluate_success(const std::vector<EvalPolicy>& policies, const std::vector<sim::TaskSpec>& tasks,
                                  const std::vector<std::uint64_t>& seeds, const sim::RenderSpec& spec = {},
                                  std::size_t threads = worker_threads()) {
    if (policies.empty()) throw ContractError("evaluate_success: no policies");
    EvalTable table;
    for (const auto& p : policies)
        for (const auto& task : tasks)
            for (auto seed : seeds) table.cells.push_back({p.model, std::string(task.name()), task.id(), p.train_seed, seed});
    const std::size_t per_policy = tasks.size() * seeds.size();
    parallel_for(table.cells.size(), threads, [&](std::size_t i) {
        auto& c = table.cells[i];
        const auto& task = tasks[(i % per_policy) / seeds.size()];
        auto agent = policies[i / per_policy].make(task);
        const auto r = rollout(task, c.eval_seed, *agent, std::nullopt, spec);
        c.success = r.success;
        c.steps = r.steps;
        c.queries = r.queries;
    });
    return table;
}

}  // namespace actjepa
