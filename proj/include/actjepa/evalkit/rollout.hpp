#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "actjepa/baselines/rbc.hpp"
#include "actjepa/model/actjepa.hpp"
#include "actjepa/simenv/simenv.hpp"

namespace actjepa {

/// Something that maps the current observation to one or more actions to
/// execute open-loop. One instance per episode; agents may keep state.
class Agent {
public:
    virtual ~Agent() = default;
    virtual std::vector<ActionVector> act(const Observation& obs, const sim::WorldState& state) = 0;
};

/// Creates a fresh agent for each episode; must be callable concurrently.
using AgentFactory = std::function<std::unique_ptr<Agent>()>;

struct RolloutResult {
    Trajectory trajectory;
    bool success = false;
    std::size_t steps = 0;
    std::size_t queries = 0;
};

/// Every time the action queue runs dry, observe and query the agent, then
/// execute the returned actions one per step for max_steps steps. Success
/// latches on the k-consecutive rule.
inline RolloutResult rollout(const sim::TaskSpec& task, std::uint64_t seed, Agent& agent,
                             std::optional<int> max_steps = std::nullopt, const sim::RenderSpec& spec = {}) {
    const int limit = max_steps.value_or(task.horizon);
    RolloutResult r;
    r.trajectory.task_id = task.id();
    r.trajectory.seed = seed;
    auto s = sim::reset_state(task, seed);
    auto obs = sim::observe(task, s, spec);
    sim::SuccessCounter counter(task.hold_steps);
    std::deque<ActionVector> queue;
    for (int t = 0; t < limit; ++t) {
        if (queue.empty()) {
            const auto chunk = agent.act(obs, s);
            if (chunk.empty()) throw ContractError("agent returned no actions");
            queue.assign(chunk.begin(), chunk.end());
            ++r.queries;
        }
        const auto a = sim::clip_action(queue.front());
        queue.pop_front();
        r.trajectory.observations.push_back(obs);
        r.trajectory.actions.push_back(a);
        auto st = sim::step(task, s, a, spec);
        s = st.state;
        obs = std::move(st.observation);
        ++r.steps;
        if (counter.update(st.success_now)) r.success = true;
    }
    r.trajectory.success = r.success;
    return r;
}

/// Chunked ACT-JEPA / ACT policy: decode n normalized actions, denormalize.
template <class T>
class ChunkAgent : public Agent {
public:
    ChunkAgent(const Model<T>& m, NormStats norm) : model_(m), norm_(std::move(norm)) {}

    std::vector<ActionVector> act(const Observation& obs, const sim::WorldState&) override {
        Graph<T> g(false);
        const auto ctx = make_context_batch<T>({&obs}, model_.config, norm_);
        const auto a = decode_actions(g, model_, encode_context(g, model_, ctx), 1)->value;
        std::vector<ActionVector> out(model_.config.chunk);
        for (std::size_t k = 0; k < out.size(); ++k) {
            ActionVector z{};
            for (std::size_t j = 0; j < kActionDim; ++j) z[j] = static_cast<double>(a.at(k, j));
            out[k] = norm_.denormalize_action(z);
        }
        return out;
    }

private:
    const Model<T>& model_;
    NormStats norm_;
};

/// One query per environment step over a rolling (obs, action) history.
template <class T>
class RbcAgent : public Agent {
public:
    RbcAgent(const RbcModel<T>& m, NormStats norm) : model_(m), norm_(std::move(norm)), buffer_(m.config.history) {}

    std::vector<ActionVector> act(const Observation& obs, const sim::WorldState&) override {
        return {buffer_.step(model_, norm_, obs)};
    }

private:
    const RbcModel<T>& model_;
    NormStats norm_;
    RbcBuffer buffer_;
};

/// Privileged scripted expert acting on the true state.
class ExpertAgent : public Agent {
public:
    explicit ExpertAgent(sim::TaskSpec task) : task_(task) {}
    std::vector<ActionVector> act(const Observation&, const sim::WorldState& s) override {
        return {sim::scripted_expert(task_, s)};
    }

private:
    sim::TaskSpec task_;
};

class NullAgent : public Agent {
public:
    std::vector<ActionVector> act(const Observation&, const sim::WorldState&) override { return {ActionVector{}}; }
};

/// Replays recorded actions in chunks of n, ignoring observations.
class ReplayAgent : public Agent {
public:
    ReplayAgent(std::vector<ActionVector> actions, std::size_t n) : actions_(std::move(actions)), n_(n) {}
    std::vector<ActionVector> act(const Observation&, const sim::WorldState&) override {
        std::vector<ActionVector> out;
        for (std::size_t k = 0; k < n_ && pos_ < actions_.size(); ++k) out.push_back(actions_[pos_++]);
        if (out.empty()) out.push_back(ActionVector{});
        return out;
    }

private:
    std::vector<ActionVector> actions_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

template <class T>
AgentFactory chunk_agent_factory(const Model<T>& m, const NormStats& norm) {
    return [&m, norm] { return std::make_unique<ChunkAgent<T>>(m, norm); };
}

template <class T>
AgentFactory rbc_agent_factory(const RbcModel<T>& m, const NormStats& norm) {
    return [&m, norm] { return std::make_unique<RbcAgent<T>>(m, norm); };
}

/// Success fraction of one agent over tasks × seeds, evaluated serially.
inline double success_rate(const AgentFactory& make, const std::vector<sim::TaskSpec>& tasks,
                           const std::vector<std::uint64_t>& seeds, const sim::RenderSpec& spec = {}) {
    std::size_t ok = 0, total = 0;
    for (const auto& task : tasks) {
        for (auto seed : seeds) {
            auto agent = make();
            ok += rollout(task, seed, *agent, std::nullopt, spec).success;
            ++total;
        }
    }
    return total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0;
}

}  // namespace actjepa
