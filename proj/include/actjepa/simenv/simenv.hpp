#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "actjepa/datastore/trajectory.hpp"
#include "actjepa/util/rng.hpp"

// A point agent on the unit square that can reach, push, or carry an object
// to a goal. All three tasks share one dynamics function; they differ only in
// the success predicate and the scripted expert.

namespace actjepa::sim {

using Vec2 = std::array<double, 2>;

enum class TaskKind : int { reach = 0, push = 1, pickplace = 2 };

inline constexpr int kTaskCount = 3;

struct TaskSpec {
    TaskKind kind = TaskKind::reach;
    double success_tolerance = 0.05;  // rho
    int hold_steps = 5;               // k consecutive in-tolerance steps
    int horizon = 64;                 // T

    int id() const { return static_cast<int>(kind); }
    std::string_view name() const {
        switch (kind) {
            case TaskKind::reach: return "reach";
            case TaskKind::push: return "push";
            case TaskKind::pickplace: return "pickplace";
        }
        return "?";
    }
};

inline TaskSpec task_from_id(int id) {
    if (id < 0 || id >= kTaskCount) throw std::invalid_argument("unknown task id " + std::to_string(id));
    return TaskSpec{static_cast<TaskKind>(id)};
}

inline std::optional<TaskSpec> task_from_name(std::string_view name) {
    for (int i = 0; i < kTaskCount; ++i) {
        if (task_from_id(i).name() == name) return task_from_id(i);
    }
    return std::nullopt;
}

/// Shared physical constants.
struct Dynamics {
    static constexpr double dt = 0.1;
    static constexpr double damping = 0.1;  // lambda
    static constexpr double v_max = 0.5;
    static constexpr double contact_radius = 0.08;
    static constexpr double spawn_lo = 0.1;
    static constexpr double spawn_hi = 0.9;
    static constexpr double min_separation = 0.2;
};

struct RenderSpec {
    int height = 24;
    int width = 24;
};

struct WorldState {
    Vec2 agent_pos{};
    Vec2 agent_vel{};
    Vec2 object_pos{};
    Vec2 goal_pos{};
    bool holding = false;
    int step_index = 0;

    friend bool operator==(const WorldState&, const WorldState&) = default;
};

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

inline double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline Vec2 clip01(Vec2 p) { return {clip(p[0], 0.0, 1.0), clip(p[1], 0.0, 1.0)}; }

inline ActionVector clip_action(const ActionVector& a) {
    return {clip(a[0], -1.0, 1.0), clip(a[1], -1.0, 1.0), clip(a[2], -1.0, 1.0)};
}

/// Position the task's success predicate measures against the goal.
inline const Vec2& tracked_position(const TaskSpec& task, const WorldState& s) {
    return task.kind == TaskKind::reach ? s.agent_pos : s.object_pos;
}

inline bool success_now(const TaskSpec& task, const WorldState& s) {
    return distance(tracked_position(task, s), s.goal_pos) < task.success_tolerance;
}

/// Deterministic raster: goal, object, agent as 2x2 blocks (agent on top).
inline std::vector<float> render(const WorldState& s, const RenderSpec& spec = {}) {
    std::vector<float> img(static_cast<std::size_t>(spec.height * spec.width), 0.0f);
    auto blit = [&](const Vec2& p, float intensity) {
        const int col = static_cast<int>(std::lround(clip(p[0], 0.0, 1.0) * (spec.width - 2)));
        const int row = static_cast<int>(std::lround(clip(p[1], 0.0, 1.0) * (spec.height - 2)));
        for (int r = row; r < row + 2; ++r)
            for (int c = col; c < col + 2; ++c) img[static_cast<std::size_t>(r * spec.width + c)] = intensity;
    };
    blit(s.goal_pos, 0.4f);
    blit(s.object_pos, 0.7f);
    blit(s.agent_pos, 1.0f);
    return img;
}

inline Observation observe(const TaskSpec& task, const WorldState& s, const RenderSpec& spec = {}) {
    Observation o;
    o.proprio = {s.agent_pos[0], s.agent_pos[1], s.agent_vel[0], s.agent_vel[1]};
    o.image = render(s, spec);
    o.task_id = task.id();
    return o;
}

/// Seeded initial layout with pairwise separation >= 0.2 between agent,
/// object and goal.
inline WorldState reset_state(const TaskSpec& task, std::uint64_t seed) {
    Rng rng = Rng::derive(0x5eedULL, static_cast<std::uint64_t>(task.id()), seed);
    auto draw = [&] {
        return Vec2{rng.uniform(Dynamics::spawn_lo, Dynamics::spawn_hi), rng.uniform(Dynamics::spawn_lo, Dynamics::spawn_hi)};
    };
    WorldState s;
    for (;;) {
        s.agent_pos = draw();
        s.object_pos = draw();
        s.goal_pos = draw();
        if (distance(s.agent_pos, s.object_pos) >= Dynamics::min_separation &&
            distance(s.agent_pos, s.goal_pos) >= Dynamics::min_separation &&
            distance(s.object_pos, s.goal_pos) >= Dynamics::min_separation) {
            break;
        }
    }
    return s;
}

struct StepResult {
    WorldState state;
    Observation observation;
    bool success_now = false;
};

/// The single dynamics function shared by every task.
inline WorldState advance(const WorldState& s, const ActionVector& action) {
    const ActionVector a = clip_action(action);
    WorldState n = s;
    for (int i = 0; i < 2; ++i) {
        const double v = (1.0 - Dynamics::damping) * s.agent_vel[i] + Dynamics::dt * a[i];
        n.agent_vel[i] = clip(v, -Dynamics::v_max, Dynamics::v_max);
        n.agent_pos[i] = clip(s.agent_pos[i] + Dynamics::dt * n.agent_vel[i], 0.0, 1.0);
    }
    if (s.holding) {
        n.object_pos = n.agent_pos;
    } else if (distance(s.agent_pos, s.object_pos) < Dynamics::contact_radius) {
        n.object_pos = clip01({s.object_pos[0] + (n.agent_pos[0] - s.agent_pos[0]),
                               s.object_pos[1] + (n.agent_pos[1] - s.agent_pos[1])});
    }
    if (a[2] > 0.0) {
        if (n.holding || distance(n.agent_pos, n.object_pos) < Dynamics::contact_radius) {
            n.holding = true;
            n.object_pos = n.agent_pos;
        }
    } else {
        n.holding = false;
    }
    n.step_index = s.step_index + 1;
    return n;
}

inline StepResult step(const TaskSpec& task, const WorldState& s, const ActionVector& action, const RenderSpec& spec = {}) {
    StepResult r;
    r.state = advance(s, action);
    r.observation = observe(task, r.state, spec);
    r.success_now = success_now(task, r.state);
    return r;
}

/// PD controller toward a task-specific waypoint.
inline ActionVector scripted_expert(const TaskSpec& task, const WorldState& s) {
    constexpr double kp = 5.0, kd = 2.0, standoff = 0.06;
    const double d_obj = distance(s.agent_pos, s.object_pos);
    const bool touching = s.holding || d_obj < Dynamics::contact_radius;
    Vec2 waypoint = s.goal_pos;
    double grip = -1.0;
    switch (task.kind) {
        case TaskKind::reach:
            break;
        case TaskKind::push:
            if (touching) {
                // object moves rigidly with the agent once in contact
                waypoint = {s.agent_pos[0] + s.goal_pos[0] - s.object_pos[0], s.agent_pos[1] + s.goal_pos[1] - s.object_pos[1]};
            } else {
                const double dx = s.goal_pos[0] - s.object_pos[0], dy = s.goal_pos[1] - s.object_pos[1];
                const double len = std::max(std::hypot(dx, dy), 1e-9);
                waypoint = clip01({s.object_pos[0] - standoff * dx / len, s.object_pos[1] - standoff * dy / len});
            }
            break;
        case TaskKind::pickplace: {
            const bool at_goal = distance(s.object_pos, s.goal_pos) < task.success_tolerance;
            if (touching) {
                waypoint = {s.agent_pos[0] + s.goal_pos[0] - s.object_pos[0], s.agent_pos[1] + s.goal_pos[1] - s.object_pos[1]};
            } else {
                waypoint = s.object_pos;
            }
            grip = (touching && !at_goal) ? 1.0 : -1.0;
            break;
        }
    }
    ActionVector a{};
    for (int i = 0; i < 2; ++i) a[i] = clip(kp * (waypoint[i] - s.agent_pos[i]) - kd * s.agent_vel[i], -1.0, 1.0);
    a[2] = grip;
    return a;
}

/// Policies see the observation; privileged controllers (the expert, replay
/// stubs) may also read the world state.
using Policy = std::function<ActionVector(const Observation&, const WorldState&)>;

inline Policy expert_policy(const TaskSpec& task) {
    return [task](const Observation&, const WorldState& s) { return scripted_expert(task, s); };
}

class CollectionError : public std::runtime_error {
public:
    CollectionError(const TaskSpec& task, std::uint64_t seed)
        : std::runtime_error("expert failed on task " + std::string(task.name()) + " seed " + std::to_string(seed)),
          task_id(task.id()),
          seed(seed) {}
    int task_id;
    std::uint64_t seed;
};

/// Tracks the k-consecutive-steps success rule.
class SuccessCounter {
public:
    explicit SuccessCounter(int hold) : hold_(hold) {}
    bool update(bool now) {
        run_ = now ? run_ + 1 : 0;
        return run_ >= hold_;
    }

private:
    int hold_;
    int run_ = 0;
};

/// Runs an episode for max_steps; success latches once the k-consecutive
/// rule fires. With `tail` set, the episode instead ends `tail` steps after
/// that event (capped at max_steps).
inline Trajectory collect_episode(const TaskSpec& task, std::uint64_t seed, const Policy& policy,
                                  std::optional<int> max_steps = std::nullopt, const RenderSpec& spec = {},
                                  bool require_success = false, std::optional<int> tail = std::nullopt) {
    int limit = max_steps.value_or(task.horizon);
    Trajectory traj;
    traj.task_id = task.id();
    traj.seed = seed;
    WorldState s = reset_state(task, seed);
    Observation obs = observe(task, s, spec);
    SuccessCounter counter(task.hold_steps);
    for (int t = 0; t < limit; ++t) {
        const ActionVector a = clip_action(policy(obs, s));
        traj.observations.push_back(obs);
        traj.actions.push_back(a);
        auto r = step(task, s, a, spec);
        s = r.state;
        obs = std::move(r.observation);
        if (!traj.success && counter.update(r.success_now)) {
            traj.success = true;
            if (tail) limit = std::min(limit, t + 1 + *tail);
        }
    }
    if (require_success && !traj.success) throw CollectionError(task, seed);
    return traj;
}

/// Expert demonstration ending `tail` steps after success, so every state
/// up to the success event is a valid start for a chunk of n = tail.
/// Throws CollectionError if the expert fails.
inline Trajectory collect_expert_episode(const TaskSpec& task, std::uint64_t seed, const RenderSpec& spec = {},
                                         int tail = 8) {
    return collect_episode(task, seed, expert_policy(task), std::nullopt, spec, true, tail);
}

}  // namespace actjepa::sim
