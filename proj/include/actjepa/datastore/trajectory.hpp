#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace actjepa {

inline constexpr std::size_t kProprioDim = 4;
inline constexpr std::size_t kActionDim = 3;

using Proprio = std::array<double, kProprioDim>;
using ActionVector = std::array<double, kActionDim>;  // (fx, fy, grip)

/// What a policy sees at one timestep.
struct Observation {
    Proprio proprio{};         // agent x, y, vx, vy
    std::vector<float> image;  // row-major H x W, values in [0, 1]
    int task_id = 0;

    friend bool operator==(const Observation&, const Observation&) = default;
};

/// One episode. observations[t] was seen before actions[t] was applied.
struct Trajectory {
    int task_id = 0;
    std::uint64_t seed = 0;
    std::vector<Observation> observations;
    std::vector<ActionVector> actions;
    bool success = false;

    std::size_t length() const { return actions.size(); }

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace actjepa
