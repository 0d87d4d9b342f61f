#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "actjepa/datastore/trajectory.hpp"
#include "actjepa/util/rng.hpp"

namespace actjepa {

class DatasetError : public std::runtime_error {
public:
    enum class Kind { version, dimension, integrity, truncated, io, empty, sampling };
    DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
    Kind kind;
};

inline constexpr double kStdFloor = 1e-6;

/// Per-dimension mean and (population) std of proprio and actions.
struct NormStats {
    Proprio proprio_mean{};
    Proprio proprio_std{};
    ActionVector action_mean{};
    ActionVector action_std{};

    template <std::size_t N>
    static std::array<double, N> normalize(const std::array<double, N>& x, const std::array<double, N>& mean,
                                           const std::array<double, N>& std) {
        std::array<double, N> out{};
        for (std::size_t i = 0; i < N; ++i) out[i] = (x[i] - mean[i]) / std[i];
        return out;
    }
    template <std::size_t N>
    static std::array<double, N> denormalize(const std::array<double, N>& z, const std::array<double, N>& mean,
                                             const std::array<double, N>& std) {
        std::array<double, N> out{};
        for (std::size_t i = 0; i < N; ++i) out[i] = z[i] * std[i] + mean[i];
        return out;
    }

    Proprio normalize_proprio(const Proprio& p) const { return normalize(p, proprio_mean, proprio_std); }
    Proprio denormalize_proprio(const Proprio& p) const { return denormalize(p, proprio_mean, proprio_std); }
    ActionVector normalize_action(const ActionVector& a) const { return normalize(a, action_mean, action_std); }
    ActionVector denormalize_action(const ActionVector& a) const { return denormalize(a, action_mean, action_std); }

    friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Statistics over every timestep of the given episodes.
inline NormStats compute_norm_stats(const std::vector<Trajectory>& episodes) {
    std::size_t count = 0;
    Proprio ps{}, pss{};
    ActionVector as{}, ass{};
    for (const auto& ep : episodes) {
        for (std::size_t t = 0; t < ep.length(); ++t) {
            for (std::size_t i = 0; i < kProprioDim; ++i) ps[i] += ep.observations[t].proprio[i];
            for (std::size_t i = 0; i < kActionDim; ++i) as[i] += ep.actions[t][i];
            ++count;
        }
    }
    if (count == 0) throw DatasetError(DatasetError::Kind::empty, "compute_norm_stats: empty dataset");
    NormStats st;
    const double n = static_cast<double>(count);
    for (std::size_t i = 0; i < kProprioDim; ++i) st.proprio_mean[i] = ps[i] / n;
    for (std::size_t i = 0; i < kActionDim; ++i) st.action_mean[i] = as[i] / n;
    // second pass for the centered sums
    for (const auto& ep : episodes) {
        for (std::size_t t = 0; t < ep.length(); ++t) {
            for (std::size_t i = 0; i < kProprioDim; ++i) {
                const double d = ep.observations[t].proprio[i] - st.proprio_mean[i];
                pss[i] += d * d;
            }
            for (std::size_t i = 0; i < kActionDim; ++i) {
                const double d = ep.actions[t][i] - st.action_mean[i];
                ass[i] += d * d;
            }
        }
    }
    for (std::size_t i = 0; i < kProprioDim; ++i) st.proprio_std[i] = std::max(kStdFloor, std::sqrt(pss[i] / n));
    for (std::size_t i = 0; i < kActionDim; ++i) st.action_std[i] = std::max(kStdFloor, std::sqrt(ass[i] / n));
    return st;
}

inline constexpr const char* kDatasetFormatVersion = "1";

struct DatasetManifest {
    std::string version = kDatasetFormatVersion;
    std::vector<std::string> tasks;
    std::map<std::string, std::size_t> episodes_per_task;
    std::size_t proprio_dim = kProprioDim;
    std::size_t action_dim = kActionDim;
    int image_height = 24;
    int image_width = 24;
    std::size_t chunk_size = 8;
    NormStats norm;
    std::uint64_t collection_seed = 0;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Trajectory> episodes;

    std::size_t image_pixels() const {
        return static_cast<std::size_t>(manifest.image_height) * static_cast<std::size_t>(manifest.image_width);
    }
};

/// (episode, t) start index of a chunk.
struct ChunkRef {
    std::size_t episode = 0;
    std::size_t t = 0;
    friend bool operator==(const ChunkRef&, const ChunkRef&) = default;
    friend auto operator<=>(const ChunkRef&, const ChunkRef&) = default;
};

/// Training unit: the observation at t, the n actions executed from it and
/// the n proprio states that follow (targets normalized).
struct ChunkSample {
    Observation context;
    std::vector<ActionVector> action_targets;  // a_t .. a_{t+n-1}
    std::vector<Proprio> obs_targets;          // o_{t+1} .. o_{t+n}, or o_t .. o_{t+n-1} when inclusive
    int task_id = 0;
    ChunkRef ref;
};

struct ChunkOptions {
    std::size_t n = 8;
    bool targets_include_current = false;
};

/// Number of valid starts in an episode: t in [0, L-1-n].
inline std::size_t chunk_starts(const Trajectory& ep, std::size_t n) {
    return ep.length() >= n + 1 ? ep.length() - n : 0;
}

inline void require_chunkable(const std::vector<Trajectory>& episodes, std::size_t n) {
    for (const auto& ep : episodes) {
        if (ep.length() < n + 1) {
            throw DatasetError(DatasetError::Kind::sampling, "episode (task " + std::to_string(ep.task_id) + ", seed " +
                                                                 std::to_string(ep.seed) + ") has length " +
                                                                 std::to_string(ep.length()) + " < n+1 = " +
                                                                 std::to_string(n + 1));
        }
    }
}

inline ChunkSample make_chunk(const std::vector<Trajectory>& episodes, const NormStats& norm, ChunkRef ref,
                              const ChunkOptions& opt) {
    const auto& ep = episodes.at(ref.episode);
    if (ref.t + opt.n > ep.length() - 1 || ep.length() < opt.n + 1) {
        throw DatasetError(DatasetError::Kind::sampling, "chunk start out of range");
    }
    ChunkSample c;
    c.context = ep.observations[ref.t];
    c.task_id = ep.task_id;
    c.ref = ref;
    const std::size_t obs_offset = opt.targets_include_current ? 0 : 1;
    for (std::size_t i = 0; i < opt.n; ++i) {
        c.action_targets.push_back(norm.normalize_action(ep.actions[ref.t + i]));
        c.obs_targets.push_back(norm.normalize_proprio(ep.observations[ref.t + i + obs_offset].proprio));
    }
    return c;
}

/// Uniform episode, then uniform start within it.
inline ChunkSample sample_chunk(const Dataset& data, Rng& rng, const ChunkOptions& opt) {
    if (data.episodes.empty()) throw DatasetError(DatasetError::Kind::empty, "sample_chunk: empty dataset");
    const auto e = static_cast<std::size_t>(rng.below(data.episodes.size()));
    const auto& ep = data.episodes[e];
    if (ep.length() < opt.n + 1) {
        throw DatasetError(DatasetError::Kind::sampling, "sample_chunk: episode shorter than n+1");
    }
    const auto t = static_cast<std::size_t>(rng.below(ep.length() - opt.n));
    return make_chunk(data.episodes, data.manifest.norm, {e, t}, opt);
}

/// All valid starts in (episode, t) order.
inline std::vector<ChunkRef> all_chunk_refs(const std::vector<Trajectory>& episodes, std::size_t n) {
    std::vector<ChunkRef> refs;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        for (std::size_t t = 0; t < chunk_starts(episodes[e], n); ++t) refs.push_back({e, t});
    }
    return refs;
}

/// One epoch of shuffled start indices cut into batches; every start is
/// visited exactly once and the order depends only on epoch_seed.
inline std::vector<std::vector<ChunkRef>> make_batches(const std::vector<Trajectory>& episodes, std::size_t n,
                                                       std::size_t batch_size, std::uint64_t epoch_seed) {
    if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    auto refs = all_chunk_refs(episodes, n);
    Rng rng(epoch_seed);
    shuffle(refs, rng);
    std::vector<std::vector<ChunkRef>> batches;
    for (std::size_t i = 0; i < refs.size(); i += batch_size) {
        batches.emplace_back(refs.begin() + static_cast<std::ptrdiff_t>(i),
                             refs.begin() + static_cast<std::ptrdiff_t>(std::min(refs.size(), i + batch_size)));
    }
    return batches;
}

/// Per-task split by collection seed: the last `holdout_fraction` of each
/// task's episodes (ordered by seed) form the held-out part.
struct Split {
    std::vector<Trajectory> train;
    std::vector<Trajectory> holdout;
};

inline Split split_by_seed(const std::vector<Trajectory>& episodes, double holdout_fraction = 0.2) {
    std::map<int, std::vector<const Trajectory*>> by_task;
    for (const auto& ep : episodes) by_task[ep.task_id].push_back(&ep);
    Split s;
    for (auto& [task, eps] : by_task) {
        std::stable_sort(eps.begin(), eps.end(), [](const Trajectory* a, const Trajectory* b) { return a->seed < b->seed; });
        const auto hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(eps.size())));
        const std::size_t cut = eps.size() - std::min(hold, eps.size());
        for (std::size_t i = 0; i < eps.size(); ++i) (i < cut ? s.train : s.holdout).push_back(*eps[i]);
    }
    return s;
}

}  // namespace actjepa
