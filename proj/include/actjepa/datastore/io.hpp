#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "actjepa/datastore/dataset.hpp"
#include "actjepa/simenv/simenv.hpp"
#include "actjepa/util/binio.hpp"
#include "json.hpp"

// On-disk dataset layout (format version "1"); see docs/FORMATS.md.
//
//   <dir>/manifest.json
//   <dir>/episodes/ep_<task>_<seed>.bin

namespace actjepa {

namespace fs = std::filesystem;

inline constexpr char kEpisodeMagic[4] = {'A', 'J', 'E', 'P'};
inline constexpr std::uint32_t kEpisodeFormatVersion = 1;

inline std::string episode_file_name(int task_id, std::uint64_t seed) {
    return "ep_" + std::string(sim::task_from_id(task_id).name()) + "_" + std::to_string(seed) + ".bin";
}

inline std::string encode_episode(const Trajectory& ep, int height, int width) {
    const std::size_t pixels = static_cast<std::size_t>(height * width);
    ByteWriter w;
    w.put_raw(std::string_view(kEpisodeMagic, 4));
    w.put<std::uint32_t>(kEpisodeFormatVersion);
    w.put<std::int32_t>(ep.task_id);
    w.put<std::uint64_t>(ep.seed);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ep.length()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(height));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
    w.put<std::uint8_t>(ep.success ? 1 : 0);
    w.put<std::uint8_t>(0);
    w.put<std::uint8_t>(0);
    w.put<std::uint8_t>(0);
    for (std::size_t t = 0; t < ep.length(); ++t) {
        const auto& o = ep.observations[t];
        if (o.image.size() != pixels || o.task_id != ep.task_id) {
            throw DatasetError(DatasetError::Kind::dimension, "episode observation does not match dataset dims");
        }
        w.put_array(o.proprio.data(), kProprioDim);
        w.put_array(ep.actions[t].data(), kActionDim);
        w.put_array(o.image.data(), pixels);
    }
    return w.bytes();
}

inline Trajectory decode_episode(std::string_view bytes, int height, int width) {
    ByteReader r(bytes);
    try {
        if (r.get_raw(4) != std::string_view(kEpisodeMagic, 4)) {
            throw DatasetError(DatasetError::Kind::integrity, "bad episode magic");
        }
        const auto version = r.get<std::uint32_t>();
        if (version != kEpisodeFormatVersion) {
            throw DatasetError(DatasetError::Kind::version, "unsupported episode version " + std::to_string(version));
        }
        Trajectory ep;
        ep.task_id = r.get<std::int32_t>();
        ep.seed = r.get<std::uint64_t>();
        const auto len = r.get<std::uint32_t>();
        const auto h = r.get<std::uint32_t>();
        const auto wd = r.get<std::uint32_t>();
        if (static_cast<int>(h) != height || static_cast<int>(wd) != width) {
            throw DatasetError(DatasetError::Kind::dimension, "episode image dims differ from manifest");
        }
        ep.success = r.get<std::uint8_t>() != 0;
        r.get_raw(3);
        const std::size_t pixels = static_cast<std::size_t>(h) * wd;
        ep.observations.resize(len);
        ep.actions.resize(len);
        for (std::size_t t = 0; t < len; ++t) {
            auto& o = ep.observations[t];
            o.task_id = ep.task_id;
            r.get_array(o.proprio.data(), kProprioDim);
            r.get_array(ep.actions[t].data(), kActionDim);
            o.image.resize(pixels);
            r.get_array(o.image.data(), pixels);
        }
        if (r.remaining() != 0) throw DatasetError(DatasetError::Kind::integrity, "trailing bytes in episode record");
        return ep;
    } catch (const TruncatedError&) {
        throw DatasetError(DatasetError::Kind::truncated, "truncated episode record");
    }
}

inline nlohmann::json norm_to_json(const NormStats& n) {
    return {{"proprio_mean", n.proprio_mean},
            {"proprio_std", n.proprio_std},
            {"action_mean", n.action_mean},
            {"action_std", n.action_std}};
}

inline NormStats norm_from_json(const nlohmann::json& j) {
    NormStats n;
    n.proprio_mean = j.at("proprio_mean").get<Proprio>();
    n.proprio_std = j.at("proprio_std").get<Proprio>();
    n.action_mean = j.at("action_mean").get<ActionVector>();
    n.action_std = j.at("action_std").get<ActionVector>();
    return n;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m, const std::vector<Trajectory>& episodes) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& ep : episodes) {
        eps.push_back({{"task", sim::task_from_id(ep.task_id).name()},
                       {"seed", ep.seed},
                       {"length", ep.length()},
                       {"file", "episodes/" + episode_file_name(ep.task_id, ep.seed)}});
    }
    return {{"format_version", m.version},
            {"tasks", m.tasks},
            {"episodes_per_task", m.episodes_per_task},
            {"dims", {{"proprio", m.proprio_dim}, {"action", m.action_dim}, {"image_height", m.image_height},
                      {"image_width", m.image_width}}},
            {"chunk_size", m.chunk_size},
            {"norm_stats", norm_to_json(m.norm)},
            {"collection_seed", m.collection_seed},
            {"episodes", eps}};
}

/// Fills the manifest's derived fields (task list, counts) from the episodes.
inline DatasetManifest describe(const std::vector<Trajectory>& episodes, DatasetManifest m) {
    m.tasks.clear();
    m.episodes_per_task.clear();
    for (const auto& ep : episodes) {
        const std::string name(sim::task_from_id(ep.task_id).name());
        if (m.episodes_per_task[name]++ == 0) m.tasks.push_back(name);
    }
    return m;
}

inline void save_dataset(const Dataset& data, const fs::path& dir) {
    fs::create_directories(dir / "episodes");
    for (const auto& ep : data.episodes) {
        if (ep.observations.size() != ep.actions.size()) {
            throw DatasetError(DatasetError::Kind::dimension, "observation/action length mismatch");
        }
        write_file(dir / "episodes" / episode_file_name(ep.task_id, ep.seed),
                   encode_episode(ep, data.manifest.image_height, data.manifest.image_width));
    }
    write_file(dir / "manifest.json", manifest_to_json(data.manifest, data.episodes).dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(DatasetError::Kind::integrity, std::string("malformed manifest: ") + e.what());
    } catch (const std::runtime_error& e) {
        throw DatasetError(DatasetError::Kind::io, e.what());
    }
    Dataset d;
    auto& m = d.manifest;
    try {
        m.version = j.at("format_version").get<std::string>();
        if (m.version != kDatasetFormatVersion) {
            throw DatasetError(DatasetError::Kind::version, "unsupported dataset format version \"" + m.version + "\"");
        }
        m.tasks = j.at("tasks").get<std::vector<std::string>>();
        m.episodes_per_task = j.at("episodes_per_task").get<std::map<std::string, std::size_t>>();
        const auto& dims = j.at("dims");
        m.proprio_dim = dims.at("proprio").get<std::size_t>();
        m.action_dim = dims.at("action").get<std::size_t>();
        m.image_height = dims.at("image_height").get<int>();
        m.image_width = dims.at("image_width").get<int>();
        m.chunk_size = j.at("chunk_size").get<std::size_t>();
        m.norm = norm_from_json(j.at("norm_stats"));
        m.collection_seed = j.at("collection_seed").get<std::uint64_t>();
        if (m.proprio_dim != kProprioDim || m.action_dim != kActionDim) {
            throw DatasetError(DatasetError::Kind::dimension, "dataset dims differ from proprio=4, action=3");
        }
        std::size_t declared = 0;
        for (const auto& [task, count] : m.episodes_per_task) declared += count;
        const auto& eps = j.at("episodes");
        std::size_t on_disk = 0;
        if (fs::is_directory(dir / "episodes")) {
            for (const auto& entry : fs::directory_iterator(dir / "episodes")) {
                if (entry.is_regular_file() && entry.path().extension() == ".bin") ++on_disk;
            }
        }
        if (eps.size() != declared || on_disk != declared) {
            throw DatasetError(DatasetError::Kind::integrity,
                               "manifest declares " + std::to_string(declared) + " episodes, listed " +
                                   std::to_string(eps.size()) + ", found " + std::to_string(on_disk) + " files");
        }
        for (const auto& e : eps) {
            const fs::path file = dir / e.at("file").get<std::string>();
            if (!fs::exists(file)) throw DatasetError(DatasetError::Kind::integrity, "missing episode file " + file.string());
            Trajectory ep = decode_episode(read_file(file), m.image_height, m.image_width);
            const auto task = sim::task_from_name(e.at("task").get<std::string>());
            if (!task || task->id() != ep.task_id || ep.seed != e.at("seed").get<std::uint64_t>() ||
                ep.length() != e.at("length").get<std::size_t>()) {
                throw DatasetError(DatasetError::Kind::integrity, "episode header disagrees with manifest: " + file.string());
            }
            d.episodes.push_back(std::move(ep));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(DatasetError::Kind::integrity, std::string("malformed manifest: ") + e.what());
    }
    return d;
}

/// Collects expert demonstrations for the given tasks and seeds
/// [seed, seed + episodes) and computes normalization statistics over them.
inline Dataset collect_dataset(const std::vector<sim::TaskSpec>& tasks, std::size_t episodes, std::uint64_t seed,
                               std::size_t chunk_size = 8, const sim::RenderSpec& spec = {}) {
    Dataset d;
    for (const auto& task : tasks) {
        for (std::size_t i = 0; i < episodes; ++i) {
            d.episodes.push_back(sim::collect_expert_episode(task, seed + i, spec, static_cast<int>(chunk_size)));
        }
    }
    DatasetManifest m;
    m.image_height = spec.height;
    m.image_width = spec.width;
    m.chunk_size = chunk_size;
    m.collection_seed = seed;
    m.norm = compute_norm_stats(d.episodes);
    d.manifest = describe(d.episodes, m);
    return d;
}

}  // namespace actjepa
