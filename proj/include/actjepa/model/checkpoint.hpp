#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "actjepa/diffcore/adam.hpp"
#include "actjepa/model/config.hpp"
#include "actjepa/model/params.hpp"
#include "actjepa/util/binio.hpp"
#include "json.hpp"

// Checkpoint layout (little-endian), version 1:
//   "AJCK" | u32 version | u32 header bytes | header JSON
//   | u32 block count | blocks...
// block: u32 name bytes | name | u32 ndim | u64 dims[ndim] | f32 data
// Header: {"kind", "config", "train_state", "optimizer": {step, lr, ...} | null}.
// Optimizer moments are blocks named "optim.m/<param>" and "optim.v/<param>".

namespace actjepa {

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, version, corrupt, model_kind, mismatch };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
    Kind kind;
};

inline constexpr char kCheckpointMagic[4] = {'A', 'J', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    ModelKind kind = ModelKind::actjepa;
    ModelConfig config;
    nlohmann::json train_state = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor<float>>> blocks;
    std::optional<AdamConfig> adam;
    std::uint64_t adam_step = 0;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : blocks)
            if (n == name) return &t;
        return nullptr;
    }
};

inline std::string encode_checkpoint(const CheckpointData& d) {
    nlohmann::json h;
    h["kind"] = kind_name(d.kind);
    h["config"] = d.config;
    h["train_state"] = d.train_state;
    if (d.adam) {
        h["optimizer"] = {{"step", d.adam_step}, {"lr", d.adam->lr}, {"beta1", d.adam->beta1}, {"beta2", d.adam->beta2},
                          {"eps", d.adam->eps}, {"weight_decay", d.adam->weight_decay}};
    } else {
        h["optimizer"] = nullptr;
    }
    ByteWriter w;
    w.put_raw(std::string_view(kCheckpointMagic, 4));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put_string(h.dump());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.blocks.size()));
    for (const auto& [name, t] : d.blocks) {
        w.put_string(name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape().size()));
        for (auto dim : t.shape()) w.put<std::uint64_t>(dim);
        w.put_array(t.data().data(), t.numel());
    }
    return w.bytes();
}

inline CheckpointData decode_checkpoint(std::string_view bytes) {
    ByteReader r(bytes);
    CheckpointData d;
    try {
        if (r.get_raw(4) != std::string_view(kCheckpointMagic, 4)) {
            throw CheckpointError(CheckpointError::Kind::corrupt, "not a checkpoint file");
        }
        const auto version = r.get<std::uint32_t>();
        if (version != kCheckpointVersion) {
            throw CheckpointError(CheckpointError::Kind::version, "unsupported checkpoint version " + std::to_string(version));
        }
        const auto h = nlohmann::json::parse(r.get_string());
        const auto kind = kind_from_name(h.at("kind").get<std::string>());
        if (!kind) throw CheckpointError(CheckpointError::Kind::corrupt, "unknown model kind in checkpoint");
        d.kind = *kind;
        d.config = h.at("config").get<ModelConfig>();
        d.train_state = h.at("train_state");
        if (!h.at("optimizer").is_null()) {
            const auto& o = h.at("optimizer");
            d.adam = AdamConfig{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                                o.at("eps").get<double>(), o.at("weight_decay").get<double>()};
            d.adam_step = o.at("step").get<std::uint64_t>();
        }
        const auto count = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < count; ++i) {
            auto name = r.get_string();
            const auto ndim = r.get<std::uint32_t>();
            if (ndim == 0 || ndim > 8) throw CheckpointError(CheckpointError::Kind::corrupt, "bad rank for block " + name);
            Shape shape;
            for (std::uint32_t k = 0; k < ndim; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
            if (numel_of(shape) * sizeof(float) > r.remaining()) throw TruncatedError("block data");
            Tensor<float> t(shape);
            r.get_array(t.data().data(), t.numel());
            d.blocks.emplace_back(std::move(name), std::move(t));
        }
        if (r.remaining() != 0) throw CheckpointError(CheckpointError::Kind::corrupt, "trailing bytes in checkpoint");
    } catch (const TruncatedError&) {
        throw CheckpointError(CheckpointError::Kind::corrupt, "truncated checkpoint");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt, std::string("bad checkpoint header: ") + e.what());
    } catch (const DimensionError& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt, e.what());
    }
    return d;
}

/// Snapshot of a model's parameters and (optionally) its optimizer.
template <class T, class M>
CheckpointData snapshot(const M& model, const OptimState<T>* optim = nullptr,
                        nlohmann::json train_state = nlohmann::json::object()) {
    CheckpointData d;
    d.kind = model.kind;
    d.config = model.config;
    d.train_state = std::move(train_state);
    for (const auto& p : model.store.all()) d.blocks.emplace_back(p.name, p.var->value.template cast<float>());
    if (optim) {
        d.adam = optim->config;
        d.adam_step = optim->step;
        for (std::size_t i = 0; i < optim->names.size(); ++i) {
            d.blocks.emplace_back("optim.m/" + optim->names[i], optim->m[i].template cast<float>());
            d.blocks.emplace_back("optim.v/" + optim->names[i], optim->v[i].template cast<float>());
        }
    }
    return d;
}

/// Copies parameter blocks into an already built model of the same kind
/// and configuration.
template <class T, class M>
void restore_params(M& model, const CheckpointData& d) {
    if (d.kind != model.kind) {
        throw CheckpointError(CheckpointError::Kind::model_kind, "checkpoint holds a '" + std::string(kind_name(d.kind)) +
                                                                     "' model, expected '" +
                                                                     std::string(kind_name(model.kind)) + "'");
    }
    for (const auto& p : model.store.all()) {
        const auto* t = d.find(p.name);
        if (!t) throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint lacks parameter " + p.name);
        if (t->shape() != p.var->value.shape()) {
            throw CheckpointError(CheckpointError::Kind::mismatch, "shape mismatch for " + p.name);
        }
        p.var->value = t->template cast<T>();
    }
}

template <class T>
OptimState<T> restore_optimizer(const ParamList<T>& params, const CheckpointData& d) {
    if (!d.adam) throw CheckpointError(CheckpointError::Kind::mismatch, "checkpoint has no optimizer state");
    auto s = OptimState<T>::create(params, *d.adam);
    s.step = d.adam_step;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto* m = d.find("optim.m/" + params[i].name);
        const auto* v = d.find("optim.v/" + params[i].name);
        if (!m || !v || m->shape() != s.m[i].shape() || v->shape() != s.v[i].shape()) {
            throw CheckpointError(CheckpointError::Kind::mismatch, "optimizer state missing for " + params[i].name);
        }
        s.m[i] = m->template cast<T>();
        s.v[i] = v->template cast<T>();
    }
    return s;
}

inline void save_checkpoint(const CheckpointData& d, const std::filesystem::path& path) {
    try {
        write_file(path, encode_checkpoint(d));
    } catch (const std::runtime_error& e) {
        throw CheckpointError(CheckpointError::Kind::io, e.what());
    }
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(CheckpointError::Kind::io, e.what());
    }
    return decode_checkpoint(bytes);
}

}  // namespace actjepa
