#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace actjepa {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ModelKind { actjepa, act, rbc };

inline std::string_view kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::actjepa: return "actjepa";
        case ModelKind::act: return "act";
        case ModelKind::rbc: return "rbc";
    }
    return "?";
}

inline std::optional<ModelKind> kind_from_name(std::string_view s) {
    if (s == "actjepa") return ModelKind::actjepa;
    if (s == "act") return ModelKind::act;
    if (s == "rbc") return ModelKind::rbc;
    return std::nullopt;
}

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t predictor_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t ffn_hidden = 128;
    std::size_t chunk = 8;  // n
    std::size_t patch = 6;
    std::size_t image_height = 24;
    std::size_t image_width = 24;
    std::size_t proprio_dim = 4;
    std::size_t action_dim = 3;
    std::size_t task_count = 3;
    std::size_t history = 8;  // RBC window, in steps
    double ema_momentum = 0.99;
    double ema_final = 1.0;      // end point of the optional schedule
    bool ema_schedule = false;

    std::size_t patches_per_row() const { return image_width / patch; }
    std::size_t n_patches() const { return (image_height / patch) * (image_width / patch); }
    std::size_t patch_dim() const { return patch * patch; }
    std::size_t n_ctx() const { return n_patches() + 2; }

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("model config: " + what);
        };
        need(d_model >= 4 && d_model % 4 == 0, "d_model must be a positive multiple of 4");
        need(n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
        need(patch >= 1 && image_height % patch == 0 && image_width % patch == 0,
             "image side must be divisible by patch size");
        need(chunk >= 1, "chunk size must be >= 1");
        need(ffn_hidden >= 1 && task_count >= 1 && history >= 1, "ffn_hidden, task_count and history must be >= 1");
        need(proprio_dim >= 1 && action_dim >= 1, "proprio and action dims must be >= 1");
        need(ema_momentum >= 0.0 && ema_momentum <= 1.0, "ema_momentum must lie in [0,1]");
        need(ema_final >= 0.0 && ema_final <= 1.0, "ema_final must lie in [0,1]");
    }

    /// EMA momentum at optimizer step `step` of `total_steps`.
    double momentum_at(std::size_t step, std::size_t total_steps) const {
        if (!ema_schedule || total_steps <= 1) return ema_momentum;
        const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
        return ema_momentum + (ema_final - ema_momentum) * std::min(1.0, frac);
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, d_model, n_heads, encoder_layers, predictor_layers, decoder_layers,
                                   ffn_hidden, chunk, patch, image_height, image_width, proprio_dim, action_dim,
                                   task_count, history, ema_momentum, ema_final, ema_schedule)

}  // namespace actjepa
