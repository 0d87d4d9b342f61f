#pragma once

#include "actjepa/model/actjepa.hpp"

namespace actjepa {

enum class ActionLoss { l1, l2 };

/// ACT-JEPA without predictor, target encoder and observation loss.
template <class T>
Model<T> init_act_baseline(const ModelConfig& c, std::uint64_t seed) {
    return init_model<T>(c, seed, ModelKind::act);
}

template <class T>
Var<T> act_forward(Graph<T>& g, const Model<T>& m, const ContextBatch<T>& ctx) {
    return decode_actions(g, m, encode_context(g, m, ctx), ctx.size);
}

template <class T>
Var<T> act_loss(Graph<T>& g, const Var<T>& a_hat, const Var<T>& a, ActionLoss kind = ActionLoss::l1) {
    return kind == ActionLoss::l1 ? l1_loss(g, a_hat, a) : l2_loss(g, a_hat, a);
}

}  // namespace actjepa
