#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "actjepa/diffcore/graph.hpp"

namespace actjepa {

/// Named trainable parameter.
template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Moment accumulators for one parameter list, in list order.
template <class T>
struct OptimState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::string> names;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    static OptimState create(const ParamList<T>& params, AdamConfig cfg = {}) {
        OptimState s;
        s.config = cfg;
        for (const auto& p : params) {
            s.names.push_back(p.name);
            s.m.emplace_back(p.var->value.shape());
            s.v.emplace_back(p.var->value.shape());
        }
        return s;
    }

    bool tracks(const Var<T>& var, const ParamList<T>& params) const {
        for (const auto& p : params) {
            if (p.var == var) return true;
        }
        return false;
    }
};

/// Bias-corrected adaptive-moment update with decoupled weight decay.
/// `grads[i]` belongs to `params[i]`.
template <class T>
void adam_step(const ParamList<T>& params, const std::vector<Tensor<T>>& grads, OptimState<T>& state) {
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw DimensionError("adam_step: parameter, gradient and state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& shape = params[i].var->value.shape();
        if (grads[i].shape() != shape || state.m[i].shape() != shape || state.names[i] != params[i].name) {
            throw DimensionError("adam_step: gradient/state mismatch for " + params[i].name);
        }
    }
    const auto& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
    const T decay = static_cast<T>(1.0 - c.lr * c.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].var->value;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            if (c.weight_decay != 0.0) p[j] *= decay;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

template <class T>
void adam_step(const ParamList<T>& params, const Gradients<T>& grads, OptimState<T>& state) {
    std::vector<Tensor<T>> g;
    g.reserve(params.size());
    for (const auto& p : params) g.push_back(grads.of(p.var));
    adam_step(params, g, state);
}

}  // namespace actjepa
