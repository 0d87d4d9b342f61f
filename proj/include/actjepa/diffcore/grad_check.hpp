#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "actjepa/diffcore/graph.hpp"

namespace actjepa {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // name or index of the worst parameter
};

/// Relative error ||a - b|| / (||a|| + ||b||). When both norms are below
/// `floor` (gradients that vanish identically, e.g. key biases under softmax
/// shift invariance) the absolute difference is returned instead, since
/// central differences then measure only rounding noise.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-7) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    if (denom < floor) return std::sqrt(diff);
    return std::sqrt(diff) / denom;
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step h, for every parameter in `params`. `fn` must
/// rebuild the computation from the parameters' current values.
inline GradCheckResult grad_check(const std::function<Var<double>(Graph<double>&)>& fn,
                                  const std::vector<Var<double>>& params, double h = 1e-5) {
    Graph<double> g;
    auto loss = fn(g);
    const Gradients<double> analytic = g.backward(loss);

    auto eval = [&] {
        Graph<double> ng(false);
        return fn(ng)->value.item();
    };

    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& val = params[pi]->value;
        const Tensor<double> a = analytic.of(params[pi]);
        std::vector<double> numeric(val.numel());
        for (std::size_t j = 0; j < val.numel(); ++j) {
            const double orig = val[j];
            val[j] = orig + h;
            const double fp = eval();
            val[j] = orig - h;
            const double fm = eval();
            val[j] = orig;
            numeric[j] = (fp - fm) / (2 * h);
        }
        const double err = relative_error(a.data(), numeric);
        if (res.worst.empty() || err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst = params[pi]->name.empty() ? "#" + std::to_string(pi) : params[pi]->name;
        }
    }
    return res;
}

}  // namespace actjepa
