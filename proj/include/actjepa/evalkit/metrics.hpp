#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "actjepa/diffcore/tensor.hpp"

namespace actjepa {

inline void require_same_shape(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    }
}

/// sqrt of the mean squared error over every timestep and dimension.
inline double rmse(const Tensor<double>& pred, const Tensor<double>& truth) {
    require_same_shape(pred, truth, "rmse");
    if (pred.numel() == 0) return 0.0;
    double sum = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double e = pred[i] - truth[i];
        sum += e * e;
    }
    return std::sqrt(sum / static_cast<double>(pred.numel()));
}

/// Mean per-timestep Euclidean distance between two rows-as-timesteps
/// trajectories, without alignment.
inline double ate(const Tensor<double>& pred, const Tensor<double>& truth) {
    require_same_shape(pred, truth, "ate");
    if (pred.rows() == 0) return 0.0;
    double sum = 0;
    for (std::size_t t = 0; t < pred.rows(); ++t) {
        double d2 = 0;
        for (std::size_t j = 0; j < pred.cols(); ++j) {
            const double e = pred.at(t, j) - truth.at(t, j);
            d2 += e * e;
        }
        sum += std::sqrt(d2);
    }
    return sum / static_cast<double>(pred.rows());
}

struct MeanStd {
    double mean = 0;
    double std = 0;  // sample std; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    if (xs.empty()) return r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) return r;
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    return r;
}

}  // namespace actjepa
