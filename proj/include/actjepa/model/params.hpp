#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "actjepa/diffcore/adam.hpp"
#include "actjepa/util/rng.hpp"

namespace actjepa {

/// Every named tensor of a model, in creation order. Creation order is the
/// canonical order for optimizers and checkpoints.
template <class T>
class ParamStore {
public:
    void add(const Var<T>& v) {
        if (v->name.empty()) throw ContractError("ParamStore: unnamed parameter");
        if (index_.count(v->name)) throw ContractError("ParamStore: duplicate parameter " + v->name);
        index_[v->name] = items_.size();
        items_.push_back({v->name, v});
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Var<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("ParamStore: no parameter " + name);
        return items_[it->second].var;
    }
    const ParamList<T>& all() const { return items_; }

    ParamList<T> with_prefix(std::string_view prefix) const {
        ParamList<T> out;
        for (const auto& p : items_)
            if (std::string_view(p.name).substr(0, prefix.size()) == prefix) out.push_back(p);
        return out;
    }
    ParamList<T> trainable() const {
        ParamList<T> out;
        for (const auto& p : items_)
            if (p.var->requires_grad) out.push_back(p);
        return out;
    }
    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.var->value.numel();
        return n;
    }

private:
    ParamList<T> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Creates and registers parameters. Weights are scaled-uniform in
/// ±1/sqrt(fan_in); biases and norm offsets start at zero.
template <class T>
class ParamBuilder {
public:
    ParamBuilder(ParamStore<T>& store, Rng rng) : store_(store), rng_(rng) {}

    Var<T> uniform(const std::string& name, Shape shape, std::size_t fan_in) {
        Tensor<T> t(std::move(shape));
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(rng_.uniform(-a, a));
        return add(name, std::move(t));
    }
    Var<T> filled(const std::string& name, Shape shape, T value) { return add(name, Tensor<T>(std::move(shape), value)); }

private:
    Var<T> add(const std::string& name, Tensor<T> t) {
        auto v = make_param(std::move(t), name);
        store_.add(v);
        return v;
    }
    ParamStore<T>& store_;
    Rng rng_;
};

/// FNV-1a over names, shapes and raw bytes; used to prove that frozen
/// parameters were not touched.
template <class T>
std::string hash_params(const ParamList<T>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params) {
        feed(p.name.data(), p.name.size());
        for (auto d : p.var->value.shape()) feed(&d, sizeof d);
        feed(p.var->value.data().data(), p.var->value.numel() * sizeof(T));
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace actjepa
