#pragma once

// Named parameter collection. Iteration order is the lexicographic name
// order of std::map, so every pass over the store is deterministic.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unet22/common.hpp"
#include "unet22/tensor.hpp"

namespace unet22 {

using ParamSpec = std::vector<std::pair<std::string, std::vector<int>>>;

template <typename S>
class ParameterStoreT {
  public:
    using Map = std::map<std::string, TensorT<S>>;

    void insert(const std::string& name, TensorT<S> t) {
        if (name.empty() || name.size() > 0xffff)
            throw ContractError("parameter name length out of range: '" + name + "'");
        if (!params_.emplace(name, std::move(t)).second)
            throw ContractError("parameter '" + name + "' registered twice");
    }

    const TensorT<S>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    size_t size() const { return params_.size(); }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(name);
        return out;
    }

    typename Map::const_iterator begin() const { return params_.begin(); }
    typename Map::const_iterator end() const { return params_.end(); }

  private:
    Map params_;
};

using ParameterStoreF = ParameterStoreT<float>;
using ParameterStoreD = ParameterStoreT<double>;

// Initial value by parameter role, read off the name: biases and LN shifts
// start at zero, LN scales at one, the attention bias table at zero, all
// remaining weights from a truncated normal (stddev 0.02, clipped at two
// stddevs). Each parameter draws from a stream keyed by (seed, name), so
// values never depend on construction order.
template <typename S>
TensorT<S> init_parameter(const std::string& name, const std::vector<int>& shape, uint64_t seed) {
    if (name.ends_with(".gamma")) return TensorT<S>::full(shape, static_cast<S>(1));
    if (name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".bias_table"))
        return TensorT<S>::zeros(shape);
    TensorT<S> t = TensorT<S>::zeros(shape);
    Rng rng(seed_mix(seed, name));
    for (int64_t i = 0; i < t.numel(); ++i) t.vec()[i] = static_cast<S>(rng.trunc_normal(0.02));
    return t;
}

template <typename S>
ParameterStoreT<S> build_parameters(const ParamSpec& spec, uint64_t seed) {
    ParameterStoreT<S> store;
    for (const auto& [name, shape] : spec) store.insert(name, init_parameter<S>(name, shape, seed));
    return store;
}

}  // namespace unet22
