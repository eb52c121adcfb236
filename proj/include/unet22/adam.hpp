#pragma once

// Bias-corrected Adam over a named parameter store. First and second moments
// live in double keyed by parameter name, so results never depend on the
// parameter scalar type's accumulation order or on iteration order: every
// update reads only its own element.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unet22/common.hpp"
#include "unet22/param_store.hpp"
#include "unet22/tensor.hpp"

namespace unet22 {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("adam: lr must be positive, got " + std::to_string(lr));
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam: betas must lie in [0, 1)");
        if (!(eps > 0)) throw ConfigError("adam: eps must be positive");
    }
};

template <typename S>
class AdamT {
  public:
    explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const AdamConfig& config() const { return cfg_; }
    int64_t steps() const { return t_; }

    // Applies one update to every parameter in the store and clears the
    // consumed gradients. Every parameter must carry a gradient from a
    // preceding backward pass.
    void step(const ParameterStoreT<S>& store) {
        for (const auto& [name, param] : store)
            if (!param.has_grad())
                throw ContractError("adam: parameter '" + name + "' has no gradient");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const auto& [name, param] : store) {
            TensorT<S> p = param;  // shares storage; the handle copy is for mutable access
            std::vector<double>& m = moment(m_, name, p.numel());
            std::vector<double>& v = moment(v_, name, p.numel());
            const S* g = p.grad();
            S* w = p.data();
            for (int64_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const size_t u = static_cast<size_t>(i);
                m[u] = cfg_.beta1 * m[u] + (1.0 - cfg_.beta1) * gi;
                v[u] = cfg_.beta2 * v[u] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[u] / bc1;
                const double vhat = v[u] / bc2;
                w[i] = static_cast<S>(static_cast<double>(w[i]) -
                                      cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
            p.clear_grad();
        }
    }

  private:
    using Moments = std::map<std::string, std::vector<double>>;

    std::vector<double>& moment(Moments& ms, const std::string& name, int64_t numel) {
        auto [it, fresh] = ms.try_emplace(name, static_cast<size_t>(numel), 0.0);
        if (!fresh && it->second.size() != static_cast<size_t>(numel))
            throw ContractError("adam: parameter '" + name + "' changed size mid-run");
        return it->second;
    }

    AdamConfig cfg_;
    int64_t t_ = 0;
    Moments m_, v_;
};

using AdamF = AdamT<float>;
using AdamD = AdamT<double>;

}  // namespace unet22
