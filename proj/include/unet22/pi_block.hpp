#pragma once

// The parallel non-isomorphic block. A serial depth-wise-conv + MLP sub-block
// feeds two parallel branches, window self-attention and a second depth-wise
// conv, whose sum passes through a final FC. Two residual connections: one
// around the serial sub-block, one from its output around the parallel pair.

#include <string>
#include <utility>
#include <vector>

#include "unet22/ops.hpp"
#include "unet22/window_attention.hpp"

namespace unet22 {

// Ablation variants keep the serial sub-block and FC merge; they drop one of
// the parallel branches (equivalent to freezing that branch at zero).
enum class PIVariant { full, sa_only, dw_only };

inline const char* pi_variant_name(PIVariant v) {
    switch (v) {
        case PIVariant::full: return "full";
        case PIVariant::sa_only: return "sa_only";
        case PIVariant::dw_only: return "dw_only";
    }
    throw ContractError("pi_variant_name: unknown variant");
}

inline PIVariant pi_variant_from_name(const std::string& s) {
    if (s == "full") return PIVariant::full;
    if (s == "sa_only") return PIVariant::sa_only;
    if (s == "dw_only") return PIVariant::dw_only;
    throw ConfigError("unknown ablation variant '" + s + "' (expected full, sa_only or dw_only)");
}

struct PIBlockConfig {
    int channels = 0;
    int window = 0;
    int heads = 0;  // 0 picks default_heads(channels)
    bool parallel_prenorm = true;
    bool relative_bias = true;
    PIVariant variant = PIVariant::full;

    static constexpr int kDwKernel = 7;
    static constexpr int kDwPad = 3;  // (kDwKernel - 1) / 2, shape-preserving
    static constexpr int kMlpRatio = 4;
    static constexpr double kLnEps = 1e-5;

    int resolved_heads() const { return heads > 0 ? heads : default_heads(channels); }
    bool has_sa() const { return variant != PIVariant::dw_only; }
    bool has_dw() const { return variant != PIVariant::sa_only; }

    AttentionConfig attention() const {
        AttentionConfig a;
        a.channels = channels;
        a.window = window;
        a.heads = resolved_heads();
        a.use_relative_bias = relative_bias;
        return a;
    }

    void validate() const {
        if (channels < 1) throw ConfigError("pi block: channels must be >= 1");
        if (window < 1) throw ConfigError("pi block: window must be >= 1");
        if (has_sa()) attention().validate();
    }
};

template <typename S>
struct PIBlockParamsT {
    // serial sub-block
    TensorT<S> dw1_weight, dw1_bias;          // [C,7,7], [C]
    TensorT<S> mlp_ln_gamma, mlp_ln_beta;     // [C]
    TensorT<S> mlp_fc1_weight, mlp_fc1_bias;  // [4C,C], [4C]
    TensorT<S> mlp_fc2_weight, mlp_fc2_bias;  // [C,4C], [C]
    // shared norm ahead of the parallel pair (only when parallel_prenorm)
    TensorT<S> prenorm_gamma, prenorm_beta;  // [C]
    // parallel branches; dw2 is a distinct kernel, never aliased to dw1
    AttentionParamsT<S> attn;
    TensorT<S> dw2_weight, dw2_bias;  // [C,7,7], [C]
    // merge
    TensorT<S> fc_out_weight, fc_out_bias;  // [C,C], [C]
};

using PIBlockParamsF = PIBlockParamsT<float>;
using PIBlockParamsD = PIBlockParamsT<double>;

// Relative parameter names and shapes for one block under a given config.
// Single source of truth for construction, checkpoints and binding.
inline std::vector<std::pair<std::string, std::vector<int>>> pi_param_spec(const PIBlockConfig& cfg) {
    cfg.validate();
    const int C = cfg.channels;
    const int K = PIBlockConfig::kDwKernel;
    const int Hdim = C * PIBlockConfig::kMlpRatio;
    std::vector<std::pair<std::string, std::vector<int>>> spec;
    spec.emplace_back("dw1.weight", std::vector<int>{C, K, K});
    spec.emplace_back("dw1.bias", std::vector<int>{C});
    spec.emplace_back("mlp.ln.gamma", std::vector<int>{C});
    spec.emplace_back("mlp.ln.beta", std::vector<int>{C});
    spec.emplace_back("mlp.fc1.weight", std::vector<int>{Hdim, C});
    spec.emplace_back("mlp.fc1.bias", std::vector<int>{Hdim});
    spec.emplace_back("mlp.fc2.weight", std::vector<int>{C, Hdim});
    spec.emplace_back("mlp.fc2.bias", std::vector<int>{C});
    if (cfg.parallel_prenorm) {
        spec.emplace_back("prenorm.gamma", std::vector<int>{C});
        spec.emplace_back("prenorm.beta", std::vector<int>{C});
    }
    if (cfg.has_sa()) {
        spec.emplace_back("attn.qkv.weight", std::vector<int>{3 * C, C});
        spec.emplace_back("attn.qkv.bias", std::vector<int>{3 * C});
        spec.emplace_back("attn.proj.weight", std::vector<int>{C, C});
        spec.emplace_back("attn.proj.bias", std::vector<int>{C});
        if (cfg.relative_bias)
            spec.emplace_back("attn.bias_table",
                              std::vector<int>{cfg.attention().bias_offsets(), cfg.resolved_heads()});
    }
    if (cfg.has_dw()) {
        spec.emplace_back("dw2.weight", std::vector<int>{C, K, K});
        spec.emplace_back("dw2.bias", std::vector<int>{C});
    }
    spec.emplace_back("fc_out.weight", std::vector<int>{C, C});
    spec.emplace_back("fc_out.bias", std::vector<int>{C});
    return spec;
}

// Assembles the params struct by asking `get` for each relative name from
// pi_param_spec. Callers prepend their own prefix inside the lookup.
template <typename S, typename Lookup>
PIBlockParamsT<S> bind_pi_params(const PIBlockConfig& cfg, Lookup&& get) {
    PIBlockParamsT<S> p;
    p.dw1_weight = get("dw1.weight");
    p.dw1_bias = get("dw1.bias");
    p.mlp_ln_gamma = get("mlp.ln.gamma");
    p.mlp_ln_beta = get("mlp.ln.beta");
    p.mlp_fc1_weight = get("mlp.fc1.weight");
    p.mlp_fc1_bias = get("mlp.fc1.bias");
    p.mlp_fc2_weight = get("mlp.fc2.weight");
    p.mlp_fc2_bias = get("mlp.fc2.bias");
    if (cfg.parallel_prenorm) {
        p.prenorm_gamma = get("prenorm.gamma");
        p.prenorm_beta = get("prenorm.beta");
    }
    if (cfg.has_sa()) {
        p.attn.qkv_weight = get("attn.qkv.weight");
        p.attn.qkv_bias = get("attn.qkv.bias");
        p.attn.proj_weight = get("attn.proj.weight");
        p.attn.proj_bias = get("attn.proj.bias");
        if (cfg.relative_bias) p.attn.bias_table = get("attn.bias_table");
    }
    if (cfg.has_dw()) {
        p.dw2_weight = get("dw2.weight");
        p.dw2_bias = get("dw2.bias");
    }
    p.fc_out_weight = get("fc_out.weight");
    p.fc_out_bias = get("fc_out.bias");
    return p;
}

template <typename S>
inline void validate_pi_params(const PIBlockConfig& cfg, const PIBlockParamsT<S>& p) {
    cfg.validate();
    const int C = cfg.channels;
    const int K = PIBlockConfig::kDwKernel;
    const int Hdim = C * PIBlockConfig::kMlpRatio;
    auto expect = [](const char* name, const TensorT<S>& t, const std::vector<int>& shape) {
        if (!t.defined() || t.shape() != shape)
            throw ShapeError(std::string("pi block param ") + name + " must be " + shape_str(shape) +
                             (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined"));
    };
    expect("dw1.weight", p.dw1_weight, {C, K, K});
    expect("dw1.bias", p.dw1_bias, {C});
    expect("mlp.ln.gamma", p.mlp_ln_gamma, {C});
    expect("mlp.ln.beta", p.mlp_ln_beta, {C});
    expect("mlp.fc1.weight", p.mlp_fc1_weight, {Hdim, C});
    expect("mlp.fc1.bias", p.mlp_fc1_bias, {Hdim});
    expect("mlp.fc2.weight", p.mlp_fc2_weight, {C, Hdim});
    expect("mlp.fc2.bias", p.mlp_fc2_bias, {C});
    if (cfg.parallel_prenorm) {
        expect("prenorm.gamma", p.prenorm_gamma, {C});
        expect("prenorm.beta", p.prenorm_beta, {C});
    }
    if (cfg.has_sa()) validate_attention_params(cfg.attention(), p.attn);
    if (cfg.has_dw()) {
        expect("dw2.weight", p.dw2_weight, {C, K, K});
        expect("dw2.bias", p.dw2_bias, {C});
        if (p.dw1_weight.same_storage(p.dw2_weight))
            throw ContractError("pi block: dw1.weight and dw2.weight must be distinct tensors");
    }
    expect("fc_out.weight", p.fc_out_weight, {C, C});
    expect("fc_out.bias", p.fc_out_bias, {C});
}

// Intermediate values of one forward pass. `sa` and `dw` are the branch
// outputs before summation; an omitted branch leaves its tensor undefined.
template <typename S>
struct PITraceT {
    TensorT<S> fhat;    // serial sub-block output (first residual applied)
    TensorT<S> base;    // branch input: fhat, or prenorm(fhat)
    TensorT<S> sa;      // attention branch, NCHW
    TensorT<S> dw;      // conv branch, NCHW
    TensorT<S> ftilde;  // branch sum (or the single active branch)
    TensorT<S> out;     // FC(ftilde) + fhat
};

template <typename S>
PITraceT<S> pi_forward_traced(const TensorT<S>& x, const PIBlockParamsT<S>& params,
                              const PIBlockConfig& cfg, AttentionCaptureT<S>* capture = nullptr) {
    validate_pi_params(cfg, params);
    if (x.rank() != 4)
        throw ShapeError("pi block: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (x.shape()[1] != cfg.channels)
        throw ShapeError("pi block: input has " + std::to_string(x.shape()[1]) +
                         " channels, config expects " + std::to_string(cfg.channels));
    const int H = x.shape()[2], W = x.shape()[3];
    const S eps = static_cast<S>(PIBlockConfig::kLnEps);

    PITraceT<S> tr;

    TensorT<S> t = dwconv2d(x, params.dw1_weight, params.dw1_bias, PIBlockConfig::kDwPad);
    t = nchw_to_tokens(t);
    t = layernorm(t, params.mlp_ln_gamma, params.mlp_ln_beta, eps);
    t = linear(t, params.mlp_fc1_weight, params.mlp_fc1_bias);
    t = gelu(t);
    t = linear(t, params.mlp_fc2_weight, params.mlp_fc2_bias);
    tr.fhat = add(tokens_to_nchw(t, H, W), x);

    tr.base = tr.fhat;
    if (cfg.parallel_prenorm) {
        TensorT<S> n = layernorm(nchw_to_tokens(tr.fhat), params.prenorm_gamma, params.prenorm_beta, eps);
        tr.base = tokens_to_nchw(n, H, W);
    }

    if (cfg.has_sa()) {
        WindowBatchT<S> wb = window_partition(tr.base, cfg.window);
        wb = window_self_attention(wb, params.attn, cfg.attention(), capture);
        tr.sa = window_reverse(wb);
    }
    if (cfg.has_dw()) tr.dw = dwconv2d(tr.base, params.dw2_weight, params.dw2_bias, PIBlockConfig::kDwPad);

    switch (cfg.variant) {
        case PIVariant::full: tr.ftilde = add(tr.sa, tr.dw); break;
        case PIVariant::sa_only: tr.ftilde = tr.sa; break;
        case PIVariant::dw_only: tr.ftilde = tr.dw; break;
    }

    TensorT<S> merged = linear(nchw_to_tokens(tr.ftilde), params.fc_out_weight, params.fc_out_bias);
    tr.out = add(tokens_to_nchw(merged, H, W), tr.fhat);
    return tr;
}

template <typename S>
TensorT<S> pi_forward(const TensorT<S>& x, const PIBlockParamsT<S>& params, const PIBlockConfig& cfg) {
    return pi_forward_traced(x, params, cfg).out;
}

// The two parallel branch outputs before summation, diagnostic view of the
// spatial-vs-channel dynamics split. Full variant only.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> pi_branch_outputs(const TensorT<S>& x, const PIBlockParamsT<S>& params,
                                                    const PIBlockConfig& cfg) {
    if (cfg.variant != PIVariant::full)
        throw ContractError("pi_branch_outputs: both branches required, variant is not full");
    PITraceT<S> tr = pi_forward_traced(x, params, cfg);
    return {tr.sa, tr.dw};
}

}  // namespace unet22
