#pragma once

// Entry and exit paths of the network. The convolution stem reduces the
// image by the patch size P through log2(P) two-conv blocks; the
// de-convolution stem restores full resolution and emits class logits.
// Auxiliary heads are single 4x de-convolutions used for the extra
// supervision targets at half and quarter resolution.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "unet22/ops.hpp"

namespace unet22 {

struct StemConfig {
    int patch_size = 4;
    int in_channels = 1;
    int embed_dim = 96;
    int num_classes = 2;

    int conv_blocks() const { return patch_size == 4 ? 2 : 3; }
    int destem_extra_blocks() const { return conv_blocks() - 2; }

    // output channels of conv-stem block k (1-based); k == conv_blocks()
    // lands on embed_dim, earlier blocks halve toward the input side
    int block_out_channels(int k) const { return embed_dim >> (conv_blocks() - k); }

    // channels entering the final 4x de-convolution
    int destem_final_in() const { return embed_dim >> destem_extra_blocks(); }

    void validate() const {
        if (patch_size != 4 && patch_size != 8)
            throw ConfigError("stem: patch size must be 4 or 8, got " + std::to_string(patch_size));
        if (in_channels < 1 || embed_dim < 1 || num_classes < 2)
            throw ConfigError("stem: in_channels/embed_dim must be >= 1 and num_classes >= 2");
        if (block_out_channels(1) < 1 || (embed_dim % (1 << (conv_blocks() - 1))) != 0)
            throw ConfigError("stem: embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                              std::to_string(1 << (conv_blocks() - 1)));
    }
};

template <typename S>
struct StemBlockParamsT {
    TensorT<S> conv1_weight, conv1_bias;  // stride-2 conv
    TensorT<S> ln1_gamma, ln1_beta;
    TensorT<S> conv2_weight, conv2_bias;  // stride-1 conv
    TensorT<S> ln2_gamma, ln2_beta;
};

template <typename S>
struct ConvStemParamsT {
    std::vector<StemBlockParamsT<S>> blocks;
};

template <typename S>
struct DestemBlockParamsT {
    TensorT<S> deconv_weight, deconv_bias;  // 2x upsampling, channel halving
    TensorT<S> ln_gamma, ln_beta;
};

template <typename S>
struct DestemParamsT {
    std::vector<DestemBlockParamsT<S>> blocks;
    TensorT<S> final_weight, final_bias;  // 4x de-convolution to class logits
};

template <typename S>
struct AuxHeadParamsT {
    TensorT<S> deconv_weight, deconv_bias;
};

// Relative names and shapes; callers prepend "stem." / "destem." / "aux{i}.".
inline ParamSpec conv_stem_param_spec(const StemConfig& cfg) {
    cfg.validate();
    ParamSpec spec;
    for (int k = 1; k <= cfg.conv_blocks(); ++k) {
        const int cin = k == 1 ? cfg.in_channels : cfg.block_out_channels(k - 1);
        const int cout = cfg.block_out_channels(k);
        const std::string b = "block" + std::to_string(k) + ".";
        spec.emplace_back(b + "conv1.weight", std::vector<int>{cout, cin, 3, 3});
        spec.emplace_back(b + "conv1.bias", std::vector<int>{cout});
        spec.emplace_back(b + "ln1.gamma", std::vector<int>{cout});
        spec.emplace_back(b + "ln1.beta", std::vector<int>{cout});
        spec.emplace_back(b + "conv2.weight", std::vector<int>{cout, cout, 3, 3});
        spec.emplace_back(b + "conv2.bias", std::vector<int>{cout});
        spec.emplace_back(b + "ln2.gamma", std::vector<int>{cout});
        spec.emplace_back(b + "ln2.beta", std::vector<int>{cout});
    }
    return spec;
}

inline ParamSpec destem_param_spec(const StemConfig& cfg) {
    cfg.validate();
    ParamSpec spec;
    int c = cfg.embed_dim;
    for (int k = 1; k <= cfg.destem_extra_blocks(); ++k) {
        const std::string b = "block" + std::to_string(k) + ".";
        spec.emplace_back(b + "deconv.weight", std::vector<int>{c, c / 2, 2, 2});
        spec.emplace_back(b + "deconv.bias", std::vector<int>{c / 2});
        spec.emplace_back(b + "ln.gamma", std::vector<int>{c / 2});
        spec.emplace_back(b + "ln.beta", std::vector<int>{c / 2});
        c /= 2;
    }
    spec.emplace_back("final.weight", std::vector<int>{c, cfg.num_classes, 4, 4});
    spec.emplace_back("final.bias", std::vector<int>{cfg.num_classes});
    return spec;
}

inline ParamSpec aux_head_param_spec(int stage_channels, int num_classes) {
    ParamSpec spec;
    spec.emplace_back("deconv.weight", std::vector<int>{stage_channels, num_classes, 4, 4});
    spec.emplace_back("deconv.bias", std::vector<int>{num_classes});
    return spec;
}

template <typename S, typename Lookup>
ConvStemParamsT<S> bind_conv_stem_params(const StemConfig& cfg, Lookup&& get) {
    ConvStemParamsT<S> p;
    for (int k = 1; k <= cfg.conv_blocks(); ++k) {
        const std::string b = "block" + std::to_string(k) + ".";
        StemBlockParamsT<S> blk;
        blk.conv1_weight = get(b + "conv1.weight");
        blk.conv1_bias = get(b + "conv1.bias");
        blk.ln1_gamma = get(b + "ln1.gamma");
        blk.ln1_beta = get(b + "ln1.beta");
        blk.conv2_weight = get(b + "conv2.weight");
        blk.conv2_bias = get(b + "conv2.bias");
        blk.ln2_gamma = get(b + "ln2.gamma");
        blk.ln2_beta = get(b + "ln2.beta");
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

template <typename S, typename Lookup>
DestemParamsT<S> bind_destem_params(const StemConfig& cfg, Lookup&& get) {
    DestemParamsT<S> p;
    for (int k = 1; k <= cfg.destem_extra_blocks(); ++k) {
        const std::string b = "block" + std::to_string(k) + ".";
        DestemBlockParamsT<S> blk;
        blk.deconv_weight = get(b + "deconv.weight");
        blk.deconv_bias = get(b + "deconv.bias");
        blk.ln_gamma = get(b + "ln.gamma");
        blk.ln_beta = get(b + "ln.beta");
        p.blocks.push_back(std::move(blk));
    }
    p.final_weight = get("final.weight");
    p.final_bias = get("final.bias");
    return p;
}

namespace detail {

// LayerNorm over the channel axis of an NCHW map
template <typename S>
TensorT<S> channel_ln(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta) {
    const int h = x.size(2), w = x.size(3);
    return tokens_to_nchw(layernorm(nchw_to_tokens(x), gamma, beta, static_cast<S>(1e-5)), h, w);
}

}  // namespace detail

template <typename S>
TensorT<S> conv_stem_forward(const TensorT<S>& img, const ConvStemParamsT<S>& p, const StemConfig& cfg) {
    cfg.validate();
    if (img.rank() != 4)
        throw ShapeError("conv stem: input must be [n, c, h, w], got " + shape_str(img.shape()));
    if (img.size(1) != cfg.in_channels)
        throw ShapeError("conv stem: input has " + std::to_string(img.size(1)) +
                         " channels, config expects " + std::to_string(cfg.in_channels));
    if (img.size(2) % cfg.patch_size != 0 || img.size(3) % cfg.patch_size != 0)
        throw ConfigError("conv stem: spatial size " + std::to_string(img.size(2)) + "x" +
                          std::to_string(img.size(3)) + " is not divisible by patch size " +
                          std::to_string(cfg.patch_size));
    if (static_cast<int>(p.blocks.size()) != cfg.conv_blocks())
        throw ShapeError("conv stem: expected " + std::to_string(cfg.conv_blocks()) + " blocks, got " +
                         std::to_string(p.blocks.size()));
    TensorT<S> t = img;
    for (const StemBlockParamsT<S>& blk : p.blocks) {
        t = detail::channel_ln(gelu(conv2d(t, blk.conv1_weight, blk.conv1_bias, 2, 1)), blk.ln1_gamma,
                               blk.ln1_beta);
        t = detail::channel_ln(gelu(conv2d(t, blk.conv2_weight, blk.conv2_bias, 1, 1)), blk.ln2_gamma,
                               blk.ln2_beta);
    }
    return t;
}

template <typename S>
TensorT<S> deconv_stem_forward(const TensorT<S>& feat, const DestemParamsT<S>& p, const StemConfig& cfg) {
    cfg.validate();
    if (feat.rank() != 4)
        throw ShapeError("de-conv stem: input must be [n, c, h, w], got " + shape_str(feat.shape()));
    if (feat.size(1) != cfg.embed_dim)
        throw ShapeError("de-conv stem: input has " + std::to_string(feat.size(1)) +
                         " channels, config expects " + std::to_string(cfg.embed_dim));
    if (static_cast<int>(p.blocks.size()) != cfg.destem_extra_blocks())
        throw ShapeError("de-conv stem: expected " + std::to_string(cfg.destem_extra_blocks()) +
                         " blocks, got " + std::to_string(p.blocks.size()));
    TensorT<S> t = feat;
    for (const DestemBlockParamsT<S>& blk : p.blocks)
        t = detail::channel_ln(gelu(add_channel_bias(deconv2d(t, blk.deconv_weight, 2), blk.deconv_bias)),
                               blk.ln_gamma, blk.ln_beta);
    return add_channel_bias(deconv2d(t, p.final_weight, 4), p.final_bias);
}

template <typename S>
TensorT<S> aux_head_forward(const TensorT<S>& feat, const AuxHeadParamsT<S>& p) {
    if (feat.rank() != 4)
        throw ShapeError("aux head: input must be [n, c, h, w], got " + shape_str(feat.shape()));
    return add_channel_bias(deconv2d(feat, p.deconv_weight, 4), p.deconv_bias);
}

}  // namespace unet22
