#pragma once

// The full U-shaped network: convolution stem, three encoder stages of PI
// blocks joined by stride-2 down-convolutions, a mirrored decoder with
// 2x de-convolutions and concat+FC skip fusion, and the de-convolution stem
// producing class logits. Optional auxiliary heads emit half- and
// quarter-resolution logits for the extra supervision terms.

#include <array>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "unet22/param_store.hpp"
#include "unet22/pi_block.hpp"
#include "unet22/stems.hpp"

namespace unet22 {

struct ModelConfig {
    int input_size = 224;
    int in_channels = 1;
    int num_classes = 2;
    int patch_size = 4;
    int embed_dim = 96;
    int window = 7;
    std::vector<int> depths{3, 3, 3};
    int heads_divisor = 32;
    bool deep_supervision = true;
    bool parallel_prenorm = true;
    bool relative_bias = true;
    PIVariant variant = PIVariant::full;

    static constexpr int kStages = 3;

    StemConfig stem() const { return StemConfig{patch_size, in_channels, embed_dim, num_classes}; }

    // stage index is 1-based on both sides of the U
    int stage_channels(int i) const { return embed_dim << (i - 1); }
    int stage_resolution(int i) const { return input_size / patch_size >> (i - 1); }

    PIBlockConfig stage_block(int i) const {
        PIBlockConfig pc;
        pc.channels = stage_channels(i);
        pc.window = window;
        pc.heads = std::max(1, stage_channels(i) / heads_divisor);
        pc.parallel_prenorm = parallel_prenorm;
        pc.relative_bias = relative_bias;
        pc.variant = variant;
        return pc;
    }

    void validate() const {
        stem().validate();
        if (input_size < 4 * patch_size || input_size % (4 * patch_size) != 0)
            throw ConfigError("model: input size " + std::to_string(input_size) +
                              " must be a positive multiple of " + std::to_string(4 * patch_size) +
                              " (patch size times two stage halvings)");
        if (static_cast<int>(depths.size()) != kStages)
            throw ConfigError("model: depths must list exactly " + std::to_string(kStages) +
                              " stages, got " + std::to_string(depths.size()));
        for (int d : depths)
            if (d < 1) throw ConfigError("model: every stage depth must be >= 1");
        if (heads_divisor < 1) throw ConfigError("model: heads_divisor must be >= 1");
        for (int i = 1; i <= kStages; ++i) stage_block(i).validate();
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"input_size", cfg.input_size},
                          {"in_channels", cfg.in_channels},
                          {"num_classes", cfg.num_classes},
                          {"patch_size", cfg.patch_size},
                          {"embed_dim", cfg.embed_dim},
                          {"window", cfg.window},
                          {"depths", cfg.depths},
                          {"heads_divisor", cfg.heads_divisor},
                          {"deep_supervision", cfg.deep_supervision},
                          {"parallel_prenorm", cfg.parallel_prenorm},
                          {"relative_bias", cfg.relative_bias},
                          {"variant", pi_variant_name(cfg.variant)}};
}

// Missing keys keep their defaults so hand-written config files can stay
// short; unknown keys are rejected to catch typos.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::set<std::string> known{
        "input_size",    "in_channels",      "num_classes",      "patch_size",
        "embed_dim",     "window",           "depths",           "heads_divisor",
        "deep_supervision", "parallel_prenorm", "relative_bias", "variant"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
    ModelConfig cfg;
    try {
        cfg.input_size = j.value("input_size", cfg.input_size);
        cfg.in_channels = j.value("in_channels", cfg.in_channels);
        cfg.num_classes = j.value("num_classes", cfg.num_classes);
        cfg.patch_size = j.value("patch_size", cfg.patch_size);
        cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
        cfg.window = j.value("window", cfg.window);
        cfg.depths = j.value("depths", cfg.depths);
        cfg.heads_divisor = j.value("heads_divisor", cfg.heads_divisor);
        cfg.deep_supervision = j.value("deep_supervision", cfg.deep_supervision);
        cfg.parallel_prenorm = j.value("parallel_prenorm", cfg.parallel_prenorm);
        cfg.relative_bias = j.value("relative_bias", cfg.relative_bias);
        cfg.variant = pi_variant_from_name(j.value("variant", std::string("full")));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return cfg;
}

// Every trainable parameter of the network, in forward order. The one
// place names and shapes are defined; construction, binding and checkpoint
// validation all read from here.
inline ParamSpec parameter_spec(const ModelConfig& cfg) {
    cfg.validate();
    ParamSpec spec;
    auto append = [&spec](const std::string& prefix, const ParamSpec& sub) {
        for (const auto& [n, s] : sub) spec.emplace_back(prefix + n, s);
    };
    auto stage_blocks = [&](int i, const char* suffix) {
        const ParamSpec block = pi_param_spec(cfg.stage_block(i));
        for (int j = 1; j <= cfg.depths[static_cast<size_t>(i - 1)]; ++j)
            append("stage" + std::to_string(i) + suffix + ".block" + std::to_string(j) + ".", block);
    };

    append("stem.", conv_stem_param_spec(cfg.stem()));
    for (int i = 1; i <= ModelConfig::kStages; ++i) {
        stage_blocks(i, "");
        if (i < ModelConfig::kStages) {
            const int c = cfg.stage_channels(i);
            spec.emplace_back("down" + std::to_string(i) + ".conv.weight", std::vector<int>{2 * c, c, 2, 2});
            spec.emplace_back("down" + std::to_string(i) + ".conv.bias", std::vector<int>{2 * c});
        }
    }
    for (int i = ModelConfig::kStages; i >= 1; --i) {
        stage_blocks(i, "d");
        if (i > 1) {
            const int c = cfg.stage_channels(i - 1);
            const std::string n = std::to_string(i - 1);
            spec.emplace_back("up" + n + ".deconv.weight", std::vector<int>{2 * c, c, 2, 2});
            spec.emplace_back("up" + n + ".deconv.bias", std::vector<int>{c});
            spec.emplace_back("fuse" + n + ".fc.weight", std::vector<int>{c, 2 * c});
            spec.emplace_back("fuse" + n + ".fc.bias", std::vector<int>{c});
        }
    }
    append("destem.", destem_param_spec(cfg.stem()));
    if (cfg.deep_supervision) {
        append("aux1.", aux_head_param_spec(cfg.stage_channels(2), cfg.num_classes));
        append("aux2.", aux_head_param_spec(cfg.stage_channels(3), cfg.num_classes));
    }
    return spec;
}

template <typename S>
struct DownParamsT {
    TensorT<S> weight, bias;
};
template <typename S>
struct UpParamsT {
    TensorT<S> weight, bias;
};
template <typename S>
struct FuseParamsT {
    TensorT<S> weight, bias;
};

template <typename S>
struct ModelParamsT {
    ConvStemParamsT<S> stem;
    std::array<std::vector<PIBlockParamsT<S>>, ModelConfig::kStages> enc;  // enc[i-1] = stage{i}
    std::array<std::vector<PIBlockParamsT<S>>, ModelConfig::kStages> dec;  // dec[i-1] = stage{i}d
    std::array<DownParamsT<S>, ModelConfig::kStages - 1> down;             // down[i-1] = down{i}
    std::array<UpParamsT<S>, ModelConfig::kStages - 1> up;                 // up[i-1] = up{i}
    std::array<FuseParamsT<S>, ModelConfig::kStages - 1> fuse;
    DestemParamsT<S> destem;
    AuxHeadParamsT<S> aux1, aux2;  // defined only under deep supervision
};

template <typename S>
ModelParamsT<S> bind_model_params(const ModelConfig& cfg, const ParameterStoreT<S>& store) {
    cfg.validate();
    auto prefixed = [&store](std::string prefix) {
        return [&store, prefix = std::move(prefix)](const std::string& n) { return store.at(prefix + n); };
    };
    ModelParamsT<S> p;
    p.stem = bind_conv_stem_params<S>(cfg.stem(), prefixed("stem."));
    for (int i = 1; i <= ModelConfig::kStages; ++i) {
        const PIBlockConfig pc = cfg.stage_block(i);
        for (int j = 1; j <= cfg.depths[static_cast<size_t>(i - 1)]; ++j) {
            p.enc[static_cast<size_t>(i - 1)].push_back(bind_pi_params<S>(
                pc, prefixed("stage" + std::to_string(i) + ".block" + std::to_string(j) + ".")));
            p.dec[static_cast<size_t>(i - 1)].push_back(bind_pi_params<S>(
                pc, prefixed("stage" + std::to_string(i) + "d.block" + std::to_string(j) + ".")));
        }
    }
    for (int i = 1; i < ModelConfig::kStages; ++i) {
        const std::string n = std::to_string(i);
        p.down[static_cast<size_t>(i - 1)] = {store.at("down" + n + ".conv.weight"),
                                              store.at("down" + n + ".conv.bias")};
        p.up[static_cast<size_t>(i - 1)] = {store.at("up" + n + ".deconv.weight"),
                                            store.at("up" + n + ".deconv.bias")};
        p.fuse[static_cast<size_t>(i - 1)] = {store.at("fuse" + n + ".fc.weight"),
                                              store.at("fuse" + n + ".fc.bias")};
    }
    p.destem = bind_destem_params<S>(cfg.stem(), prefixed("destem."));
    if (cfg.deep_supervision) {
        p.aux1 = {store.at("aux1.deconv.weight"), store.at("aux1.deconv.bias")};
        p.aux2 = {store.at("aux2.deconv.weight"), store.at("aux2.deconv.bias")};
    }
    return p;
}

template <typename S>
ParameterStoreT<S> build_model(const ModelConfig& cfg, uint64_t seed) {
    return build_parameters<S>(parameter_spec(cfg), seed);
}

struct ForwardOptions {
    bool zero_skips = false;  // replaces skip features with zeros, for sensitivity probes
};

struct ShapeRecord {
    std::string label;
    std::vector<int> shape;
    bool operator==(const ShapeRecord& o) const { return label == o.label && shape == o.shape; }
};
using ForwardTrace = std::vector<ShapeRecord>;

template <typename S>
struct ModelOutputT {
    TensorT<S> logits;       // [N, num_classes, H, W]
    // Auxiliary logits under deep supervision, at 4x their decoder stage's
    // resolution: H/2 and H/4 for patch size 4, H/4 and H/8 for patch size 8.
    TensorT<S> aux_fine;    // from the second decoder stage
    TensorT<S> aux_coarse;  // from the bottom decoder stage
};

// Accepts any spatial size divisible by 4*patch_size, so training crops and
// sliding-window tiles of sizes other than cfg.input_size work unchanged.
template <typename S>
ModelOutputT<S> model_forward(const TensorT<S>& x, const ModelParamsT<S>& p, const ModelConfig& cfg,
                              const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) {
    if (x.rank() != 4)
        throw ShapeError("model: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (x.size(1) != cfg.in_channels)
        throw ShapeError("model: input has " + std::to_string(x.size(1)) + " channels, config expects " +
                         std::to_string(cfg.in_channels));
    const int div = 4 * cfg.patch_size;
    if (x.size(2) % div != 0 || x.size(3) % div != 0)
        throw ConfigError("model: spatial size " + std::to_string(x.size(2)) + "x" +
                          std::to_string(x.size(3)) + " is not divisible by " + std::to_string(div));
    auto rec = [trace](const std::string& label, const TensorT<S>& t) {
        if (trace) trace->push_back({label, t.shape()});
    };

    TensorT<S> t = conv_stem_forward(x, p.stem, cfg.stem());
    rec("stem", t);

    std::array<TensorT<S>, ModelConfig::kStages - 1> skips;
    for (int i = 1; i <= ModelConfig::kStages; ++i) {
        const PIBlockConfig pc = cfg.stage_block(i);
        for (const PIBlockParamsT<S>& blk : p.enc[static_cast<size_t>(i - 1)]) t = pi_forward(t, blk, pc);
        rec("stage" + std::to_string(i), t);
        if (i < ModelConfig::kStages) {
            skips[static_cast<size_t>(i - 1)] = t;
            t = conv2d(t, p.down[static_cast<size_t>(i - 1)].weight, p.down[static_cast<size_t>(i - 1)].bias,
                       2, 0);
            rec("down" + std::to_string(i), t);
        }
    }

    ModelOutputT<S> out;
    for (int i = ModelConfig::kStages; i >= 1; --i) {
        const PIBlockConfig pc = cfg.stage_block(i);
        for (const PIBlockParamsT<S>& blk : p.dec[static_cast<size_t>(i - 1)]) t = pi_forward(t, blk, pc);
        rec("stage" + std::to_string(i) + "d", t);
        if (cfg.deep_supervision && i == 3) {
            out.aux_coarse = aux_head_forward(t, p.aux2);
            rec("aux2", out.aux_coarse);
        }
        if (cfg.deep_supervision && i == 2) {
            out.aux_fine = aux_head_forward(t, p.aux1);
            rec("aux1", out.aux_fine);
        }
        if (i > 1) {
            const size_t k = static_cast<size_t>(i - 2);
            t = add_channel_bias(deconv2d(t, p.up[k].weight, 2), p.up[k].bias);
            rec("up" + std::to_string(i - 1), t);
            TensorT<S> skip = opt.zero_skips ? TensorT<S>::zeros(skips[k].shape()) : skips[k];
            t = concat_channels(t, skip);
            const int h = t.size(2), w = t.size(3);
            t = tokens_to_nchw(linear(nchw_to_tokens(t), p.fuse[k].weight, p.fuse[k].bias), h, w);
            rec("fuse" + std::to_string(i - 1), t);
        }
    }

    out.logits = deconv_stem_forward(t, p.destem, cfg.stem());
    rec("logits", out.logits);
    return out;
}

}  // namespace unet22
