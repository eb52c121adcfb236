#pragma once

// Training loop: sample a batch, augment, crop, forward, combined loss with
// optional deep supervision, backward, Adam step. Validation runs every
// val_interval iterations through the sliding-window predictor and tracks
// the best mean foreground DSC. Everything is driven by named rng streams,
// so a (seed, config, dataset) triple fully determines the run, including
// the final checkpoint bytes.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "unet22/adam.hpp"
#include "unet22/augment.hpp"
#include "unet22/checkpoint.hpp"
#include "unet22/common.hpp"
#include "unet22/data.hpp"
#include "unet22/losses.hpp"
#include "unet22/metrics.hpp"
#include "unet22/model.hpp"
#include "unet22/sliding.hpp"
#include "unet22/synth.hpp"

namespace unet22 {

inline nlohmann::json loss_config_to_json(const LossConfig& c) {
    return nlohmann::json{{"lambda_dice", c.lambda_dice},
                          {"lambda_ce", c.lambda_ce},
                          {"dice_eps", c.dice_eps},
                          {"alpha", c.alpha}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("loss config must be a JSON object");
    static const std::set<std::string> known{"lambda_dice", "lambda_ce", "dice_eps", "alpha"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("loss config: unknown key '" + key + "'");
    LossConfig c;
    try {
        c.lambda_dice = j.value("lambda_dice", c.lambda_dice);
        c.lambda_ce = j.value("lambda_ce", c.lambda_ce);
        c.dice_eps = j.value("dice_eps", c.dice_eps);
        c.alpha = j.value("alpha", c.alpha);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    c.validate();
    return c;
}

// The training config owns the deep-supervision and branch-variant switches;
// train_model copies them onto the model config, so one model description
// serves every ablation arm.
struct TrainConfig {
    double lr = 1e-4;  // fixed for the whole run, no schedule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 4;
    int max_iters = 1000;
    uint64_t seed = 0;
    bool deep_supervision = true;
    PIVariant variant = PIVariant::full;
    int crop = 0;  // training crop edge; 0 takes the model input size
    int val_interval = 100;
    double val_step_fraction = 0.5;
    LossConfig loss;
    AugmentConfig augment;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("train: lr must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("train: betas must lie in [0, 1)");
        if (!(eps > 0)) throw ConfigError("train: eps must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (max_iters < 1) throw ConfigError("train: max_iters must be >= 1");
        if (crop < 0) throw ConfigError("train: crop must be >= 0");
        if (val_interval < 1) throw ConfigError("train: val_interval must be >= 1");
        if (!(val_step_fraction > 0.0) || val_step_fraction > 1.0)
            throw ConfigError("train: val_step_fraction must be in (0, 1]");
        loss.validate();
        augment.validate();
    }

    AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"lr", c.lr},
                          {"beta1", c.beta1},
                          {"beta2", c.beta2},
                          {"eps", c.eps},
                          {"batch_size", c.batch_size},
                          {"max_iters", c.max_iters},
                          {"seed", c.seed},
                          {"deep_supervision", c.deep_supervision},
                          {"variant", pi_variant_name(c.variant)},
                          {"crop", c.crop},
                          {"val_interval", c.val_interval},
                          {"val_step_fraction", c.val_step_fraction},
                          {"loss", loss_config_to_json(c.loss)},
                          {"augment", augment_config_to_json(c.augment)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    static const std::set<std::string> known{
        "lr",   "beta1",      "beta2",     "eps",     "batch_size",        "max_iters", "seed",
        "deep_supervision",   "variant",   "crop",    "val_interval",      "val_step_fraction",
        "loss", "augment"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("train config: unknown key '" + key + "'");
    TrainConfig c;
    try {
        c.lr = j.value("lr", c.lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_iters = j.value("max_iters", c.max_iters);
        c.seed = j.value("seed", c.seed);
        c.deep_supervision = j.value("deep_supervision", c.deep_supervision);
        c.variant = pi_variant_from_name(j.value("variant", std::string("full")));
        c.crop = j.value("crop", c.crop);
        c.val_interval = j.value("val_interval", c.val_interval);
        c.val_step_fraction = j.value("val_step_fraction", c.val_step_fraction);
        if (j.count("loss")) c.loss = loss_config_from_json(j.at("loss"));
        if (j.count("augment")) c.augment = augment_config_from_json(j.at("augment"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

struct ValPoint {
    int iter = 0;
    double mean_fg_dsc = 0.0;  // percent
};

struct TrainLog {
    std::vector<double> loss;  // one entry per iteration, all finite
    std::vector<ValPoint> val;
    double best_val_dsc = -1.0;
    int best_val_iter = -1;
    double wall_seconds = 0.0;
    std::string best_checkpoint;  // empty when no validation pass ran
    std::string final_checkpoint;
};

namespace detail {

inline std::vector<SegmentationSample> load_split(const std::string& dir,
                                                  const DatasetManifest& manifest,
                                                  const std::string& split) {
    std::vector<SegmentationSample> out;
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) return out;
    out.reserve(it->second.size());
    for (const std::string& id : it->second) {
        SegmentationSample s = load_sample(dir, id);
        validate_sample(s, manifest.num_classes);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace detail

// Mean DSC over every (sample, foreground class) pair, in percent. Each
// sample is predicted with the sliding window at the given crop and step.
template <typename S>
double evaluate_mean_fg_dsc(const std::vector<SegmentationSample>& samples,
                            const ModelParamsT<S>& params, const ModelConfig& cfg, int crop,
                            double step_fraction) {
    if (samples.empty()) throw ContractError("evaluate: no samples");
    WindowForwardT<S> fwd = [&params, &cfg](const TensorT<S>& window) {
        return model_forward(window, params, cfg).logits;
    };
    double sum = 0.0;
    int64_t count = 0;
    for (const SegmentationSample& s : samples) {
        const int h = s.image.size(1), w = s.image.size(2);
        TensorT<S> image = TensorT<S>::zeros(s.image.shape());
        for (int64_t i = 0; i < image.numel(); ++i)
            image.vec()[static_cast<size_t>(i)] = static_cast<S>(s.image.vec()[static_cast<size_t>(i)]);
        SlidingResultT<S> pred = predict_full(image, fwd, plan_windows(h, w, crop, step_fraction));
        for (int cls = 1; cls < cfg.num_classes; ++cls) {
            sum += dsc_metric(pred.mask, s.mask, cls);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

template <typename S>
TrainLog train_model(const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const std::string& dataset_dir, const std::string& out_dir,
                     const std::string& init_checkpoint = "") {
    cfg.validate();
    ModelConfig mcfg = model_cfg;
    mcfg.deep_supervision = cfg.deep_supervision;
    mcfg.variant = cfg.variant;
    mcfg.validate();

    const DatasetManifest manifest = load_manifest(dataset_dir);
    if (manifest.num_classes != mcfg.num_classes)
        throw ConfigError("train: dataset has " + std::to_string(manifest.num_classes) +
                          " classes, model expects " + std::to_string(mcfg.num_classes));
    const std::vector<SegmentationSample> train_set =
        detail::load_split(dataset_dir, manifest, "train");
    const std::vector<SegmentationSample> val_set = detail::load_split(dataset_dir, manifest, "val");
    if (train_set.empty()) throw ConfigError("train: dataset has no train split");
    if (train_set.front().image.size(0) != mcfg.in_channels)
        throw ConfigError("train: dataset images have " +
                          std::to_string(train_set.front().image.size(0)) +
                          " channels, model expects " + std::to_string(mcfg.in_channels));

    const int crop = cfg.crop > 0 ? cfg.crop : mcfg.input_size;
    if (crop % (4 * mcfg.patch_size) != 0)
        throw ConfigError("train: crop " + std::to_string(crop) + " must be a multiple of " +
                          std::to_string(4 * mcfg.patch_size));

    ParameterStoreT<S> store = build_parameters<S>(parameter_spec(mcfg), cfg.seed);
    if (!init_checkpoint.empty()) {
        ParameterStoreT<S> loaded;
        const ModelConfig ck_cfg = load_checkpoint(init_checkpoint, loaded);
        if (model_config_to_json(ck_cfg) != model_config_to_json(mcfg))
            throw ConfigError("train: checkpoint '" + init_checkpoint +
                              "' was built for a different model configuration");
        store = std::move(loaded);
    }
    for (const auto& [name, param] : store) {
        TensorT<S> handle = param;
        handle.set_requires_grad(true);
    }
    const ModelParamsT<S> params = bind_model_params(mcfg, store);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create output directory '" + out_dir + "'");
    const std::string log_path = out_dir + "/train_log.jsonl";
    std::ofstream log_out(log_path, std::ios::binary);
    if (!log_out.good()) throw IoError("train: cannot open log file '" + log_path + "'");

    AdamT<S> adam(cfg.adam());
    Rng order_rng(seed_mix(cfg.seed, "batch-order"));
    TrainLog log;
    const auto t0 = std::chrono::steady_clock::now();

    for (int it = 1; it <= cfg.max_iters; ++it) {
        TensorT<S> batch =
            TensorT<S>::zeros({cfg.batch_size, mcfg.in_channels, crop, crop});
        IntGrid batch_mask({cfg.batch_size, crop, crop});
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t pick = static_cast<size_t>(
                order_rng.uniform_int(0, static_cast<int>(train_set.size()) - 1));
            const SegmentationSample& raw = train_set[pick];
            Rng draw_rng(seed_mix(cfg.seed, "draw:" + std::to_string(it) + ":" +
                                                std::to_string(b) + ":" + raw.id));
            SegmentationSample s = random_crop(augment(raw, cfg.augment, draw_rng), crop, draw_rng);
            for (int c = 0; c < mcfg.in_channels; ++c)
                for (int y = 0; y < crop; ++y)
                    for (int x = 0; x < crop; ++x) batch(b, c, y, x) = static_cast<S>(s.image(c, y, x));
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x) batch_mask.at(b, y, x) = s.mask.at(y, x);
        }

        TapeT<S> tape;
        TensorT<S> loss;
        {
            TapeScopeT<S> scope(tape);
            const ModelOutputT<S> out = model_forward(batch, params, mcfg);
            loss = deep_supervised_loss(out, batch_mask, mcfg.deep_supervision, cfg.loss);
        }
        const double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
            throw NumericError("training aborted at iteration " + std::to_string(it) +
                               ": non-finite loss (lr " + std::to_string(cfg.lr) + ")");
        tape.backward(loss);
        adam.step(store);

        log.loss.push_back(loss_value);
        log_out << nlohmann::json{{"iter", it}, {"loss", loss_value}}.dump() << '\n';

        if (!val_set.empty() && (it % cfg.val_interval == 0 || it == cfg.max_iters)) {
            const double dsc =
                evaluate_mean_fg_dsc(val_set, params, mcfg, crop, cfg.val_step_fraction);
            log.val.push_back({it, dsc});
            log_out << nlohmann::json{{"iter", it}, {"val_dsc", dsc}}.dump() << '\n';
            if (dsc > log.best_val_dsc) {
                log.best_val_dsc = dsc;
                log.best_val_iter = it;
                log.best_checkpoint = out_dir + "/best.t22c";
                save_checkpoint(log.best_checkpoint, mcfg, store);
            }
        }
    }

    log.final_checkpoint = out_dir + "/final.t22c";
    save_checkpoint(log.final_checkpoint, mcfg, store);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_out << nlohmann::json{{"final_checkpoint", log.final_checkpoint},
                              {"best_checkpoint", log.best_checkpoint},
                              {"best_val_dsc", log.best_val_dsc},
                              {"wall_seconds", log.wall_seconds}}
                   .dump()
            << '\n';
    if (!log_out.good()) throw IoError("train: failed writing log file '" + log_path + "'");
    return log;
}

// Trains every requested branch variant over num_seeds consecutive seeds on
// the same dataset and reports best validation DSC per run. The report is
// always produced; when the full block fails to beat a single-branch arm on
// mean DSC the report says so instead of erroring.
template <typename S>
nlohmann::json ablate(const ModelConfig& model_cfg, const TrainConfig& base_cfg,
                      const std::string& dataset_dir, const std::string& out_dir,
                      const std::vector<PIVariant>& variants, int num_seeds) {
    if (variants.empty()) throw ConfigError("ablate: no variants requested");
    if (num_seeds < 1) throw ConfigError("ablate: num_seeds must be >= 1");
    for (size_t i = 0; i < variants.size(); ++i)
        for (size_t j = i + 1; j < variants.size(); ++j)
            if (variants[i] == variants[j])
                throw ConfigError("ablate: variant '" + std::string(pi_variant_name(variants[i])) +
                                  "' listed twice");
    const DatasetManifest manifest = load_manifest(dataset_dir);
    auto val_it = manifest.splits.find("val");
    if (val_it == manifest.splits.end() || val_it->second.empty())
        throw ConfigError("ablate: dataset needs a non-empty val split");

    nlohmann::json entries = nlohmann::json::array();
    std::map<std::string, std::vector<double>> by_variant;
    std::map<std::string, int64_t> param_counts;
    for (const PIVariant variant : variants) {
        const std::string vname = pi_variant_name(variant);
        ModelConfig mcfg = model_cfg;
        mcfg.variant = variant;
        int64_t n_params = 0;
        for (const auto& [name, shape] : parameter_spec(mcfg)) {
            int64_t n = 1;
            for (int d : shape) n *= d;
            n_params += n;
        }
        param_counts[vname] = n_params;
        for (int k = 0; k < num_seeds; ++k) {
            TrainConfig cfg = base_cfg;
            cfg.variant = variant;
            cfg.seed = base_cfg.seed + static_cast<uint64_t>(k);
            const std::string run_dir = out_dir + "/" + vname + "_s" + std::to_string(cfg.seed);
            const TrainLog log = train_model<S>(model_cfg, cfg, dataset_dir, run_dir);
            by_variant[vname].push_back(log.best_val_dsc);
            entries.push_back({{"variant", vname},
                               {"seed", cfg.seed},
                               {"val_dsc", log.best_val_dsc},
                               {"parameter_count", n_params},
                               {"run_dir", run_dir}});
        }
    }

    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [vname, values] : by_variant) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double sd = 0.0;
        if (values.size() > 1) {
            for (double v : values) sd += (v - mean) * (v - mean);
            sd = std::sqrt(sd / static_cast<double>(values.size() - 1));
        }
        summary[vname] = {{"mean_val_dsc", mean},
                          {"sd_val_dsc", sd},
                          {"parameter_count", param_counts[vname]},
                          {"num_seeds", values.size()}};
    }

    const bool has_full = by_variant.count("full") != 0;
    bool checked = false;
    bool holds = true;
    if (has_full) {
        const double full_mean = summary["full"]["mean_val_dsc"].template get<double>();
        for (const auto& [vname, values] : by_variant) {
            if (vname == "full") continue;
            checked = true;
            const double other_mean = summary[vname]["mean_val_dsc"].template get<double>();
            if (full_mean < other_mean) holds = false;
        }
    }

    nlohmann::json report{{"entries", entries},
                          {"summary", summary},
                          {"ordering_checked", checked},
                          {"ordering_holds", checked ? holds : true},
                          {"flagged", checked && !holds}};

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("ablate: cannot create output directory '" + out_dir + "'");
    const std::string report_path = out_dir + "/ablation.json";
    std::ofstream out(report_path, std::ios::binary);
    out << report.dump(2) << '\n';
    if (!out.good()) throw IoError("ablate: failed writing report '" + report_path + "'");
    return report;
}

}  // namespace unet22
