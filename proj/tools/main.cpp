#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "unet22/gradcheck.hpp"
#include "unet22/pgm.hpp"
#include "unet22/report.hpp"
#include "unet22/tensor_io.hpp"
#include "unet22/trainer.hpp"

using namespace unet22;

namespace {

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IoError("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
}

// Shared --config layout: {"model": {...}, "train": {...}}, both optional.
// Returns whether the file pinned the model section.
bool load_run_config(const std::string& path, ModelConfig& mcfg, TrainConfig& tcfg) {
    const nlohmann::json j = load_json_file(path);
    if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "model" && key != "train")
            throw ConfigError("config file: unknown key '" + key + "'");
    if (j.count("model")) mcfg = model_config_from_json(j.at("model"));
    if (j.count("train")) tcfg = train_config_from_json(j.at("train"));
    return j.count("model") != 0;
}

// Without an explicit model section the class count and input size follow
// the dataset; an explicit section is taken verbatim so mismatches surface
// as errors instead of being papered over.
void derive_model_from_dataset(ModelConfig& mcfg, const std::string& data_dir) {
    const DatasetManifest manifest = load_manifest(data_dir);
    mcfg.num_classes = manifest.num_classes;
    const int quantum = 4 * mcfg.patch_size;
    mcfg.input_size = std::max(quantum, manifest.image_size / quantum * quantum);
    std::printf("model derived from dataset: %d classes, input %d\n", mcfg.num_classes,
                mcfg.input_size);
}

struct SynthArgs {
    std::string out;
    int n_train = 8, n_val = 2, n_test = 0;
    SyntheticSpec spec;
};

int run_synth(const SynthArgs& a) {
    const DatasetManifest manifest = synth_dataset(a.spec, a.n_train, a.n_val, a.n_test, a.out);
    std::printf("wrote %s/manifest.json (%d classes, %dpx", a.out.c_str(), manifest.num_classes,
                manifest.image_size);
    for (const auto& [split, ids] : manifest.splits)
        std::printf(", %s %zu", split.c_str(), ids.size());
    std::printf(")\n");
    return 0;
}

struct TrainArgs {
    std::string config, data, out, init_checkpoint;
    std::optional<double> lr;
    std::optional<int> iters, batch, crop, val_interval;
    std::optional<uint64_t> seed;
    std::optional<std::string> variant;
};

int run_train(const TrainArgs& a) {
    ModelConfig mcfg;
    TrainConfig tcfg;
    bool explicit_model = false;
    if (!a.config.empty()) explicit_model = load_run_config(a.config, mcfg, tcfg);
    if (!explicit_model) {
        if (a.init_checkpoint.empty()) {
            derive_model_from_dataset(mcfg, a.data);
        } else {
            ParameterStoreT<float> scratch;
            mcfg = load_checkpoint(a.init_checkpoint, scratch);
        }
    }
    if (a.lr) tcfg.lr = *a.lr;
    if (a.iters) tcfg.max_iters = *a.iters;
    if (a.batch) tcfg.batch_size = *a.batch;
    if (a.crop) tcfg.crop = *a.crop;
    if (a.val_interval) tcfg.val_interval = *a.val_interval;
    if (a.seed) tcfg.seed = *a.seed;
    if (a.variant) tcfg.variant = pi_variant_from_name(*a.variant);

    const TrainLog log = train_model<float>(mcfg, tcfg, a.data, a.out, a.init_checkpoint);
    std::printf("trained %d iterations in %.1fs, final loss %.6f\n", tcfg.max_iters,
                log.wall_seconds, log.loss.back());
    if (!log.best_checkpoint.empty())
        std::printf("best val DSC %.2f at iteration %d -> %s\n", log.best_val_dsc,
                    log.best_val_iter, log.best_checkpoint.c_str());
    std::printf("final checkpoint -> %s\n", log.final_checkpoint.c_str());
    return 0;
}

struct InferArgs {
    std::string checkpoint, image, out;
    int crop = 0;
    double step_fraction = 0.5;
};

int run_infer(const InferArgs& a) {
    ParameterStoreT<float> store;
    const ModelConfig cfg = load_checkpoint(a.checkpoint, store);
    if (cfg.in_channels != 1)
        throw ConfigError("infer: checkpoint expects " + std::to_string(cfg.in_channels) +
                          " input channels; PGM input is single-channel");
    const ModelParamsT<float> params = bind_model_params(cfg, store);

    const TensorT<float> plane = load_pgm<float>(a.image);
    const int h = plane.size(0), w = plane.size(1);
    TensorT<float> image = TensorT<float>::zeros({1, h, w});
    image.vec() = plane.vec();

    const int crop = a.crop > 0 ? a.crop : cfg.input_size;
    WindowForwardT<float> fwd = [&params, &cfg](const TensorT<float>& window) {
        return model_forward(window, params, cfg).logits;
    };
    const SlidingResultT<float> res =
        predict_full(image, fwd, plan_windows(h, w, crop, a.step_fraction));

    const std::string prob_path = a.out + ".prob.t22t";
    const std::string mask_path = a.out + ".mask.pgm";
    save_tensor(prob_path, res.prob);
    save_pgm_mask(mask_path, res.mask);
    std::printf("wrote %s and %s\n", prob_path.c_str(), mask_path.c_str());
    return 0;
}

struct EvalArgs {
    std::vector<std::string> pred, gt, prob;
    int num_classes = 0;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    if (a.pred.size() != a.gt.size())
        throw ConfigError("eval: got " + std::to_string(a.pred.size()) + " predictions and " +
                          std::to_string(a.gt.size()) + " references");
    if (!a.prob.empty() && a.prob.size() != a.pred.size())
        throw ConfigError("eval: probability maps must be given for every case or none");

    std::vector<EvalCase> cases;
    int max_label = 0;
    for (size_t i = 0; i < a.pred.size(); ++i) {
        EvalCase c;
        c.id = std::filesystem::path(a.pred[i]).stem().string();
        c.pred = load_pgm_mask(a.pred[i]);
        c.gt = load_pgm_mask(a.gt[i]);
        if (!a.prob.empty()) c.class_prob = load_tensor<double>(a.prob[i]);
        for (int32_t v : c.pred.v) max_label = std::max(max_label, v);
        for (int32_t v : c.gt.v) max_label = std::max(max_label, v);
        cases.push_back(std::move(c));
    }
    const int num_classes = a.num_classes > 0 ? a.num_classes : max_label + 1;

    const nlohmann::json report = metric_report(cases, num_classes);
    if (a.out.empty()) {
        std::cout << report.dump(2) << '\n';
    } else {
        std::ofstream out(a.out, std::ios::binary);
        out << report.dump(2) << '\n';
        if (!out.good()) throw IoError("eval: failed writing report '" + a.out + "'");
        std::printf("wrote %s\n", a.out.c_str());
    }
    return 0;
}

struct AblateArgs {
    std::string config, data, out;
    std::vector<std::string> variants{"full", "sa_only", "dw_only"};
    int seeds = 3;
    std::optional<double> lr;
    std::optional<int> iters, batch, crop, val_interval;
    std::optional<uint64_t> seed;
};

int run_ablate(const AblateArgs& a) {
    ModelConfig mcfg;
    TrainConfig tcfg;
    bool explicit_model = false;
    if (!a.config.empty()) explicit_model = load_run_config(a.config, mcfg, tcfg);
    if (!explicit_model) derive_model_from_dataset(mcfg, a.data);
    if (a.lr) tcfg.lr = *a.lr;
    if (a.iters) tcfg.max_iters = *a.iters;
    if (a.batch) tcfg.batch_size = *a.batch;
    if (a.crop) tcfg.crop = *a.crop;
    if (a.val_interval) tcfg.val_interval = *a.val_interval;
    if (a.seed) tcfg.seed = *a.seed;

    std::vector<PIVariant> variants;
    for (const std::string& name : a.variants) variants.push_back(pi_variant_from_name(name));

    const nlohmann::json report = ablate<float>(mcfg, tcfg, a.data, a.out, variants, a.seeds);
    for (const auto& [vname, s] : report.at("summary").items())
        std::printf("%-8s mean val DSC %.2f (sd %.2f) over %d seeds, %lld parameters\n",
                    vname.c_str(), s.at("mean_val_dsc").get<double>(),
                    s.at("sd_val_dsc").get<double>(), s.at("num_seeds").get<int>(),
                    static_cast<long long>(s.at("parameter_count").get<int64_t>()));
    std::printf("report -> %s/ablation.json\n", a.out.c_str());
    if (report.at("flagged").get<bool>()) {
        std::fprintf(stderr, "flagged: full variant did not reach the best mean val DSC\n");
        return 1;
    }
    return 0;
}

struct GradcheckArgs {
    std::string size = "tiny";
};

// Finite-difference sweep over a stand-alone PI block and the whole network
// under the deeply supervised loss. Exits nonzero when any relative error
// crosses 1e-4.
int run_gradcheck(const GradcheckArgs& a) {
    const bool small = a.size == "small";
    const double tol = 1e-4;
    double worst = 0.0;
    bool ok = true;

    auto report = [&](const char* label, const GradCheckResult& r) {
        const bool pass = r.max_rel_err < tol;
        std::printf("%-22s max rel err %.3e over %lld coords  %s\n", label, r.max_rel_err,
                    static_cast<long long>(r.coords_checked), pass ? "ok" : "FAIL");
        worst = std::max(worst, r.max_rel_err);
        ok = ok && pass;
    };

    {
        PIBlockConfig pc;
        pc.channels = 8;
        pc.window = 2;
        pc.heads = 2;
        ParameterStoreT<double> store;
        Rng rng(31);
        for (const auto& [name, shape] : pi_param_spec(pc)) {
            TensorT<double> t = TensorT<double>::zeros(shape);
            for (auto& v : t.vec()) v = 0.2 * rng.normal();
            store.insert("blk." + name, t);
        }
        const PIBlockParamsT<double> params =
            bind_pi_params<double>(pc, [&](const std::string& n) { return store.at("blk." + n); });
        TensorT<double> x = TensorT<double>::randn({1, 8, 4, 4}, rng, 0.5);

        std::vector<TensorT<double>> leaves{x};
        for (const auto& [name, t] : store) leaves.push_back(t);
        auto make_loss = [&]() { return sum_all(pi_forward(x, params, pc)); };
        report("pi block", grad_check<double>(leaves, make_loss, 1e-5, small ? 24 : 6, 5));
    }

    {
        ModelConfig cfg;
        cfg.input_size = 16;
        cfg.in_channels = 1;
        cfg.num_classes = 2;
        cfg.patch_size = 4;
        cfg.embed_dim = 8;
        cfg.window = 4;
        cfg.depths = {1, 1, 1};
        ParameterStoreT<double> store = build_parameters<double>(parameter_spec(cfg), 17);
        const ModelParamsT<double> params = bind_model_params(cfg, store);
        Rng rng(23);
        TensorT<double> x = TensorT<double>::randn({1, 1, 16, 16}, rng, 1.0);
        IntGrid mask({1, 16, 16});
        for (auto& v : mask.v) v = static_cast<int32_t>(rng.uniform_int(0, 1));

        std::vector<TensorT<double>> leaves{x};
        for (const auto& [name, t] : store) leaves.push_back(t);
        auto make_loss = [&]() {
            const ModelOutputT<double> out = model_forward(x, params, cfg);
            return deep_supervised_loss(out, mask, cfg.deep_supervision, LossConfig{});
        };
        report("model + loss", grad_check<double>(leaves, make_loss, 1e-5, small ? 4 : 2, 7));
    }

    std::printf("worst relative error %.3e (tolerance %.0e)\n", worst, tol);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unet22 segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic shape dataset");
    synth->add_option("--out", synth_args.out, "output dataset directory")->required();
    synth->add_option("--train", synth_args.n_train, "training images");
    synth->add_option("--val", synth_args.n_val, "validation images");
    synth->add_option("--test", synth_args.n_test, "test images");
    synth->add_option("--size", synth_args.spec.image_size, "image edge in pixels");
    synth->add_option("--classes", synth_args.spec.num_classes, "classes including background");
    synth->add_option("--seed", synth_args.spec.seed, "dataset seed");
    synth->add_option("--min-shapes", synth_args.spec.min_shapes, "minimum shapes per image");
    synth->add_option("--max-shapes", synth_args.spec.max_shapes, "maximum shapes per image");
    synth->add_option("--noise", synth_args.spec.noise_sigma, "additive noise sigma");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset directory");
    train->add_option("--config", train_args.config, "JSON config {\"model\":{},\"train\":{}}")
        ->check(CLI::ExistingFile);
    train->add_option("--data", train_args.data, "dataset directory")->required();
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--init-checkpoint", train_args.init_checkpoint,
                      "resume weights from a checkpoint")
        ->check(CLI::ExistingFile);
    train->add_option("--lr", train_args.lr, "learning rate");
    train->add_option("--iters", train_args.iters, "training iterations");
    train->add_option("--batch", train_args.batch, "batch size");
    train->add_option("--crop", train_args.crop, "training crop edge");
    train->add_option("--val-interval", train_args.val_interval, "iterations between validations");
    train->add_option("--seed", train_args.seed, "run seed");
    train->add_option("--variant", train_args.variant, "pi block variant: full, sa_only, dw_only");

    InferArgs infer_args;
    CLI::App* infer = app.add_subcommand("infer", "segment one PGM image with a checkpoint");
    infer->add_option("--checkpoint", infer_args.checkpoint, "model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--image", infer_args.image, "input PGM image")
        ->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--out", infer_args.out, "output path prefix")->required();
    infer->add_option("--crop", infer_args.crop, "window edge (default: model input size)");
    infer->add_option("--step-fraction", infer_args.step_fraction,
                      "window stride as a fraction of the crop (0.5 default; 0.3 and 0.2 for "
                      "denser overlap)");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "score predicted masks against references");
    eval->add_option("--pred", eval_args.pred, "predicted mask PGMs")->required();
    eval->add_option("--gt", eval_args.gt, "reference mask PGMs")->required();
    eval->add_option("--prob", eval_args.prob, "per-case probability tensors (from infer)");
    eval->add_option("--classes", eval_args.num_classes,
                     "class count (default: inferred from the masks)");
    eval->add_option("--out", eval_args.out, "report path (default: stdout)");

    GradcheckArgs gradcheck_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck->add_option("--size", gradcheck_args.size, "suite size")
        ->check(CLI::IsMember({"tiny", "small"}));

    AblateArgs ablate_args;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare pi block variants");
    ablate_cmd->add_option("--config", ablate_args.config, "JSON config {\"model\":{},\"train\":{}}")
        ->check(CLI::ExistingFile);
    ablate_cmd->add_option("--data", ablate_args.data, "dataset directory")->required();
    ablate_cmd->add_option("--out", ablate_args.out, "output directory")->required();
    ablate_cmd->add_option("--variants", ablate_args.variants, "variants to train");
    ablate_cmd->add_option("--seeds", ablate_args.seeds, "seeds per variant");
    ablate_cmd->add_option("--lr", ablate_args.lr, "learning rate");
    ablate_cmd->add_option("--iters", ablate_args.iters, "training iterations");
    ablate_cmd->add_option("--batch", ablate_args.batch, "batch size");
    ablate_cmd->add_option("--crop", ablate_args.crop, "training crop edge");
    ablate_cmd->add_option("--val-interval", ablate_args.val_interval,
                           "iterations between validations");
    ablate_cmd->add_option("--seed", ablate_args.seed, "base seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return run_synth(synth_args);
        if (train->parsed()) return run_train(train_args);
        if (infer->parsed()) return run_infer(infer_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (gradcheck->parsed()) return run_gradcheck(gradcheck_args);
        if (ablate_cmd->parsed()) return run_ablate(ablate_args);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 0;
}
