#include "unet22/synth.hpp"

#include <filesystem>
#include <fstream>

#include "unet22/pgm.hpp"

namespace unet22 {

namespace {

struct Shape {
    std::string kind;  // ellipse | rectangle | ring
    int cls = 0;
    double cy = 0, cx = 0, ry = 0, rx = 0;
    double inner = 0;  // ring: inner edge as a fraction of (ry, rx)
    double intensity = 0;
};

// The containment predicates are the contract with the re-rasterization
// oracle: ellipse metric v = ((y-cy)/ry)^2 + ((x-cx)/rx)^2 at integer pixel
// centers, v <= 1 inside; rectangle |y-cy| <= ry and |x-cx| <= rx; ring
// inner^2 <= v <= 1.
bool covers(const Shape& s, int y, int x) {
    if (s.kind == "rectangle") return std::abs(y - s.cy) <= s.ry && std::abs(x - s.cx) <= s.rx;
    const double vy = (y - s.cy) / s.ry, vx = (x - s.cx) / s.rx;
    const double v = vy * vy + vx * vx;
    if (s.kind == "ellipse") return v <= 1.0;
    return v <= 1.0 && v >= s.inner * s.inner;
}

Shape draw_shape(const SyntheticSpec& spec, Rng& rng) {
    static const char* kinds[3] = {"ellipse", "rectangle", "ring"};
    Shape s;
    s.kind = kinds[rng.uniform_int(0, 2)];
    s.cls = rng.uniform_int(1, spec.num_classes - 1);
    const double size = spec.image_size;
    s.cy = rng.uniform(0.2 * size, 0.8 * size);
    s.cx = rng.uniform(0.2 * size, 0.8 * size);
    s.ry = rng.uniform(0.08 * size, 0.25 * size);
    s.rx = rng.uniform(0.08 * size, 0.25 * size);
    if (s.kind == "ring") s.inner = rng.uniform(0.4, 0.7);
    // intensity banded by class so classes are visually separable, jittered
    const double band = static_cast<double>(s.cls) / (spec.num_classes - 1);
    s.intensity = std::min(1.0, std::max(0.3, 0.35 + 0.55 * band + rng.uniform(-0.08, 0.08)));
    return s;
}

nlohmann::json shape_to_json(const Shape& s) {
    return nlohmann::json{{"kind", s.kind}, {"cls", s.cls},     {"cy", s.cy},
                          {"cx", s.cx},    {"ry", s.ry},       {"rx", s.rx},
                          {"inner", s.inner}, {"intensity", s.intensity}};
}

}  // namespace

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
    return nlohmann::json{{"image_size", spec.image_size}, {"num_classes", spec.num_classes},
                          {"min_shapes", spec.min_shapes}, {"max_shapes", spec.max_shapes},
                          {"noise_sigma", spec.noise_sigma}, {"seed", spec.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec spec;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "image_size") spec.image_size = value.get<int>();
            else if (key == "num_classes") spec.num_classes = value.get<int>();
            else if (key == "min_shapes") spec.min_shapes = value.get<int>();
            else if (key == "max_shapes") spec.max_shapes = value.get<int>();
            else if (key == "noise_sigma") spec.noise_sigma = value.get<double>();
            else if (key == "seed") spec.seed = value.get<uint64_t>();
            else if (key == "shapes") continue;  // per-id rasterization log
            else throw ConfigError("SyntheticSpec: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("SyntheticSpec: ") + e.what());
    }
    spec.validate();
    return spec;
}

DatasetManifest synth_dataset(const SyntheticSpec& spec, int n_train, int n_val, int n_test,
                              const std::string& out_dir) {
    spec.validate();
    if (n_train < 0 || n_val < 0 || n_test < 0 || n_train + n_val + n_test == 0)
        throw ConfigError("synth_dataset: split sizes must be non-negative and not all zero");

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw IoError("cannot create dataset directories under " + out_dir + ": " + ec.message());

    DatasetManifest manifest;
    manifest.num_classes = spec.num_classes;
    manifest.image_size = spec.image_size;
    manifest.spec = synthetic_spec_to_json(spec);
    nlohmann::json shape_log = nlohmann::json::object();

    const int S = spec.image_size;
    const std::pair<const char*, int> split_sizes[3] = {
        {"train", n_train}, {"val", n_val}, {"test", n_test}};
    for (const auto& [split, count] : split_sizes) {
        std::vector<std::string>& ids = manifest.splits[split];
        for (int i = 0; i < count; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s_%03d", split, i);
            const std::string id = buf;
            ids.push_back(id);

            Rng rng(seed_mix(spec.seed, id));
            const double bg = rng.uniform(0.05, 0.25);
            const int n_shapes = rng.uniform_int(spec.min_shapes, spec.max_shapes);
            std::vector<Shape> shapes;
            shapes.reserve(static_cast<size_t>(n_shapes));
            for (int k = 0; k < n_shapes; ++k) shapes.push_back(draw_shape(spec, rng));

            TensorD image = TensorD::full({S, S}, bg);
            IntGrid mask({S, S});
            for (const Shape& s : shapes)
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x)
                        if (covers(s, y, x)) {
                            image(y, x) = s.intensity;
                            mask.at(y, x) = s.cls;
                        }
            if (spec.noise_sigma > 0)
                for (int64_t p = 0; p < image.numel(); ++p)
                    image.data()[p] = std::min(
                        1.0, std::max(0.0, image.data()[p] + spec.noise_sigma * rng.normal()));

            save_pgm(out_dir + "/images/" + id + ".pgm", image);
            save_pgm_mask(out_dir + "/masks/" + id + ".pgm", mask);
            nlohmann::json& log = shape_log[id] = nlohmann::json::array();
            for (const Shape& s : shapes) log.push_back(shape_to_json(s));
        }
    }
    manifest.spec["shapes"] = std::move(shape_log);

    nlohmann::json j{{"num_classes", manifest.num_classes},
                     {"image_size", manifest.image_size},
                     {"splits", manifest.splits},
                     {"spec", manifest.spec}};
    std::ofstream out(out_dir + "/manifest.json", std::ios::binary);
    if (!out) throw IoError("cannot open " + out_dir + "/manifest.json for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + out_dir + "/manifest.json");
    return manifest;
}

DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw IoError("cannot open " + dir + "/manifest.json");
    nlohmann::json j;
    try {
        in >> j;
        DatasetManifest m;
        m.num_classes = j.at("num_classes").get<int>();
        m.image_size = j.at("image_size").get<int>();
        m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
        m.spec = j.at("spec");
        if (m.num_classes < 2 || m.image_size < 1)
            throw IoError(dir + "/manifest.json: implausible dataset parameters");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(dir + "/manifest.json: " + e.what());
    }
}

SegmentationSample load_sample(const std::string& dir, const std::string& id) {
    SegmentationSample s;
    s.id = id;
    const TensorD flat = load_pgm<double>(dir + "/images/" + id + ".pgm");
    s.image = TensorD::zeros({1, flat.size(0), flat.size(1)});
    for (int64_t i = 0; i < flat.numel(); ++i) s.image.data()[i] = flat.data()[i];
    s.mask = load_pgm_mask(dir + "/masks/" + id + ".pgm");
    if (s.mask.shape != std::vector<int>{flat.size(0), flat.size(1)})
        throw IoError("sample '" + id + "': image and mask extents differ");
    return s;
}

}  // namespace unet22
