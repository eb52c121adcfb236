#pragma once

// Synthetic segmentation dataset: random ellipses, rectangles, and rings on
// a flat background, rasterized exactly so the masks are perfect ground
// truth. The generator logs every shape's parameters into the manifest, so
// an independent pass can re-rasterize and cross-check any image.

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "unet22/data.hpp"

namespace unet22 {

struct SyntheticSpec {
    int image_size = 64;
    int num_classes = 3;  // background plus shape labels
    int min_shapes = 1, max_shapes = 3;
    double noise_sigma = 0.02;
    uint64_t seed = 0;

    void validate() const {
        if (image_size < 8) throw ConfigError("SyntheticSpec: image_size must be >= 8");
        if (num_classes < 2 || num_classes > 256)
            throw ConfigError("SyntheticSpec: num_classes must be in [2, 256]");
        if (min_shapes < 1 || min_shapes > max_shapes || max_shapes > 16)
            throw ConfigError("SyntheticSpec: shape count range invalid");
        if (noise_sigma < 0) throw ConfigError("SyntheticSpec: noise_sigma must be >= 0");
    }
};

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct DatasetManifest {
    int num_classes = 0;
    int image_size = 0;
    std::map<std::string, std::vector<std::string>> splits;
    // generator parameters plus the per-id shape log
    nlohmann::json spec;
};

// Writes images/{id}.pgm, masks/{id}.pgm, and manifest.json under out_dir.
// Identical spec and counts always produce byte-identical directories.
DatasetManifest synth_dataset(const SyntheticSpec& spec, int n_train, int n_val, int n_test,
                              const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
SegmentationSample load_sample(const std::string& dir, const std::string& id);

}  // namespace unet22
