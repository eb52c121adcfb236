#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unet22/tensor.hpp"

// Binary PGM (P5) IO, fixed to maxval 255. Images travel through the library
// normalized to [0,1]; masks carry raw class indices.

namespace unet22 {

struct PgmImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // row-major
};

PgmImage load_pgm_raw(const std::string& path);
void save_pgm_raw(const std::string& path, const PgmImage& img);

template <typename S>
TensorT<S> load_pgm(const std::string& path) {
    const PgmImage img = load_pgm_raw(path);
    TensorT<S> t({img.height, img.width});
    for (size_t i = 0; i < img.pixels.size(); ++i)
        t.vec()[i] = static_cast<S>(img.pixels[i]) / S(255);
    return t;
}

template <typename S>
void save_pgm(const std::string& path, const TensorT<S>& t) {
    if (t.rank() != 2) throw IoError("save_pgm expects a [h, w] tensor, got " + shape_str(t.shape()));
    PgmImage img;
    img.height = t.size(0);
    img.width = t.size(1);
    img.pixels.resize(static_cast<size_t>(t.numel()));
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const double v = std::lround(static_cast<double>(t.vec()[i]) * 255.0);
        img.pixels[i] = static_cast<uint8_t>(std::min(255.0, std::max(0.0, v)));
    }
    save_pgm_raw(path, img);
}

inline IntGrid load_pgm_mask(const std::string& path) {
    const PgmImage img = load_pgm_raw(path);
    IntGrid g({img.height, img.width});
    for (size_t i = 0; i < img.pixels.size(); ++i) g.v[i] = img.pixels[i];
    return g;
}

inline void save_pgm_mask(const std::string& path, const IntGrid& g) {
    if (g.rank() != 2) throw IoError("save_pgm_mask expects a [h, w] grid, got " + shape_str(g.shape));
    PgmImage img;
    img.height = g.shape[0];
    img.width = g.shape[1];
    img.pixels.resize(g.v.size());
    for (size_t i = 0; i < g.v.size(); ++i) {
        if (g.v[i] < 0 || g.v[i] > 255)
            throw IoError("mask value " + std::to_string(g.v[i]) + " outside 8-bit range");
        img.pixels[i] = static_cast<uint8_t>(g.v[i]);
    }
    save_pgm_raw(path, img);
}

}  // namespace unet22
