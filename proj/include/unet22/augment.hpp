#pragma once

// Training-time augmentation chain: rotation, scaling, gaussian noise,
// gaussian blur, brightness/contrast, low-resolution simulation, gamma,
// mirroring, applied in that order. Each step fires independently with its
// configured probability. Images are interpolated bilinearly, masks by
// nearest neighbor, and out-of-frame samples clamp to the edge so a mask can
// never gain a label it did not have.

#include <cmath>
#include <json.hpp>

#include "unet22/data.hpp"

namespace unet22 {

struct AugmentConfig {
    double prob = 0.2;         // gate for every step except mirroring
    double mirror_prob = 0.5;
    double rotate_deg_max = 15.0;
    double scale_lo = 0.9, scale_hi = 1.1;
    double noise_sigma_max = 0.05;
    double blur_sigma_lo = 0.5, blur_sigma_hi = 1.0;
    double brightness_max = 0.2;
    double contrast_lo = 0.75, contrast_hi = 1.25;
    double lowres_factor_max = 2.0;
    double gamma_lo = 0.7, gamma_hi = 1.5;

    void validate() const {
        auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!in01(prob) || !in01(mirror_prob))
            throw ConfigError("AugmentConfig: probabilities must be in [0, 1]");
        if (rotate_deg_max < 0 || noise_sigma_max < 0 || brightness_max < 0)
            throw ConfigError("AugmentConfig: magnitudes must be non-negative");
        if (scale_lo <= 0 || scale_lo > scale_hi || blur_sigma_lo <= 0 ||
            blur_sigma_lo > blur_sigma_hi || contrast_lo <= 0 || contrast_lo > contrast_hi ||
            gamma_lo <= 0 || gamma_lo > gamma_hi || lowres_factor_max < 1.0)
            throw ConfigError("AugmentConfig: invalid range");
    }
};

inline nlohmann::json augment_config_to_json(const AugmentConfig& c) {
    return nlohmann::json{{"prob", c.prob},
                          {"mirror_prob", c.mirror_prob},
                          {"rotate_deg_max", c.rotate_deg_max},
                          {"scale_lo", c.scale_lo},
                          {"scale_hi", c.scale_hi},
                          {"noise_sigma_max", c.noise_sigma_max},
                          {"blur_sigma_lo", c.blur_sigma_lo},
                          {"blur_sigma_hi", c.blur_sigma_hi},
                          {"brightness_max", c.brightness_max},
                          {"contrast_lo", c.contrast_lo},
                          {"contrast_hi", c.contrast_hi},
                          {"lowres_factor_max", c.lowres_factor_max},
                          {"gamma_lo", c.gamma_lo},
                          {"gamma_hi", c.gamma_hi}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
    AugmentConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "prob") c.prob = value.get<double>();
            else if (key == "mirror_prob") c.mirror_prob = value.get<double>();
            else if (key == "rotate_deg_max") c.rotate_deg_max = value.get<double>();
            else if (key == "scale_lo") c.scale_lo = value.get<double>();
            else if (key == "scale_hi") c.scale_hi = value.get<double>();
            else if (key == "noise_sigma_max") c.noise_sigma_max = value.get<double>();
            else if (key == "blur_sigma_lo") c.blur_sigma_lo = value.get<double>();
            else if (key == "blur_sigma_hi") c.blur_sigma_hi = value.get<double>();
            else if (key == "brightness_max") c.brightness_max = value.get<double>();
            else if (key == "contrast_lo") c.contrast_lo = value.get<double>();
            else if (key == "contrast_hi") c.contrast_hi = value.get<double>();
            else if (key == "lowres_factor_max") c.lowres_factor_max = value.get<double>();
            else if (key == "gamma_lo") c.gamma_lo = value.get<double>();
            else if (key == "gamma_hi") c.gamma_hi = value.get<double>();
            else throw ConfigError("AugmentConfig: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("AugmentConfig: ") + e.what());
    }
    c.validate();
    return c;
}

namespace detail {

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

inline double bilinear_at(const TensorD& img, int c, double y, double x) {
    const int H = img.size(1), W = img.size(2);
    y = std::min(static_cast<double>(H - 1), std::max(0.0, y));
    x = std::min(static_cast<double>(W - 1), std::max(0.0, x));
    const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = y - y0, fx = x - x0;
    return (1 - fy) * ((1 - fx) * img(c, y0, x0) + fx * img(c, y0, x1)) +
           fy * ((1 - fx) * img(c, y1, x0) + fx * img(c, y1, x1));
}

inline int32_t nearest_label_at(const IntGrid& m, double y, double x) {
    const int H = m.shape[0], W = m.shape[1];
    const int iy = static_cast<int>(std::lround(std::min(static_cast<double>(H - 1), std::max(0.0, y))));
    const int ix = static_cast<int>(std::lround(std::min(static_cast<double>(W - 1), std::max(0.0, x))));
    return m.at(iy, ix);
}

// Inverse-map warp about the image center: for each output pixel, sample the
// input at src = center + A * (dst - center).
inline SegmentationSample warp_affine(const SegmentationSample& s, double a00, double a01,
                                      double a10, double a11) {
    const int C = s.image.size(0), H = s.image.size(1), W = s.image.size(2);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    SegmentationSample out;
    out.id = s.id;
    out.image = TensorD::zeros({C, H, W});
    out.mask = IntGrid({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + a00 * dy + a01 * dx;
            const double sx = cx + a10 * dy + a11 * dx;
            for (int c = 0; c < C; ++c) out.image(c, y, x) = bilinear_at(s.image, c, sy, sx);
            out.mask.at(y, x) = nearest_label_at(s.mask, sy, sx);
        }
    return out;
}

}  // namespace detail

// Counterclockwise rotation (y down, x right) by deg about the center.
inline SegmentationSample rotate_sample(const SegmentationSample& s, double deg) {
    const double rad = deg * M_PI / 180.0;
    const double c = std::cos(rad), n = std::sin(rad);
    return detail::warp_affine(s, c, n, -n, c);
}

// Zoom by factor about the center (factor > 1 enlarges content).
inline SegmentationSample scale_sample(const SegmentationSample& s, double factor) {
    if (factor <= 0) throw ConfigError("scale_sample: factor must be positive");
    return detail::warp_affine(s, 1.0 / factor, 0.0, 0.0, 1.0 / factor);
}

inline SegmentationSample mirror_sample(const SegmentationSample& s) {
    const int C = s.image.size(0), H = s.image.size(1), W = s.image.size(2);
    SegmentationSample out;
    out.id = s.id;
    out.image = TensorD::zeros({C, H, W});
    out.mask = IntGrid({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C; ++c) out.image(c, y, x) = s.image(c, y, W - 1 - x);
            out.mask.at(y, x) = s.mask.at(y, W - 1 - x);
        }
    return out;
}

inline TensorD blur_image(const TensorD& img, double sigma) {
    if (sigma <= 0) throw ConfigError("blur_image: sigma must be positive");
    const int C = img.size(0), H = img.size(1), W = img.size(2);
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<size_t>(i + r)] = std::exp(-(static_cast<double>(i) * i) / (2 * sigma * sigma));
        sum += k[static_cast<size_t>(i + r)];
    }
    for (auto& v : k) v /= sum;

    TensorD tmp = TensorD::zeros({C, H, W}), out = TensorD::zeros({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<size_t>(i + r)] *
                           img(c, y, std::min(W - 1, std::max(0, x + i)));
                tmp(c, y, x) = acc;
            }
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0;
                for (int i = -r; i <= r; ++i)
                    acc += k[static_cast<size_t>(i + r)] *
                           tmp(c, std::min(H - 1, std::max(0, y + i)), x);
                out(c, y, x) = acc;
            }
    return out;
}

// Bilinear shrink to round(extent/factor), then bilinear growth back; the
// mask is untouched (intensity-only degradation).
inline TensorD lowres_image(const TensorD& img, double factor) {
    if (factor < 1.0) throw ConfigError("lowres_image: factor must be >= 1");
    const int H = img.size(1), W = img.size(2);
    const int h2 = std::max(1, static_cast<int>(std::lround(H / factor)));
    const int w2 = std::max(1, static_cast<int>(std::lround(W / factor)));
    if (h2 == H && w2 == W) return img;
    auto resize = [](const TensorD& in, int oh, int ow) {
        const int c_n = in.size(0), ih = in.size(1), iw = in.size(2);
        TensorD out = TensorD::zeros({c_n, oh, ow});
        for (int c = 0; c < c_n; ++c)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const double sy = (y + 0.5) * ih / oh - 0.5;
                    const double sx = (x + 0.5) * iw / ow - 0.5;
                    out(c, y, x) = detail::bilinear_at(in, c, sy, sx);
                }
        return out;
    };
    return resize(resize(img, h2, w2), H, W);
}

inline SegmentationSample augment(const SegmentationSample& sample, const AugmentConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    SegmentationSample s = sample;

    if (rng.uniform() < cfg.prob) s = rotate_sample(s, rng.uniform(0.0, cfg.rotate_deg_max));
    if (rng.uniform() < cfg.prob) s = scale_sample(s, rng.uniform(cfg.scale_lo, cfg.scale_hi));
    if (rng.uniform() < cfg.prob) {
        const double sigma = rng.uniform(0.0, cfg.noise_sigma_max);
        for (int64_t i = 0; i < s.image.numel(); ++i)
            s.image.data()[i] = detail::clamp01(s.image.data()[i] + sigma * rng.normal());
    }
    if (rng.uniform() < cfg.prob)
        s.image = blur_image(s.image, rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
    if (rng.uniform() < cfg.prob) {
        const double shift = rng.uniform(-cfg.brightness_max, cfg.brightness_max);
        const double gain = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
        for (int c = 0; c < s.image.size(0); ++c) {
            double mean = 0;
            const int64_t plane = static_cast<int64_t>(s.image.size(1)) * s.image.size(2);
            for (int64_t i = 0; i < plane; ++i) mean += s.image.data()[c * plane + i];
            mean /= static_cast<double>(plane);
            // shift first, then stretch about the shifted mean
            for (int64_t i = 0; i < plane; ++i)
                s.image.data()[c * plane + i] =
                    detail::clamp01(mean + shift + gain * (s.image.data()[c * plane + i] - mean));
        }
    }
    if (rng.uniform() < cfg.prob)
        s.image = lowres_image(s.image, rng.uniform(1.0, cfg.lowres_factor_max));
    if (rng.uniform() < cfg.prob) {
        const double gamma = rng.uniform(cfg.gamma_lo, cfg.gamma_hi);
        for (int64_t i = 0; i < s.image.numel(); ++i)
            s.image.data()[i] = std::pow(s.image.data()[i], gamma);
    }
    if (rng.uniform() < cfg.mirror_prob) s = mirror_sample(s);
    return s;
}

}  // namespace unet22
