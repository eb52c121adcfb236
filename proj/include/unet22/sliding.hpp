#pragma once

// Whole-image prediction by tiling fixed-size crops over the image and
// blending the per-window softmax maps under a Gaussian importance weight.
// Images smaller than the crop are mirror-padded, predicted, and cropped
// back.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "unet22/ops.hpp"
#include "unet22/tensor.hpp"

namespace unet22 {

struct SlidingPlan {
    int crop = 0;
    double step_fraction = 0.5;
    double sigma = 0.0;  // Gaussian width; crop/8 when built by plan_windows
    // extent the windows tile; equals the image extent unless the image is
    // smaller than the crop
    int padded_h = 0, padded_w = 0;
    std::vector<std::pair<int, int>> origins;  // row-major, deterministic
};

// Window origins at multiples of stride = max(1, round(fraction*crop)),
// with the final origin clamped so the last window ends at the image edge.
inline SlidingPlan plan_windows(int h, int w, int crop, double step_fraction) {
    if (crop < 1) throw ConfigError("plan_windows: crop must be >= 1");
    if (h < 1 || w < 1) throw ConfigError("plan_windows: image extent must be positive");
    if (!(step_fraction > 0.0) || step_fraction > 1.0)
        throw ConfigError("plan_windows: step_fraction must be in (0, 1], got " +
                          std::to_string(step_fraction));

    SlidingPlan plan;
    plan.crop = crop;
    plan.step_fraction = step_fraction;
    plan.sigma = static_cast<double>(crop) / 8.0;
    plan.padded_h = std::max(h, crop);
    plan.padded_w = std::max(w, crop);

    const int stride = std::max(1, static_cast<int>(std::lround(step_fraction * crop)));
    auto axis_origins = [&](int extent) {
        std::vector<int> out;
        for (int pos = 0;; pos += stride) {
            const int origin = std::min(pos, extent - crop);
            out.push_back(origin);
            if (origin == extent - crop) break;
        }
        return out;
    };
    const std::vector<int> ys = axis_origins(plan.padded_h);
    const std::vector<int> xs = axis_origins(plan.padded_w);
    for (int y : ys)
        for (int x : xs) plan.origins.emplace_back(y, x);
    return plan;
}

// Importance map centered at (crop-1)/2 on both axes so the four mirror
// images of any pixel share one weight. Peak scaled to 1, then clamped
// below at 1e-8 so no pixel can zero out of the blend.
template <typename S>
TensorT<S> gaussian_map(int crop, double sigma = 0.0) {
    if (crop < 1) throw ConfigError("gaussian_map: crop must be >= 1");
    if (sigma <= 0.0) sigma = static_cast<double>(crop) / 8.0;
    TensorT<S> g = TensorT<S>::zeros({crop, crop});
    const double c = (crop - 1) / 2.0;
    double peak = 0.0;
    std::vector<double> raw(static_cast<size_t>(crop) * crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
            const double v = std::exp(-d2 / (2.0 * sigma * sigma));
            raw[static_cast<size_t>(y) * crop + x] = v;
            peak = std::max(peak, v);
        }
    for (int64_t i = 0; i < g.numel(); ++i)
        g.data()[i] = static_cast<S>(std::max(raw[static_cast<size_t>(i)] / peak, 1e-8));
    return g;
}

namespace detail {

// Mirror an out-of-range index back into [0, n) without repeating the edge
// sample; handles pads wider than the image by folding repeatedly.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace detail

template <typename S>
struct SlidingResultT {
    TensorT<S> prob;  // [classes, h, w], per-pixel softmax blend
    IntGrid mask;     // [h, w], argmax over classes (lowest index wins ties)
};

// forward maps one [1, c, crop, crop] window to [1, classes, crop, crop]
// logits.
template <typename S>
using WindowForwardT = std::function<TensorT<S>(const TensorT<S>&)>;

template <typename S>
SlidingResultT<S> predict_full(const TensorT<S>& image, const WindowForwardT<S>& forward,
                               const SlidingPlan& plan) {
    if (!image.defined() || image.rank() != 3)
        throw ShapeError("predict_full: image must be [c, h, w]");
    if (plan.crop < 1 || plan.origins.empty())
        throw ContractError("predict_full: plan has no windows");
    const int C = image.size(0), H = image.size(1), W = image.size(2);
    const int crop = plan.crop;
    const int PH = std::max(H, crop), PW = std::max(W, crop);
    if (plan.padded_h != PH || plan.padded_w != PW)
        throw ContractError("predict_full: plan extent does not match image");

    TensorT<S> padded = image;
    if (PH != H || PW != W) {
        padded = TensorT<S>::zeros({C, PH, PW});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < PH; ++y)
                for (int x = 0; x < PW; ++x)
                    padded(c, y, x) = image(c, detail::reflect_index(y, H), detail::reflect_index(x, W));
    }

    const TensorT<S> g = gaussian_map<S>(crop, plan.sigma);
    int classes = -1;
    std::vector<double> num;
    std::vector<double> den(static_cast<size_t>(PH) * PW, 0.0);

    TensorT<S> window = TensorT<S>::zeros({1, C, crop, crop});
    for (const auto& [oy, ox] : plan.origins) {
        if (oy < 0 || ox < 0 || oy + crop > PH || ox + crop > PW)
            throw ContractError("predict_full: window (" + std::to_string(oy) + ", " +
                                std::to_string(ox) + ") leaves the image");
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x) window(0, c, y, x) = padded(c, oy + y, ox + x);

        const TensorT<S> logits = forward(window);
        if (!logits.defined() || logits.rank() != 4 || logits.size(0) != 1 ||
            logits.size(2) != crop || logits.size(3) != crop)
            throw ShapeError("predict_full: model output must be [1, classes, crop, crop]");
        if (classes < 0) {
            classes = logits.size(1);
            num.assign(static_cast<size_t>(classes) * PH * PW, 0.0);
        } else if (logits.size(1) != classes) {
            throw ShapeError("predict_full: model changed its class count between windows");
        }

        const TensorT<S> probs = softmax(logits, 1);
        for (int k = 0; k < classes; ++k)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x)
                    num[(static_cast<size_t>(k) * PH + oy + y) * PW + ox + x] +=
                        static_cast<double>(probs(0, k, y, x)) * static_cast<double>(g(y, x));
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x)
                den[static_cast<size_t>(oy + y) * PW + ox + x] += static_cast<double>(g(y, x));
    }

    for (double d : den)
        if (!(d > 0.0))
            throw ContractError("predict_full: coverage hole, pixel with zero accumulated weight");

    SlidingResultT<S> result;
    result.prob = TensorT<S>::zeros({classes, H, W});
    result.mask = IntGrid({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int best = 0;
            double best_p = -1.0;
            for (int k = 0; k < classes; ++k) {
                const double p = num[(static_cast<size_t>(k) * PH + y) * PW + x] /
                                 den[static_cast<size_t>(y) * PW + x];
                result.prob(k, y, x) = static_cast<S>(p);
                if (p > best_p) {
                    best_p = p;
                    best = k;
                }
            }
            result.mask.at(y, x) = best;
        }
    return result;
}

}  // namespace unet22
