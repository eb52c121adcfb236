#pragma once

// Segmentation training losses: soft Dice over softmax probabilities plus
// pixel cross-entropy, combined 1.2:0.8, and the three-scale weighted total
// (1/2, 1/4, 1/8) used with the auxiliary heads.

#include <array>
#include <cmath>
#include <vector>

#include "unet22/model.hpp"
#include "unet22/ops.hpp"
#include "unet22/tape.hpp"

namespace unet22 {

struct LossConfig {
    double lambda_dice = 1.2;
    double lambda_ce = 0.8;
    double dice_eps = 1e-5;
    std::array<double, 3> alpha{0.5, 0.25, 0.125};  // full, fine aux, coarse aux

    void validate() const {
        if (lambda_dice <= 0 || lambda_ce <= 0)
            throw ConfigError("LossConfig: loss weights must be positive");
        if (dice_eps <= 0) throw ConfigError("LossConfig: dice_eps must be positive");
        if (!(alpha[0] > alpha[1] && alpha[1] > alpha[2]) || alpha[2] <= 0)
            throw ConfigError("LossConfig: alpha must be positive and strictly decreasing");
    }
};

namespace detail {

template <typename S>
void validate_logits_mask(const char* op, const TensorT<S>& logits, const IntGrid& mask) {
    if (!logits.defined()) throw ContractError(std::string(op) + ": undefined tensor");
    if (logits.rank() != 4)
        throw ShapeError(std::string(op) + ": logits must be [n, c, h, w], got " +
                         shape_str(logits.shape()));
    if (mask.shape != std::vector<int>{logits.size(0), logits.size(2), logits.size(3)})
        throw ShapeError(std::string(op) + ": mask shape " + shape_str(mask.shape) +
                         " does not match logits " + shape_str(logits.shape()));
    const int classes = logits.size(1);
    for (int32_t v : mask.v)
        if (v < 0 || v >= classes)
            throw ContractError(std::string(op) + ": mask label " + std::to_string(v) +
                                " outside [0, " + std::to_string(classes) + ")");
}

}  // namespace detail

// Mean over classes (background included) of one minus the smoothed overlap
// ratio. Class sums run over the whole batch.
template <typename S>
TensorT<S> soft_dice(const TensorT<S>& probs, const IntGrid& mask, double eps) {
    detail::validate_logits_mask("soft_dice", probs, mask);
    if (eps <= 0) throw ConfigError("soft_dice: eps must be positive");
    const int N = probs.size(0), C = probs.size(1), H = probs.size(2), W = probs.size(3);
    const int64_t plane = static_cast<int64_t>(H) * W;

    std::vector<double> inter(static_cast<size_t>(C), 0.0), psum(static_cast<size_t>(C), 0.0),
        gsum(static_cast<size_t>(C), 0.0);
    const S* p = probs.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* pc = p + (static_cast<int64_t>(n) * C + c) * plane;
            const int32_t* g = mask.v.data() + static_cast<int64_t>(n) * plane;
            double i_acc = 0, p_acc = 0;
            for (int64_t i = 0; i < plane; ++i) {
                p_acc += static_cast<double>(pc[i]);
                if (g[i] == c) i_acc += static_cast<double>(pc[i]);
            }
            inter[static_cast<size_t>(c)] += i_acc;
            psum[static_cast<size_t>(c)] += p_acc;
        }
    for (int64_t i = 0; i < static_cast<int64_t>(mask.v.size()); ++i)
        gsum[static_cast<size_t>(mask.v[static_cast<size_t>(i)])] += 1.0;

    double loss = 0;
    std::vector<double> denom(static_cast<size_t>(C)), numer(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        numer[static_cast<size_t>(c)] = 2.0 * inter[static_cast<size_t>(c)] + eps;
        denom[static_cast<size_t>(c)] = psum[static_cast<size_t>(c)] + gsum[static_cast<size_t>(c)] + eps;
        loss += 1.0 - numer[static_cast<size_t>(c)] / denom[static_cast<size_t>(c)];
    }
    loss /= C;

    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(loss));
    check_finite("soft_dice", out);
    if (detail::tracing<S>({&probs})) {
        IntGrid mask_copy = mask;
        TapeT<S>::active()->record(
            "soft_dice", {probs}, out,
            [probs, out, mask_copy = std::move(mask_copy), numer, denom, N, C, plane]() mutable {
                if (!probs.requires_grad()) return;
                const S go = out.grad()[0];
                S* gp = probs.grad();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double d = denom[static_cast<size_t>(c)];
                        const double nu = numer[static_cast<size_t>(c)];
                        const int32_t* g = mask_copy.v.data() + static_cast<int64_t>(n) * plane;
                        S* gpc = gp + (static_cast<int64_t>(n) * C + c) * plane;
                        for (int64_t i = 0; i < plane; ++i) {
                            const double two_g = g[i] == c ? 2.0 : 0.0;
                            gpc[i] += go * static_cast<S>(-(two_g * d - nu) / (d * d) / C);
                        }
                    }
            });
    }
    return out;
}

template <typename S>
TensorT<S> dice_loss(const TensorT<S>& logits, const IntGrid& mask, double eps) {
    return soft_dice(softmax(logits, 1), mask, eps);
}

// Mean over all pixels of the negative log softmax probability at the
// target label, computed through a max-shifted log-sum-exp.
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const IntGrid& mask) {
    detail::validate_logits_mask("cross_entropy", logits, mask);
    const int N = logits.size(0), C = logits.size(1), H = logits.size(2), W = logits.size(3);
    const int64_t plane = static_cast<int64_t>(H) * W;
    const int64_t pixels = static_cast<int64_t>(N) * plane;

    // per-pixel softmax saved for the backward pass
    std::vector<S> soft(static_cast<size_t>(logits.numel()));
    const S* l = logits.data();
    double loss = 0;
    for (int n = 0; n < N; ++n) {
        const int64_t base = static_cast<int64_t>(n) * C * plane;
        const int32_t* g = mask.v.data() + static_cast<int64_t>(n) * plane;
        for (int64_t i = 0; i < plane; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) m = std::max(m, static_cast<double>(l[base + c * plane + i]));
            double z = 0;
            for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(l[base + c * plane + i]) - m);
            for (int c = 0; c < C; ++c)
                soft[static_cast<size_t>(base + c * plane + i)] =
                    static_cast<S>(std::exp(static_cast<double>(l[base + c * plane + i]) - m) / z);
            loss += m + std::log(z) - static_cast<double>(l[base + g[i] * plane + i]);
        }
    }
    loss /= static_cast<double>(pixels);

    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(loss));
    check_finite("cross_entropy", out);
    if (detail::tracing<S>({&logits})) {
        IntGrid mask_copy = mask;
        TapeT<S>::active()->record(
            "cross_entropy", {logits}, out,
            [logits, out, mask_copy = std::move(mask_copy), soft = std::move(soft), N, C, plane,
             pixels]() mutable {
                if (!logits.requires_grad()) return;
                const S go = out.grad()[0];
                S* gl = logits.grad();
                for (int n = 0; n < N; ++n) {
                    const int64_t base = static_cast<int64_t>(n) * C * plane;
                    const int32_t* g = mask_copy.v.data() + static_cast<int64_t>(n) * plane;
                    for (int64_t i = 0; i < plane; ++i)
                        for (int c = 0; c < C; ++c) {
                            const S onehot = g[i] == c ? static_cast<S>(1) : static_cast<S>(0);
                            gl[base + c * plane + i] +=
                                go * (soft[static_cast<size_t>(base + c * plane + i)] - onehot) /
                                static_cast<S>(pixels);
                        }
                }
            });
    }
    return out;
}

template <typename S>
struct LossPartsT {
    TensorT<S> dice, ce, combined;
};

template <typename S>
LossPartsT<S> combined_loss(const TensorT<S>& logits, const IntGrid& mask, const LossConfig& cfg = {}) {
    cfg.validate();
    LossPartsT<S> parts;
    parts.dice = dice_loss(logits, mask, cfg.dice_eps);
    parts.ce = cross_entropy(logits, mask);
    parts.combined = add(scale(parts.dice, static_cast<S>(cfg.lambda_dice)),
                         scale(parts.ce, static_cast<S>(cfg.lambda_ce)));
    return parts;
}

// Nearest-neighbor label downsampling by an integer factor: output pixel
// (y, x) takes the label at (y*k, x*k), the floor convention.
inline IntGrid downsample_mask_nearest(const IntGrid& mask, int factor) {
    if (factor < 1) throw ConfigError("downsample_mask_nearest: factor must be >= 1");
    if (mask.shape.size() != 3)
        throw ShapeError("downsample_mask_nearest: mask must be [n, h, w], got " + shape_str(mask.shape));
    const int N = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
    if (H % factor != 0 || W % factor != 0)
        throw ShapeError("downsample_mask_nearest: " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by " + std::to_string(factor));
    IntGrid out;
    out.shape = {N, H / factor, W / factor};
    out.v.resize(static_cast<size_t>(N) * (H / factor) * (W / factor));
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H / factor; ++y)
            for (int x = 0; x < W / factor; ++x)
                out.at(n, y, x) = mask.at(n, y * factor, x * factor);
    return out;
}

template <typename S>
TensorT<S> weighted_total(const std::array<double, 3>& alpha, const TensorT<S>& full,
                          const TensorT<S>& fine, const TensorT<S>& coarse) {
    TensorT<S> total = scale(full, static_cast<S>(alpha[0]));
    total = add(total, scale(fine, static_cast<S>(alpha[1])));
    return add(total, scale(coarse, static_cast<S>(alpha[2])));
}

// Training loss for one batch of model outputs. Without deep supervision the
// total is the full-resolution combined loss alone; with it, the three
// scales are weighted by alpha and each aux target is the nearest-neighbor
// downsampled mask at that head's resolution.
template <typename S>
TensorT<S> deep_supervised_loss(const ModelOutputT<S>& out, const IntGrid& mask, bool deep_supervision,
                                const LossConfig& cfg = {}) {
    cfg.validate();
    if (!out.logits.defined()) throw ContractError("deep_supervised_loss: missing main logits");
    if (!deep_supervision) {
        if (out.aux_fine.defined() || out.aux_coarse.defined())
            throw ContractError("deep_supervised_loss: aux outputs present with deep supervision off");
        return combined_loss(out.logits, mask, cfg).combined;
    }
    if (!out.aux_fine.defined() || !out.aux_coarse.defined())
        throw ContractError("deep_supervised_loss: deep supervision needs both aux outputs");
    const int H = out.logits.size(2);
    const IntGrid fine_mask = downsample_mask_nearest(mask, H / out.aux_fine.size(2));
    const IntGrid coarse_mask = downsample_mask_nearest(mask, H / out.aux_coarse.size(2));
    return weighted_total(cfg.alpha, combined_loss(out.logits, mask, cfg).combined,
                          combined_loss(out.aux_fine, fine_mask, cfg).combined,
                          combined_loss(out.aux_coarse, coarse_mask, cfg).combined);
}

}  // namespace unet22
