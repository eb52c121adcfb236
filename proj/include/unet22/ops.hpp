#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "unet22/tape.hpp"
#include "unet22/tensor.hpp"

// Differentiable primitives. Each op computes its forward result into a fresh
// tensor and, when a tape is active and some input wants gradients, records a
// closure implementing the exact adjoint. Gradients accumulate (+=) so shared
// subexpressions work without extra bookkeeping.

namespace unet22 {

namespace detail {

template <typename S>
inline void require_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape("add", a, b);
    TensorT<S> out(a.shape());
    const S* ap = a.data();
    const S* bp = b.data();
    S* op_ = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] + bp[i];
    check_finite("add", out);
    if (detail::tracing<S>({&a, &b})) {
        TapeT<S>::active()->record("add", {a, b}, out, [a, b, out]() mutable {
            const S* g = out.grad();
            const int64_t m = out.numel();
            if (a.requires_grad()) {
                S* ga = a.grad();
                for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape("mul", a, b);
    TensorT<S> out(a.shape());
    const S* ap = a.data();
    const S* bp = b.data();
    S* op_ = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] * bp[i];
    check_finite("mul", out);
    if (detail::tracing<S>({&a, &b})) {
        TapeT<S>::active()->record("mul", {a, b}, out, [a, b, out]() mutable {
            const S* g = out.grad();
            const int64_t m = out.numel();
            if (a.requires_grad()) {
                S* ga = a.grad();
                const S* bp2 = b.data();
                for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * bp2[i];
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                const S* ap2 = a.data();
                for (int64_t i = 0; i < m; ++i) gb[i] += g[i] * ap2[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    TensorT<S> out(a.shape());
    const S* ap = a.data();
    S* op_ = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] * c;
    check_finite("scale", out);
    if (detail::tracing<S>({&a})) {
        TapeT<S>::active()->record("scale", {a}, out, [a, out, c]() mutable {
            if (!a.requires_grad()) return;
            const S* g = out.grad();
            S* ga = a.grad();
            const int64_t m = out.numel();
            for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& a) {
    S acc = S(0);
    const S* ap = a.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += ap[i];
    TensorT<S> out = TensorT<S>::scalar(acc);
    check_finite("sum_all", out);
    if (detail::tracing<S>({&a})) {
        TapeT<S>::active()->record("sum_all", {a}, out, [a, out]() mutable {
            if (!a.requires_grad()) return;
            const S g = out.grad()[0];
            S* ga = a.grad();
            const int64_t m = a.numel();
            for (int64_t i = 0; i < m; ++i) ga[i] += g;
        });
    }
    return out;
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& a) {
    S acc = S(0);
    const S* ap = a.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += ap[i];
    TensorT<S> out = TensorT<S>::scalar(acc / static_cast<S>(n));
    check_finite("mean_all", out);
    if (detail::tracing<S>({&a})) {
        TapeT<S>::active()->record("mean_all", {a}, out, [a, out]() mutable {
            if (!a.requires_grad()) return;
            const S g = out.grad()[0] / static_cast<S>(a.numel());
            S* ga = a.grad();
            const int64_t m = a.numel();
            for (int64_t i = 0; i < m; ++i) ga[i] += g;
        });
    }
    return out;
}

// y[..., o] = sum_i x[..., i] * w[o, i] + b[o]. Leading axes fold into rows.
template <typename S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
    if (x.rank() < 1) throw ShapeError("linear: input must have at least one axis");
    if (w.rank() != 2) throw ShapeError("linear: weight must be [out, in], got " + shape_str(w.shape()));
    const int in = x.size(x.rank() - 1);
    const int out_dim = w.size(0);
    if (w.size(1) != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not conform to weight " +
                         shape_str(w.shape()));
    if (b.rank() != 1 || b.size(0) != out_dim)
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match out=" +
                         std::to_string(out_dim));
    std::vector<int> oshape = x.shape();
    oshape.back() = out_dim;
    TensorT<S> out(oshape);
    const int64_t rows = x.numel() / in;
    const S* xp = x.data();
    const S* wp = w.data();
    const S* bp = b.data();
    S* yp = out.data();
    for (int64_t m = 0; m < rows; ++m) {
        const S* xr = xp + m * in;
        S* yr = yp + m * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const S* wr = wp + static_cast<int64_t>(o) * in;
            S acc = bp[o];
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }
    check_finite("linear", out);
    if (detail::tracing<S>({&x, &w, &b})) {
        TapeT<S>::active()->record("linear", {x, w, b}, out, [x, w, b, out, rows, in, out_dim]() mutable {
            const S* gy = out.grad();
            if (x.requires_grad()) {
                S* gx = x.grad();
                const S* wp2 = w.data();
                for (int64_t m = 0; m < rows; ++m) {
                    const S* gyr = gy + m * out_dim;
                    S* gxr = gx + m * in;
                    for (int o = 0; o < out_dim; ++o) {
                        const S g = gyr[o];
                        const S* wr = wp2 + static_cast<int64_t>(o) * in;
                        for (int i = 0; i < in; ++i) gxr[i] += g * wr[i];
                    }
                }
            }
            if (w.requires_grad()) {
                S* gw = w.grad();
                const S* xp2 = x.data();
                for (int64_t m = 0; m < rows; ++m) {
                    const S* gyr = gy + m * out_dim;
                    const S* xr = xp2 + m * in;
                    for (int o = 0; o < out_dim; ++o) {
                        const S g = gyr[o];
                        S* gwr = gw + static_cast<int64_t>(o) * in;
                        for (int i = 0; i < in; ++i) gwr[i] += g * xr[i];
                    }
                }
            }
            if (b.requires_grad()) {
                S* gb = b.grad();
                for (int64_t m = 0; m < rows; ++m) {
                    const S* gyr = gy + m * out_dim;
                    for (int o = 0; o < out_dim; ++o) gb[o] += gyr[o];
                }
            }
        });
    }
    return out;
}

// Standard cross-correlation conv. Kernels are square; even kernels are only
// allowed in the non-overlapping stride==K configuration.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride,
                  int pad) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError("conv2d: weight must be [co, ci, k, k], got " + shape_str(w.shape()));
    const int N = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3);
    const int Co = w.size(0), K = w.size(2);
    if (w.size(1) != Ci)
        throw ShapeError("conv2d: weight expects " + std::to_string(w.size(1)) +
                         " input channels, input has " + std::to_string(Ci));
    if (w.size(3) != K) throw ShapeError("conv2d: kernel must be square, got " + shape_str(w.shape()));
    if (b.rank() != 1 || b.size(0) != Co)
        throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match co=" +
                         std::to_string(Co));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
    if (K % 2 == 0 && stride != K)
        throw ConfigError("conv2d: even kernel " + std::to_string(K) +
                          " requires stride == kernel");
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    if (H + 2 * pad < K || W + 2 * pad < K)
        throw ShapeError("conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                         shape_str(x.shape()));
    TensorT<S> out({N, Co, Ho, Wo});
    const S* xp = x.data();
    const S* wp = w.data();
    const S* bp = b.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    S acc = bp[co];
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kh = 0; kh < K; ++kh) {
                            const int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= H) continue;
                            const int64_t xrow = ((static_cast<int64_t>(n) * Ci + ci) * H + ih) * W;
                            const int64_t wrow =
                                ((static_cast<int64_t>(co) * Ci + ci) * K + kh) * K;
                            for (int kw = 0; kw < K; ++kw) {
                                const int iw = ow * stride - pad + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += xp[xrow + iw] * wp[wrow + kw];
                            }
                        }
                    yp[((static_cast<int64_t>(n) * Co + co) * Ho + oh) * Wo + ow] = acc;
                }
    check_finite("conv2d", out);
    if (detail::tracing<S>({&x, &w, &b})) {
        TapeT<S>::active()->record(
            "conv2d", {x, w, b}, out,
            [x, w, b, out, N, Ci, H, W, Co, K, Ho, Wo, stride, pad]() mutable {
                const S* gy = out.grad();
                const bool need_x = x.requires_grad();
                const bool need_w = w.requires_grad();
                const bool need_b = b.requires_grad();
                S* gx = need_x ? x.grad() : nullptr;
                S* gw = need_w ? w.grad() : nullptr;
                S* gb = need_b ? b.grad() : nullptr;
                const S* xp2 = x.data();
                const S* wp2 = w.data();
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co)
                        for (int oh = 0; oh < Ho; ++oh)
                            for (int ow = 0; ow < Wo; ++ow) {
                                const S g =
                                    gy[((static_cast<int64_t>(n) * Co + co) * Ho + oh) * Wo + ow];
                                if (need_b) gb[co] += g;
                                if (!need_x && !need_w) continue;
                                for (int ci = 0; ci < Ci; ++ci)
                                    for (int kh = 0; kh < K; ++kh) {
                                        const int ih = oh * stride - pad + kh;
                                        if (ih < 0 || ih >= H) continue;
                                        const int64_t xrow =
                                            ((static_cast<int64_t>(n) * Ci + ci) * H + ih) * W;
                                        const int64_t wrow =
                                            ((static_cast<int64_t>(co) * Ci + ci) * K + kh) * K;
                                        for (int kw = 0; kw < K; ++kw) {
                                            const int iw = ow * stride - pad + kw;
                                            if (iw < 0 || iw >= W) continue;
                                            if (need_x) gx[xrow + iw] += g * wp2[wrow + kw];
                                            if (need_w) gw[wrow + kw] += g * xp2[xrow + iw];
                                        }
                                    }
                            }
            });
    }
    return out;
}

// Depth-wise conv, one k x k filter per channel, stride 1. Padding must keep
// the spatial shape, so only pad == (k-1)/2 is accepted.
template <typename S>
TensorT<S> dwconv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int pad) {
    if (x.rank() != 4) throw ShapeError("dwconv2d: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (w.rank() != 3) throw ShapeError("dwconv2d: weight must be [c, k, k], got " + shape_str(w.shape()));
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int K = w.size(1);
    if (w.size(0) != C)
        throw ShapeError("dwconv2d: weight has " + std::to_string(w.size(0)) +
                         " channels, input has " + std::to_string(C));
    if (w.size(2) != K) throw ShapeError("dwconv2d: kernel must be square, got " + shape_str(w.shape()));
    if (K % 2 == 0) throw ConfigError("dwconv2d: kernel must be odd, got " + std::to_string(K));
    if (b.rank() != 1 || b.size(0) != C)
        throw ShapeError("dwconv2d: bias shape " + shape_str(b.shape()) + " does not match c=" +
                         std::to_string(C));
    if (pad != (K - 1) / 2)
        throw ConfigError("dwconv2d: pad " + std::to_string(pad) + " must be (k-1)/2 = " +
                          std::to_string((K - 1) / 2));
    TensorT<S> out({N, C, H, W});
    const S* xp = x.data();
    const S* wp = w.data();
    const S* bp = b.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int64_t plane = (static_cast<int64_t>(n) * C + c) * H;
            const S* wc = wp + static_cast<int64_t>(c) * K * K;
            for (int oh = 0; oh < H; ++oh)
                for (int ow = 0; ow < W; ++ow) {
                    S acc = bp[c];
                    for (int kh = 0; kh < K; ++kh) {
                        const int ih = oh - pad + kh;
                        if (ih < 0 || ih >= H) continue;
                        const S* xr = xp + (plane + ih) * W;
                        const S* wr = wc + static_cast<int64_t>(kh) * K;
                        for (int kw = 0; kw < K; ++kw) {
                            const int iw = ow - pad + kw;
                            if (iw < 0 || iw >= W) continue;
                            acc += xr[iw] * wr[kw];
                        }
                    }
                    yp[(plane + oh) * W + ow] = acc;
                }
        }
    check_finite("dwconv2d", out);
    if (detail::tracing<S>({&x, &w, &b})) {
        TapeT<S>::active()->record(
            "dwconv2d", {x, w, b}, out, [x, w, b, out, N, C, H, W, K, pad]() mutable {
                const S* gy = out.grad();
                const bool need_x = x.requires_grad();
                const bool need_w = w.requires_grad();
                const bool need_b = b.requires_grad();
                S* gx = need_x ? x.grad() : nullptr;
                S* gw = need_w ? w.grad() : nullptr;
                S* gb = need_b ? b.grad() : nullptr;
                const S* xp2 = x.data();
                const S* wp2 = w.data();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const int64_t plane = (static_cast<int64_t>(n) * C + c) * H;
                        const S* wc = wp2 + static_cast<int64_t>(c) * K * K;
                        S* gwc = need_w ? gw + static_cast<int64_t>(c) * K * K : nullptr;
                        for (int oh = 0; oh < H; ++oh)
                            for (int ow = 0; ow < W; ++ow) {
                                const S g = gy[(plane + oh) * W + ow];
                                if (need_b) gb[c] += g;
                                if (!need_x && !need_w) continue;
                                for (int kh = 0; kh < K; ++kh) {
                                    const int ih = oh - pad + kh;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int kw = 0; kw < K; ++kw) {
                                        const int iw = ow - pad + kw;
                                        if (iw < 0 || iw >= W) continue;
                                        if (need_x)
                                            gx[(plane + ih) * W + iw] += g * wc[kh * K + kw];
                                        if (need_w)
                                            gwc[kh * K + kw] += g * xp2[(plane + ih) * W + iw];
                                    }
                                }
                            }
                    }
            });
    }
    return out;
}

// Transposed conv restricted to the non-overlapping case kernel == stride,
// which is the only form the decoder path uses. Output is [n, co, h*k, w*k].
// Bias, when a layer has one, is applied separately via add_channel_bias.
template <typename S>
TensorT<S> deconv2d(const TensorT<S>& x, const TensorT<S>& w, int stride) {
    if (x.rank() != 4) throw ShapeError("deconv2d: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (w.rank() != 4) throw ShapeError("deconv2d: weight must be [ci, co, k, k], got " + shape_str(w.shape()));
    const int N = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3);
    const int Co = w.size(1), K = w.size(2);
    if (w.size(0) != Ci)
        throw ShapeError("deconv2d: weight expects " + std::to_string(w.size(0)) +
                         " input channels, input has " + std::to_string(Ci));
    if (w.size(3) != K) throw ShapeError("deconv2d: kernel must be square, got " + shape_str(w.shape()));
    if (stride != K)
        throw ConfigError("deconv2d: only kernel == stride is supported, got k=" +
                          std::to_string(K) + " stride=" + std::to_string(stride));
    const int Ho = H * K, Wo = W * K;
    TensorT<S> out({N, Co, Ho, Wo});
    const S* xp = x.data();
    const S* wp = w.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh / K, kh = oh % K;
                for (int ow = 0; ow < Wo; ++ow) {
                    const int iw = ow / K, kw = ow % K;
                    S acc = S(0);
                    for (int ci = 0; ci < Ci; ++ci)
                        acc += xp[((static_cast<int64_t>(n) * Ci + ci) * H + ih) * W + iw] *
                               wp[((static_cast<int64_t>(ci) * Co + co) * K + kh) * K + kw];
                    yp[((static_cast<int64_t>(n) * Co + co) * Ho + oh) * Wo + ow] = acc;
                }
            }
    check_finite("deconv2d", out);
    if (detail::tracing<S>({&x, &w})) {
        TapeT<S>::active()->record(
            "deconv2d", {x, w}, out, [x, w, out, N, Ci, H, W, Co, K, Ho, Wo]() mutable {
                const S* gy = out.grad();
                const bool need_x = x.requires_grad();
                const bool need_w = w.requires_grad();
                S* gx = need_x ? x.grad() : nullptr;
                S* gw = need_w ? w.grad() : nullptr;
                const S* xp2 = x.data();
                const S* wp2 = w.data();
                for (int n = 0; n < N; ++n)
                    for (int co = 0; co < Co; ++co)
                        for (int oh = 0; oh < Ho; ++oh) {
                            const int ih = oh / K, kh = oh % K;
                            for (int ow = 0; ow < Wo; ++ow) {
                                const int iw = ow / K, kw = ow % K;
                                const S g =
                                    gy[((static_cast<int64_t>(n) * Co + co) * Ho + oh) * Wo + ow];
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const int64_t xi =
                                        ((static_cast<int64_t>(n) * Ci + ci) * H + ih) * W + iw;
                                    const int64_t wi =
                                        ((static_cast<int64_t>(ci) * Co + co) * K + kh) * K + kw;
                                    if (need_x) gx[xi] += g * wp2[wi];
                                    if (need_w) gw[wi] += g * xp2[xi];
                                }
                            }
                        }
            });
    }
    return out;
}

template <typename S>
TensorT<S> add_channel_bias(const TensorT<S>& x, const TensorT<S>& b) {
    if (x.rank() != 4)
        throw ShapeError("add_channel_bias: input must be [n, c, h, w], got " + shape_str(x.shape()));
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    if (b.rank() != 1 || b.size(0) != C)
        throw ShapeError("add_channel_bias: bias shape " + shape_str(b.shape()) +
                         " does not match c=" + std::to_string(C));
    TensorT<S> out(x.shape());
    const S* xp = x.data();
    const S* bp = b.data();
    S* yp = out.data();
    const int64_t hw = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
            const S bias = bp[c];
            for (int64_t i = 0; i < hw; ++i) yp[base + i] = xp[base + i] + bias;
        }
    check_finite("add_channel_bias", out);
    if (detail::tracing<S>({&x, &b})) {
        TapeT<S>::active()->record("add_channel_bias", {x, b}, out,
                                   [x, b, out, N, C, hw]() mutable {
                                       const S* gy = out.grad();
                                       if (x.requires_grad()) {
                                           S* gx = x.grad();
                                           const int64_t m = x.numel();
                                           for (int64_t i = 0; i < m; ++i) gx[i] += gy[i];
                                       }
                                       if (b.requires_grad()) {
                                           S* gb = b.grad();
                                           for (int n = 0; n < N; ++n)
                                               for (int c = 0; c < C; ++c) {
                                                   const int64_t base =
                                                       (static_cast<int64_t>(n) * C + c) * hw;
                                                   S acc = S(0);
                                                   for (int64_t i = 0; i < hw; ++i)
                                                       acc += gy[base + i];
                                                   gb[c] += acc;
                                               }
                                       }
                                   });
    }
    return out;
}

// Normalizes over the last axis with biased variance, then applies the affine
// pair. Saves xhat and 1/sqrt(var + eps) for the adjoint.
template <typename S>
TensorT<S> layernorm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                     S eps = S(1e-5)) {
    if (x.rank() < 1) throw ShapeError("layernorm: input must have at least one axis");
    if (!(eps > S(0))) throw ConfigError("layernorm: eps must be > 0");
    const int D = x.size(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.size(0) != D)
        throw ShapeError("layernorm: gamma shape " + shape_str(gamma.shape()) +
                         " does not match feature dim " + std::to_string(D));
    if (beta.rank() != 1 || beta.size(0) != D)
        throw ShapeError("layernorm: beta shape " + shape_str(beta.shape()) +
                         " does not match feature dim " + std::to_string(D));
    const int64_t rows = x.numel() / D;
    TensorT<S> out(x.shape());
    std::vector<S> xhat(static_cast<size_t>(x.numel()));
    std::vector<S> inv_std(static_cast<size_t>(rows));
    const S* xp = x.data();
    const S* gp = gamma.data();
    const S* bp = beta.data();
    S* yp = out.data();
    for (int64_t m = 0; m < rows; ++m) {
        const S* xr = xp + m * D;
        S mean = S(0);
        for (int d = 0; d < D; ++d) mean += xr[d];
        mean /= static_cast<S>(D);
        S var = S(0);
        for (int d = 0; d < D; ++d) {
            const S c = xr[d] - mean;
            var += c * c;
        }
        var /= static_cast<S>(D);
        const S inv = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(m)] = inv;
        S* hr = xhat.data() + m * D;
        S* yr = yp + m * D;
        for (int d = 0; d < D; ++d) {
            hr[d] = (xr[d] - mean) * inv;
            yr[d] = gp[d] * hr[d] + bp[d];
        }
    }
    check_finite("layernorm", out);
    if (detail::tracing<S>({&x, &gamma, &beta})) {
        TapeT<S>::active()->record(
            "layernorm", {x, gamma, beta}, out,
            [x, gamma, beta, out, rows, D, xhat = std::move(xhat),
             inv_std = std::move(inv_std)]() mutable {
                const S* gy = out.grad();
                const S* gp2 = gamma.data();
                if (gamma.requires_grad() || beta.requires_grad()) {
                    S* gg = gamma.requires_grad() ? gamma.grad() : nullptr;
                    S* gb = beta.requires_grad() ? beta.grad() : nullptr;
                    for (int64_t m = 0; m < rows; ++m) {
                        const S* gyr = gy + m * D;
                        const S* hr = xhat.data() + m * D;
                        for (int d = 0; d < D; ++d) {
                            if (gg) gg[d] += gyr[d] * hr[d];
                            if (gb) gb[d] += gyr[d];
                        }
                    }
                }
                if (x.requires_grad()) {
                    S* gx = x.grad();
                    for (int64_t m = 0; m < rows; ++m) {
                        const S* gyr = gy + m * D;
                        const S* hr = xhat.data() + m * D;
                        const S inv = inv_std[static_cast<size_t>(m)];
                        S mean_dh = S(0), mean_dh_h = S(0);
                        for (int d = 0; d < D; ++d) {
                            const S dh = gyr[d] * gp2[d];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[d];
                        }
                        mean_dh /= static_cast<S>(D);
                        mean_dh_h /= static_cast<S>(D);
                        S* gxr = gx + m * D;
                        for (int d = 0; d < D; ++d) {
                            const S dh = gyr[d] * gp2[d];
                            gxr[d] += inv * (dh - mean_dh - hr[d] * mean_dh_h);
                        }
                    }
                }
            });
    }
    return out;
}

// x * Phi(x) with the exact normal CDF.
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    const S* xp = x.data();
    S* yp = out.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(xp[i]);
        yp[i] = static_cast<S>(v * 0.5 * std::erfc(-v * 0.7071067811865475244));
    }
    check_finite("gelu", out);
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("gelu", {x}, out, [x, out]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            const S* xp2 = x.data();
            S* gx = x.grad();
            const int64_t m = x.numel();
            for (int64_t i = 0; i < m; ++i) {
                const double v = static_cast<double>(xp2[i]);
                const double cdf = 0.5 * std::erfc(-v * 0.7071067811865475244);
                const double pdf = 0.3989422804014326779 * std::exp(-0.5 * v * v);
                gx[i] += gy[i] * static_cast<S>(cdf + v * pdf);
            }
        });
    }
    return out;
}

// Max-subtracted softmax along `axis`.
template <typename S>
TensorT<S> softmax(const TensorT<S>& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(x.shape()));
    const int D = x.size(axis);
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= x.size(a);
    for (int a = axis + 1; a < x.rank(); ++a) inner *= x.size(a);
    TensorT<S> out(x.shape());
    const S* xp = x.data();
    S* yp = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * D * inner + in;
            S mx = xp[base];
            for (int d = 1; d < D; ++d) mx = std::max(mx, xp[base + d * inner]);
            S denom = S(0);
            for (int d = 0; d < D; ++d) {
                const S e = std::exp(xp[base + d * inner] - mx);
                yp[base + d * inner] = e;
                denom += e;
            }
            const S inv = S(1) / denom;
            for (int d = 0; d < D; ++d) yp[base + d * inner] *= inv;
        }
    check_finite("softmax", out);
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("softmax", {x}, out, [x, out, outer, inner, D]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            const S* yp2 = out.data();
            S* gx = x.grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * D * inner + in;
                    S dot = S(0);
                    for (int d = 0; d < D; ++d) {
                        const int64_t k = base + d * inner;
                        dot += yp2[k] * gy[k];
                    }
                    for (int d = 0; d < D; ++d) {
                        const int64_t k = base + d * inner;
                        gx[k] += yp2[k] * (gy[k] - dot);
                    }
                }
        });
    }
    return out;
}

// [n, c, h, w] -> [n, h*w, c]
template <typename S>
TensorT<S> nchw_to_tokens(const TensorT<S>& x) {
    if (x.rank() != 4)
        throw ShapeError("nchw_to_tokens: input must be [n, c, h, w], got " + shape_str(x.shape()));
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    TensorT<S> out({N, H * W, C});
    const S* xp = x.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* src = xp + (static_cast<int64_t>(n) * C + c) * hw;
            S* dst = yp + static_cast<int64_t>(n) * hw * C + c;
            for (int64_t t = 0; t < hw; ++t) dst[t * C] = src[t];
        }
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("nchw_to_tokens", {x}, out, [x, out, N, C, hw]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            S* gx = x.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    S* dst = gx + (static_cast<int64_t>(n) * C + c) * hw;
                    const S* src = gy + static_cast<int64_t>(n) * hw * C + c;
                    for (int64_t t = 0; t < hw; ++t) dst[t] += src[t * C];
                }
        });
    }
    return out;
}

// [n, h*w, c] -> [n, c, h, w]
template <typename S>
TensorT<S> tokens_to_nchw(const TensorT<S>& x, int h, int w) {
    if (x.rank() != 3)
        throw ShapeError("tokens_to_nchw: input must be [n, t, c], got " + shape_str(x.shape()));
    const int N = x.size(0), T = x.size(1), C = x.size(2);
    if (h <= 0 || w <= 0 || h * w != T)
        throw ShapeError("tokens_to_nchw: " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not tile " + std::to_string(T) + " tokens");
    const int64_t hw = T;
    TensorT<S> out({N, C, h, w});
    const S* xp = x.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const S* src = xp + static_cast<int64_t>(n) * hw * C + c;
            S* dst = yp + (static_cast<int64_t>(n) * C + c) * hw;
            for (int64_t t = 0; t < hw; ++t) dst[t] = src[t * C];
        }
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("tokens_to_nchw", {x}, out, [x, out, N, C, hw]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            S* gx = x.grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const S* src = gy + (static_cast<int64_t>(n) * C + c) * hw;
                    S* dst = gx + static_cast<int64_t>(n) * hw * C + c;
                    for (int64_t t = 0; t < hw; ++t) dst[t * C] += src[t];
                }
        });
    }
    return out;
}

// Batched matmul. a is [g, m, k]; b is [g, k, n], or [g, n, k] with transb.
template <typename S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b, bool transb = false) {
    if (a.rank() != 3 || b.rank() != 3)
        throw ShapeError("bmm: both operands must be rank 3, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int G = a.size(0), M = a.size(1), K = a.size(2);
    if (b.size(0) != G)
        throw ShapeError("bmm: batch mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int Kb = transb ? b.size(2) : b.size(1);
    const int Nn = transb ? b.size(1) : b.size(2);
    if (Kb != K)
        throw ShapeError("bmm: inner dim mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    TensorT<S> out({G, M, Nn});
    const S* ap = a.data();
    const S* bp = b.data();
    S* yp = out.data();
    for (int g = 0; g < G; ++g) {
        const S* ag = ap + static_cast<int64_t>(g) * M * K;
        const S* bg = bp + static_cast<int64_t>(g) * K * Nn;
        S* yg = yp + static_cast<int64_t>(g) * M * Nn;
        for (int m = 0; m < M; ++m)
            for (int nn = 0; nn < Nn; ++nn) {
                S acc = S(0);
                if (transb) {
                    const S* br = bg + static_cast<int64_t>(nn) * K;
                    const S* ar = ag + static_cast<int64_t>(m) * K;
                    for (int k = 0; k < K; ++k) acc += ar[k] * br[k];
                } else {
                    const S* ar = ag + static_cast<int64_t>(m) * K;
                    for (int k = 0; k < K; ++k) acc += ar[k] * bg[static_cast<int64_t>(k) * Nn + nn];
                }
                yg[static_cast<int64_t>(m) * Nn + nn] = acc;
            }
    }
    check_finite("bmm", out);
    if (detail::tracing<S>({&a, &b})) {
        TapeT<S>::active()->record("bmm", {a, b}, out, [a, b, out, G, M, K, Nn, transb]() mutable {
            const S* gy = out.grad();
            const S* ap2 = a.data();
            const S* bp2 = b.data();
            const bool need_a = a.requires_grad();
            const bool need_b = b.requires_grad();
            S* ga = need_a ? a.grad() : nullptr;
            S* gb = need_b ? b.grad() : nullptr;
            for (int g = 0; g < G; ++g) {
                const S* gyg = gy + static_cast<int64_t>(g) * M * Nn;
                const S* ag = ap2 + static_cast<int64_t>(g) * M * K;
                const S* bg = bp2 + static_cast<int64_t>(g) * K * Nn;
                S* gag = need_a ? ga + static_cast<int64_t>(g) * M * K : nullptr;
                S* gbg = need_b ? gb + static_cast<int64_t>(g) * K * Nn : nullptr;
                for (int m = 0; m < M; ++m)
                    for (int nn = 0; nn < Nn; ++nn) {
                        const S gv = gyg[static_cast<int64_t>(m) * Nn + nn];
                        if (transb) {
                            for (int k = 0; k < K; ++k) {
                                if (need_a)
                                    gag[static_cast<int64_t>(m) * K + k] +=
                                        gv * bg[static_cast<int64_t>(nn) * K + k];
                                if (need_b)
                                    gbg[static_cast<int64_t>(nn) * K + k] +=
                                        gv * ag[static_cast<int64_t>(m) * K + k];
                            }
                        } else {
                            for (int k = 0; k < K; ++k) {
                                if (need_a)
                                    gag[static_cast<int64_t>(m) * K + k] +=
                                        gv * bg[static_cast<int64_t>(k) * Nn + nn];
                                if (need_b)
                                    gbg[static_cast<int64_t>(k) * Nn + nn] +=
                                        gv * ag[static_cast<int64_t>(m) * K + k];
                            }
                        }
                    }
            }
        });
    }
    return out;
}

// Contiguous slice of the last axis.
template <typename S>
TensorT<S> slice_lastdim(const TensorT<S>& x, int start, int len) {
    if (x.rank() < 1) throw ShapeError("slice_lastdim: input must have at least one axis");
    const int D = x.size(x.rank() - 1);
    if (start < 0 || len <= 0 || start + len > D)
        throw ContractError("slice_lastdim: range [" + std::to_string(start) + ", " +
                            std::to_string(start + len) + ") outside axis of extent " +
                            std::to_string(D));
    std::vector<int> oshape = x.shape();
    oshape.back() = len;
    TensorT<S> out(oshape);
    const int64_t rows = x.numel() / D;
    const S* xp = x.data();
    S* yp = out.data();
    for (int64_t m = 0; m < rows; ++m)
        for (int j = 0; j < len; ++j) yp[m * len + j] = xp[m * D + start + j];
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("slice_lastdim", {x}, out,
                                   [x, out, rows, D, start, len]() mutable {
                                       if (!x.requires_grad()) return;
                                       const S* gy = out.grad();
                                       S* gx = x.grad();
                                       for (int64_t m = 0; m < rows; ++m)
                                           for (int j = 0; j < len; ++j)
                                               gx[m * D + start + j] += gy[m * len + j];
                                   });
    }
    return out;
}

// [b, t, c] -> [b*heads, t, c/heads]. Head h of batch b lands at row b*heads+h.
template <typename S>
TensorT<S> split_heads(const TensorT<S>& x, int heads) {
    if (x.rank() != 3)
        throw ShapeError("split_heads: input must be [b, t, c], got " + shape_str(x.shape()));
    const int B = x.size(0), T = x.size(1), C = x.size(2);
    if (heads < 1 || C % heads != 0)
        throw ConfigError("split_heads: " + std::to_string(heads) + " heads do not divide c=" +
                          std::to_string(C));
    const int d = C / heads;
    TensorT<S> out({B * heads, T, d});
    const S* xp = x.data();
    S* yp = out.data();
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
            for (int t = 0; t < T; ++t) {
                const S* src = xp + (static_cast<int64_t>(b) * T + t) * C + h * d;
                S* dst = yp + ((static_cast<int64_t>(b) * heads + h) * T + t) * static_cast<int64_t>(d);
                for (int k = 0; k < d; ++k) dst[k] = src[k];
            }
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("split_heads", {x}, out, [x, out, B, T, C, heads, d]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            S* gx = x.grad();
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < heads; ++h)
                    for (int t = 0; t < T; ++t) {
                        S* dst = gx + (static_cast<int64_t>(b) * T + t) * C + h * d;
                        const S* src =
                            gy + ((static_cast<int64_t>(b) * heads + h) * T + t) * static_cast<int64_t>(d);
                        for (int k = 0; k < d; ++k) dst[k] += src[k];
                    }
        });
    }
    return out;
}

// [b*heads, t, d] -> [b, t, heads*d]. Inverse of split_heads.
template <typename S>
TensorT<S> merge_heads(const TensorT<S>& x, int heads) {
    if (x.rank() != 3)
        throw ShapeError("merge_heads: input must be [b*heads, t, d], got " + shape_str(x.shape()));
    const int G = x.size(0), T = x.size(1), d = x.size(2);
    if (heads < 1 || G % heads != 0)
        throw ConfigError("merge_heads: " + std::to_string(heads) +
                          " heads do not divide batch=" + std::to_string(G));
    const int B = G / heads, C = heads * d;
    TensorT<S> out({B, T, C});
    const S* xp = x.data();
    S* yp = out.data();
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
            for (int t = 0; t < T; ++t) {
                const S* src =
                    xp + ((static_cast<int64_t>(b) * heads + h) * T + t) * static_cast<int64_t>(d);
                S* dst = yp + (static_cast<int64_t>(b) * T + t) * C + h * d;
                for (int k = 0; k < d; ++k) dst[k] = src[k];
            }
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("merge_heads", {x}, out, [x, out, B, T, C, heads, d]() mutable {
            if (!x.requires_grad()) return;
            const S* gy = out.grad();
            S* gx = x.grad();
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < heads; ++h)
                    for (int t = 0; t < T; ++t) {
                        S* dst =
                            gx + ((static_cast<int64_t>(b) * heads + h) * T + t) * static_cast<int64_t>(d);
                        const S* src = gy + (static_cast<int64_t>(b) * T + t) * C + h * d;
                        for (int k = 0; k < d; ++k) dst[k] += src[k];
                    }
        });
    }
    return out;
}

// Adds the learned positional term to attention scores. scores is
// [groups, t, t] with groups = windows*heads and head index = group % heads;
// table is [num_offsets, heads]; index maps each (query, key) pair to its row
// of the table.
template <typename S>
TensorT<S> add_relative_bias(const TensorT<S>& scores, const TensorT<S>& table,
                             const IntGrid& index, int heads) {
    if (scores.rank() != 3 || scores.size(1) != scores.size(2))
        throw ShapeError("add_relative_bias: scores must be [g, t, t], got " +
                         shape_str(scores.shape()));
    const int G = scores.size(0), T = scores.size(1);
    if (heads < 1 || G % heads != 0)
        throw ConfigError("add_relative_bias: " + std::to_string(heads) +
                          " heads do not divide group count " + std::to_string(G));
    if (table.rank() != 2 || table.size(1) != heads)
        throw ShapeError("add_relative_bias: table must be [offsets, heads], got " +
                         shape_str(table.shape()));
    if (index.rank() != 2 || index.shape[0] != T || index.shape[1] != T)
        throw ShapeError("add_relative_bias: index grid " + shape_str(index.shape) +
                         " does not match t=" + std::to_string(T));
    const int offsets = table.size(0);
    for (int32_t idx : index.v)
        if (idx < 0 || idx >= offsets)
            throw ContractError("add_relative_bias: index entry " + std::to_string(idx) +
                                " outside table of " + std::to_string(offsets) + " offsets");
    TensorT<S> out(scores.shape());
    const S* sp = scores.data();
    const S* tp = table.data();
    S* yp = out.data();
    const int64_t tt = static_cast<int64_t>(T) * T;
    for (int g = 0; g < G; ++g) {
        const int h = g % heads;
        const S* sg = sp + g * tt;
        S* yg = yp + g * tt;
        for (int64_t ij = 0; ij < tt; ++ij)
            yg[ij] = sg[ij] + tp[static_cast<int64_t>(index.v[static_cast<size_t>(ij)]) * heads + h];
    }
    check_finite("add_relative_bias", out);
    if (detail::tracing<S>({&scores, &table})) {
        IntGrid idx_copy = index;
        TapeT<S>::active()->record(
            "add_relative_bias", {scores, table}, out,
            [scores, table, out, idx = std::move(idx_copy), G, heads, tt]() mutable {
                const S* gy = out.grad();
                if (scores.requires_grad()) {
                    S* gs = scores.grad();
                    const int64_t m = scores.numel();
                    for (int64_t i = 0; i < m; ++i) gs[i] += gy[i];
                }
                if (table.requires_grad()) {
                    S* gt = table.grad();
                    for (int g = 0; g < G; ++g) {
                        const int h = g % heads;
                        const S* gyg = gy + g * tt;
                        for (int64_t ij = 0; ij < tt; ++ij)
                            gt[static_cast<int64_t>(idx.v[static_cast<size_t>(ij)]) * heads + h] +=
                                gyg[ij];
                    }
                }
            });
    }
    return out;
}

// Concatenate along the channel axis of [n, c, h, w] tensors.
template <typename S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw ShapeError("concat_channels: inputs must be [n, c, h, w], got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3))
        throw ShapeError("concat_channels: non-channel extents differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int N = a.size(0), Ca = a.size(1), Cb = b.size(1), H = a.size(2), W = a.size(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    TensorT<S> out({N, Ca + Cb, H, W});
    const S* ap = a.data();
    const S* bp = b.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n) {
        S* dst = yp + static_cast<int64_t>(n) * (Ca + Cb) * hw;
        const S* sa = ap + static_cast<int64_t>(n) * Ca * hw;
        const S* sb = bp + static_cast<int64_t>(n) * Cb * hw;
        for (int64_t i = 0; i < Ca * hw; ++i) dst[i] = sa[i];
        for (int64_t i = 0; i < Cb * hw; ++i) dst[Ca * hw + i] = sb[i];
    }
    if (detail::tracing<S>({&a, &b})) {
        TapeT<S>::active()->record(
            "concat_channels", {a, b}, out, [a, b, out, N, Ca, Cb, hw]() mutable {
                const S* gy = out.grad();
                for (int n = 0; n < N; ++n) {
                    const S* src = gy + static_cast<int64_t>(n) * (Ca + Cb) * hw;
                    if (a.requires_grad()) {
                        S* ga = a.grad() + static_cast<int64_t>(n) * Ca * hw;
                        for (int64_t i = 0; i < Ca * hw; ++i) ga[i] += src[i];
                    }
                    if (b.requires_grad()) {
                        S* gb = b.grad() + static_cast<int64_t>(n) * Cb * hw;
                        for (int64_t i = 0; i < Cb * hw; ++i) gb[i] += src[Ca * hw + i];
                    }
                }
            });
    }
    return out;
}

}  // namespace unet22
