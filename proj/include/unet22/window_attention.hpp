#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "unet22/ops.hpp"

// Non-overlapping window multi-head self-attention. Feature maps are tiled
// into w x w windows (zero-padded bottom/right when the map is not a multiple
// of w, cropped again on reverse), attention runs per window, and a learned
// relative position bias is added per head. Windows are never shifted; the
// depth-wise conv branch running in parallel provides cross-window mixing.

namespace unet22 {

struct AttentionConfig {
    int channels = 0;
    int window = 0;
    int heads = 0;
    bool use_relative_bias = true;

    void validate() const {
        if (channels < 1 || window < 1 || heads < 1)
            throw ConfigError("attention config: channels/window/heads must be >= 1");
        if (channels % heads != 0)
            throw ConfigError("attention config: heads " + std::to_string(heads) +
                              " do not divide channels " + std::to_string(channels));
    }
    int head_dim() const { return channels / heads; }
    int tokens_per_window() const { return window * window; }
    int bias_offsets() const { return (2 * window - 1) * (2 * window - 1); }
};

inline int default_heads(int channels) { return std::max(1, channels / 32); }

template <typename S>
struct AttentionParamsT {
    TensorT<S> qkv_weight;   // [3C, C]
    TensorT<S> qkv_bias;     // [3C]
    TensorT<S> proj_weight;  // [C, C]
    TensorT<S> proj_bias;    // [C]
    TensorT<S> bias_table;   // [(2w-1)^2, heads], absent when bias disabled
};

template <typename S>
inline void validate_attention_params(const AttentionConfig& cfg, const AttentionParamsT<S>& p) {
    cfg.validate();
    const int C = cfg.channels;
    auto expect = [](const char* name, const TensorT<S>& t, const std::vector<int>& shape) {
        if (!t.defined() || t.shape() != shape)
            throw ShapeError(std::string("attention param ") + name + " must be " +
                             shape_str(shape) +
                             (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined"));
    };
    expect("qkv.weight", p.qkv_weight, {3 * C, C});
    expect("qkv.bias", p.qkv_bias, {3 * C});
    expect("proj.weight", p.proj_weight, {C, C});
    expect("proj.bias", p.proj_bias, {C});
    if (cfg.use_relative_bias) expect("bias_table", p.bias_table, {cfg.bias_offsets(), cfg.heads});
}

// A feature map tiled into windows: tokens has one row per window, window
// order is row-major over (batch, window-y, window-x), and token t within a
// window is local position (t / w, t % w).
template <typename S>
struct WindowBatchT {
    TensorT<S> tokens;  // [batch_n * num_windows, w*w, C]
    int batch_n = 0;
    int channels = 0;
    int orig_h = 0, orig_w = 0;
    int padded_h = 0, padded_w = 0;
    int window = 0;

    int nwy() const { return padded_h / window; }
    int nwx() const { return padded_w / window; }
    int num_windows() const { return nwy() * nwx(); }
};

template <typename S>
WindowBatchT<S> window_partition(const TensorT<S>& x, int w) {
    if (x.rank() != 4)
        throw ShapeError("window_partition: input must be [n, c, h, w], got " + shape_str(x.shape()));
    if (w < 1) throw ConfigError("window_partition: window must be >= 1");
    const int N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    const int nwy = (H + w - 1) / w, nwx = (W + w - 1) / w;
    const int Hp = nwy * w, Wp = nwx * w;
    const int T = w * w;

    WindowBatchT<S> wb;
    wb.batch_n = N;
    wb.channels = C;
    wb.orig_h = H;
    wb.orig_w = W;
    wb.padded_h = Hp;
    wb.padded_w = Wp;
    wb.window = w;

    TensorT<S> out({N * nwy * nwx, T, C});
    const S* xp = x.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int wy = 0; wy < nwy; ++wy)
            for (int wx = 0; wx < nwx; ++wx) {
                const int64_t row = (static_cast<int64_t>(n) * nwy + wy) * nwx + wx;
                for (int ly = 0; ly < w; ++ly)
                    for (int lx = 0; lx < w; ++lx) {
                        const int h = wy * w + ly, ww = wx * w + lx;
                        S* dst = yp + (row * T + ly * w + lx) * C;
                        if (h >= H || ww >= W) {
                            for (int c = 0; c < C; ++c) dst[c] = S(0);
                        } else {
                            for (int c = 0; c < C; ++c)
                                dst[c] = xp[((static_cast<int64_t>(n) * C + c) * H + h) * W + ww];
                        }
                    }
            }
    if (detail::tracing<S>({&x})) {
        TapeT<S>::active()->record("window_partition", {x}, out,
                                   [x, out, N, C, H, W, nwy, nwx, w, T]() mutable {
                                       if (!x.requires_grad()) return;
                                       const S* gy = out.grad();
                                       S* gx = x.grad();
                                       for (int n = 0; n < N; ++n)
                                           for (int wy = 0; wy < nwy; ++wy)
                                               for (int wx = 0; wx < nwx; ++wx) {
                                                   const int64_t row =
                                                       (static_cast<int64_t>(n) * nwy + wy) * nwx + wx;
                                                   for (int ly = 0; ly < w; ++ly)
                                                       for (int lx = 0; lx < w; ++lx) {
                                                           const int h = wy * w + ly, ww = wx * w + lx;
                                                           if (h >= H || ww >= W) continue;
                                                           const S* src =
                                                               gy + (row * T + ly * w + lx) * C;
                                                           for (int c = 0; c < C; ++c)
                                                               gx[((static_cast<int64_t>(n) * C + c) * H +
                                                                   h) * W + ww] += src[c];
                                                       }
                                               }
                                   });
    }
    wb.tokens = out;
    return wb;
}

// Reassembles the [n, c, h, w] map, dropping padded positions.
template <typename S>
TensorT<S> window_reverse(const WindowBatchT<S>& wb) {
    const TensorT<S>& tok = wb.tokens;
    const int N = wb.batch_n, C = wb.channels, H = wb.orig_h, W = wb.orig_w;
    const int w = wb.window, nwy = wb.nwy(), nwx = wb.nwx(), T = w * w;
    if (tok.rank() != 3 || tok.size(0) != N * nwy * nwx || tok.size(1) != T || tok.size(2) != C)
        throw ShapeError("window_reverse: tokens " + shape_str(tok.shape()) +
                         " do not match window metadata");
    TensorT<S> out({N, C, H, W});
    const S* tp = tok.data();
    S* yp = out.data();
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < H; ++h)
            for (int ww = 0; ww < W; ++ww) {
                const int64_t row = (static_cast<int64_t>(n) * nwy + h / w) * nwx + ww / w;
                const S* src = tp + (row * T + (h % w) * w + (ww % w)) * C;
                for (int c = 0; c < C; ++c)
                    yp[((static_cast<int64_t>(n) * C + c) * H + h) * W + ww] = src[c];
            }
    if (detail::tracing<S>({&tok})) {
        TapeT<S>::active()->record("window_reverse", {tok}, out,
                                   [tok, out, N, C, H, W, w, nwy, nwx, T]() mutable {
                                       if (!tok.requires_grad()) return;
                                       const S* gy = out.grad();
                                       S* gt = tok.grad();
                                       for (int n = 0; n < N; ++n)
                                           for (int h = 0; h < H; ++h)
                                               for (int ww = 0; ww < W; ++ww) {
                                                   const int64_t row =
                                                       (static_cast<int64_t>(n) * nwy + h / w) * nwx +
                                                       ww / w;
                                                   S* dst = gt + (row * T + (h % w) * w + (ww % w)) * C;
                                                   for (int c = 0; c < C; ++c)
                                                       dst[c] +=
                                                           gy[((static_cast<int64_t>(n) * C + c) * H +
                                                               h) * W + ww];
                                               }
                                   });
    }
    return out;
}

// Table row for a (query, key) pair at relative offset (dy, dx) is
// (dy + w - 1) * (2w - 1) + (dx + w - 1).
inline IntGrid relative_bias_index(int w) {
    const int T = w * w;
    IntGrid g({T, T});
    for (int qy = 0; qy < w; ++qy)
        for (int qx = 0; qx < w; ++qx)
            for (int ky = 0; ky < w; ++ky)
                for (int kx = 0; kx < w; ++kx) {
                    const int dy = qy - ky + w - 1;
                    const int dx = qx - kx + w - 1;
                    g.at(qy * w + qx, ky * w + kx) = dy * (2 * w - 1) + dx;
                }
    return g;
}

// Optional capture of the post-softmax attention, [windows*heads, t, t].
template <typename S>
struct AttentionCaptureT {
    TensorT<S> attn;
};

template <typename S>
WindowBatchT<S> window_self_attention(const WindowBatchT<S>& wb, const AttentionParamsT<S>& params,
                                      const AttentionConfig& cfg,
                                      AttentionCaptureT<S>* capture = nullptr) {
    validate_attention_params(cfg, params);
    const int C = cfg.channels, T = cfg.tokens_per_window();
    if (wb.channels != C || wb.window != cfg.window)
        throw ShapeError("window_self_attention: window batch (c=" + std::to_string(wb.channels) +
                         ", w=" + std::to_string(wb.window) + ") does not match config (c=" +
                         std::to_string(C) + ", w=" + std::to_string(cfg.window) + ")");
    if (wb.tokens.rank() != 3 || wb.tokens.size(1) != T || wb.tokens.size(2) != C)
        throw ShapeError("window_self_attention: tokens " + shape_str(wb.tokens.shape()) +
                         " do not match config");

    TensorT<S> qkv = linear(wb.tokens, params.qkv_weight, params.qkv_bias);
    TensorT<S> q = split_heads(slice_lastdim(qkv, 0, C), cfg.heads);
    TensorT<S> k = split_heads(slice_lastdim(qkv, C, C), cfg.heads);
    TensorT<S> v = split_heads(slice_lastdim(qkv, 2 * C, C), cfg.heads);

    TensorT<S> scores = scale(bmm(q, k, true), S(1) / static_cast<S>(std::sqrt(double(cfg.head_dim()))));
    if (cfg.use_relative_bias)
        scores = add_relative_bias(scores, params.bias_table, relative_bias_index(cfg.window),
                                   cfg.heads);
    TensorT<S> attn = softmax(scores, 2);
    if (capture) capture->attn = attn;

    TensorT<S> ctx = merge_heads(bmm(attn, v), cfg.heads);
    WindowBatchT<S> out = wb;
    out.tokens = linear(ctx, params.proj_weight, params.proj_bias);
    return out;
}

// Post-softmax attention matrices, [heads, t, t], for the window containing
// flat position t_pos (row-major over the original h x w map) of batch item 0.
template <typename S>
TensorT<S> attention_weight_probe(const TensorT<S>& x, const AttentionParamsT<S>& params,
                                  const AttentionConfig& cfg, int t_pos) {
    if (x.rank() != 4)
        throw ShapeError("attention_weight_probe: input must be [n, c, h, w], got " +
                         shape_str(x.shape()));
    const int H = x.size(2), W = x.size(3);
    if (t_pos < 0 || t_pos >= H * W)
        throw ContractError("attention_weight_probe: position " + std::to_string(t_pos) +
                            " outside " + std::to_string(H) + "x" + std::to_string(W) + " map");
    WindowBatchT<S> wb = window_partition(x, cfg.window);
    AttentionCaptureT<S> cap;
    window_self_attention(wb, params, cfg, &cap);

    const int py = t_pos / W, px = t_pos % W;
    const int row = (py / cfg.window) * wb.nwx() + (px / cfg.window);
    const int T = cfg.tokens_per_window();
    TensorT<S> out({cfg.heads, T, T});
    for (int h = 0; h < cfg.heads; ++h)
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < T; ++j)
                out(h, i, j) = cap.attn(row * cfg.heads + h, i, j);
    return out;
}

}  // namespace unet22
