#include "unet22/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unet22/common.hpp"

namespace unet22 {

namespace {

void require_label_pair(const char* op, const IntGrid& a, const IntGrid& b) {
    if (a.shape.size() != 2)
        throw ShapeError(std::string(op) + ": masks must be [h, w], got " + shape_str(a.shape));
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": mask shapes differ, " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

std::vector<uint8_t> boundary_of(const IntGrid& m, int cls) {
    const int H = m.shape[0], W = m.shape[1];
    std::vector<uint8_t> out(static_cast<size_t>(H) * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (m.at(y, x) != cls) continue;
            const bool edge = y == 0 || y == H - 1 || x == 0 || x == W - 1;
            const bool bg_neighbor =
                (y > 0 && m.at(y - 1, x) != cls) || (y + 1 < H && m.at(y + 1, x) != cls) ||
                (x > 0 && m.at(y, x - 1) != cls) || (x + 1 < W && m.at(y, x + 1) != cls);
            if (edge || bg_neighbor) out[static_cast<size_t>(y) * W + x] = 1;
        }
    return out;
}

// Felzenszwalb-Huttenlocher 1D squared distance transform: lower envelope
// of the parabolas rooted at the source values in f.
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
          std::vector<double>& z, int n) {
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[static_cast<size_t>(k)];
            s = ((f[static_cast<size_t>(q)] + static_cast<double>(q) * q) -
                 (f[static_cast<size_t>(p)] + static_cast<double>(p) * p)) /
                (2.0 * (q - p));
            if (s > z[static_cast<size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k) + 1] < q) ++k;
        const int p = v[static_cast<size_t>(k)];
        d[static_cast<size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<size_t>(p)];
    }
}

// Exact squared Euclidean distance to the nearest set pixel, rows then
// columns.
std::vector<double> edt_squared(const std::vector<uint8_t>& src, int H, int W) {
    constexpr double kInf = 1e18;
    std::vector<double> grid(static_cast<size_t>(H) * W);
    for (size_t i = 0; i < grid.size(); ++i) grid[i] = src[i] ? 0.0 : kInf;

    const int n = std::max(H, W);
    std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n));
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n) + 1);

    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) f[static_cast<size_t>(y)] = grid[static_cast<size_t>(y) * W + x];
        dt1d(f, d, v, z, H);
        for (int y = 0; y < H; ++y) grid[static_cast<size_t>(y) * W + x] = d[static_cast<size_t>(y)];
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) f[static_cast<size_t>(x)] = grid[static_cast<size_t>(y) * W + x];
        dt1d(f, d, v, z, W);
        for (int x = 0; x < W; ++x) grid[static_cast<size_t>(y) * W + x] = d[static_cast<size_t>(x)];
    }
    return grid;
}

}  // namespace

double dsc_metric(const IntGrid& pred, const IntGrid& gt, int cls) {
    require_label_pair("dsc_metric", pred, gt);
    int64_t a = 0, b = 0, inter = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const bool in_a = pred.v[i] == cls;
        const bool in_b = gt.v[i] == cls;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0) return 100.0;
    return 200.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double percentile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw ContractError("percentile_linear: empty sample");
    if (q < 0.0 || q > 1.0) throw ConfigError("percentile_linear: q must be in [0, 1]");
    std::sort(values.begin(), values.end());
    const double idx = q * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const double frac = idx - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values[lo];
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

Hd95Result hd95_metric(const IntGrid& pred, const IntGrid& gt, int cls) {
    require_label_pair("hd95_metric", pred, gt);
    const int H = pred.shape[0], W = pred.shape[1];

    bool pred_any = false, gt_any = false;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        pred_any = pred_any || pred.v[i] == cls;
        gt_any = gt_any || gt.v[i] == cls;
    }
    if (!pred_any || !gt_any) return {std::hypot(static_cast<double>(H), static_cast<double>(W)), true};

    const std::vector<uint8_t> bp = boundary_of(pred, cls);
    const std::vector<uint8_t> bg = boundary_of(gt, cls);
    const std::vector<double> to_gt = edt_squared(bg, H, W);
    const std::vector<double> to_pred = edt_squared(bp, H, W);

    std::vector<double> pooled;
    for (size_t i = 0; i < bp.size(); ++i) {
        if (bp[i]) pooled.push_back(std::sqrt(to_gt[i]));
        if (bg[i]) pooled.push_back(std::sqrt(to_pred[i]));
    }
    return {percentile_linear(std::move(pooled), 0.95), false};
}

MiouSweep miou_sweep(const TensorD& prob_map, const IntGrid& gt_mask) {
    if (!prob_map.defined() || prob_map.rank() != 2)
        throw ShapeError("miou_sweep: probability map must be [h, w]");
    if (gt_mask.shape != std::vector<int>{prob_map.size(0), prob_map.size(1)})
        throw ShapeError("miou_sweep: mask shape " + shape_str(gt_mask.shape) +
                         " does not match map " + shape_str(prob_map.shape()));
    for (int64_t i = 0; i < prob_map.numel(); ++i) {
        const double p = prob_map.data()[i];
        if (!(p >= 0.0 && p <= 1.0))
            throw ContractError("miou_sweep: probability " + std::to_string(p) + " outside [0, 1]");
    }

    MiouSweep sweep;
    for (int k = 0; k < 10; ++k) {
        const double t = static_cast<double>(50 + 5 * k) / 100.0;
        sweep.thresholds[static_cast<size_t>(k)] = t;
        int64_t inter = 0, uni = 0;
        for (int64_t i = 0; i < prob_map.numel(); ++i) {
            const bool p = prob_map.data()[i] > t;
            const bool g = gt_mask.v[static_cast<size_t>(i)] != 0;
            inter += p && g;
            uni += p || g;
        }
        sweep.iou[static_cast<size_t>(k)] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        sweep.mean += sweep.iou[static_cast<size_t>(k)];
    }
    sweep.mean /= 10.0;
    return sweep;
}

}  // namespace unet22
