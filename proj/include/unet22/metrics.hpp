#pragma once

// Evaluation metrics on label grids: Dice overlap percentage, 95th-percentile
// symmetric boundary distance, and the thresholded IoU sweep.

#include <array>
#include <vector>

#include "unet22/tensor.hpp"

namespace unet22 {

// 2|A∩B| / (|A|+|B|) * 100 for the pixels labeled `cls` on each side.
// Both sides empty counts as a perfect 100.
double dsc_metric(const IntGrid& pred, const IntGrid& gt, int cls);

struct Hd95Result {
    double value = 0.0;
    // set when either side has no foreground; value is then the image
    // diagonal sentinel rather than a measured distance
    bool empty_side = false;
};

// 95th percentile (linear interpolation) of the pooled directed
// boundary-to-boundary Euclidean distances in both directions. Boundary
// pixels are foreground pixels with a background or out-of-image
// 4-neighbor.
Hd95Result hd95_metric(const IntGrid& pred, const IntGrid& gt, int cls);

struct MiouSweep {
    std::array<double, 10> thresholds{};  // 0.50, 0.55, ..., 0.95
    std::array<double, 10> iou{};
    double mean = 0.0;
};

// Binarizes the foreground probability map at each threshold (p > t) and
// intersects with gt != 0. Empty-vs-empty IoU counts as 1.
MiouSweep miou_sweep(const TensorD& prob_map, const IntGrid& gt_mask);

// Quantile with the same linear interpolation as the HD95 pooling:
// index q*(n-1) between the sorted order statistics.
double percentile_linear(std::vector<double> values, double q);

}  // namespace unet22
