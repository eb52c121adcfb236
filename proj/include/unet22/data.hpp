#pragma once

// Sample container and spatial cropping shared by the dataset, augmentation,
// and training code. Images travel as [c, h, w] tensors in [0,1]; masks as
// integer grids.

#include <string>

#include "unet22/sliding.hpp"
#include "unet22/tensor.hpp"

namespace unet22 {

struct SegmentationSample {
    TensorD image;  // [c, h, w], values in [0, 1]
    IntGrid mask;   // [h, w]
    std::string id;
};

inline void validate_sample(const SegmentationSample& s, int num_classes) {
    if (!s.image.defined() || s.image.rank() != 3)
        throw ShapeError("sample '" + s.id + "': image must be [c, h, w]");
    if (s.mask.shape != std::vector<int>{s.image.size(1), s.image.size(2)})
        throw ShapeError("sample '" + s.id + "': mask shape " + shape_str(s.mask.shape) +
                         " does not match image " + shape_str(s.image.shape()));
    for (const int32_t v : s.mask.v)
        if (v < 0 || v >= num_classes)
            throw ContractError("sample '" + s.id + "': mask label " + std::to_string(v) +
                                " outside [0, " + std::to_string(num_classes) + ")");
    check_finite("sample image", s.image);
}

// Mirror-pads the bottom/right so both extents reach at least (min_h, min_w),
// with the same fold-back indexing the sliding predictor uses.
inline SegmentationSample reflect_pad_sample(const SegmentationSample& s, int min_h, int min_w) {
    const int C = s.image.size(0), H = s.image.size(1), W = s.image.size(2);
    const int PH = std::max(H, min_h), PW = std::max(W, min_w);
    if (PH == H && PW == W) return s;
    SegmentationSample out;
    out.id = s.id;
    out.image = TensorD::zeros({C, PH, PW});
    out.mask = IntGrid({PH, PW});
    for (int y = 0; y < PH; ++y)
        for (int x = 0; x < PW; ++x) {
            const int sy = detail::reflect_index(y, H), sx = detail::reflect_index(x, W);
            for (int c = 0; c < C; ++c) out.image(c, y, x) = s.image(c, sy, sx);
            out.mask.at(y, x) = s.mask.at(sy, sx);
        }
    return out;
}

// The same spatial window out of both image and mask.
inline SegmentationSample crop_window(const SegmentationSample& s, int oy, int ox, int crop) {
    const int C = s.image.size(0), H = s.image.size(1), W = s.image.size(2);
    if (crop < 1) throw ConfigError("crop_window: crop must be >= 1");
    if (oy < 0 || ox < 0 || oy + crop > H || ox + crop > W)
        throw ContractError("crop_window: window (" + std::to_string(oy) + ", " + std::to_string(ox) +
                            ") size " + std::to_string(crop) + " leaves the " + std::to_string(H) +
                            "x" + std::to_string(W) + " image");
    SegmentationSample out;
    out.id = s.id;
    out.image = TensorD::zeros({C, crop, crop});
    out.mask = IntGrid({crop, crop});
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            for (int c = 0; c < C; ++c) out.image(c, y, x) = s.image(c, oy + y, ox + x);
            out.mask.at(y, x) = s.mask.at(oy + y, ox + x);
        }
    return out;
}

inline SegmentationSample random_crop(const SegmentationSample& s, int crop, Rng& rng) {
    if (crop < 1) throw ConfigError("random_crop: crop must be >= 1");
    const SegmentationSample padded = reflect_pad_sample(s, crop, crop);
    const int H = padded.image.size(1), W = padded.image.size(2);
    const int oy = rng.uniform_int(0, H - crop);
    const int ox = rng.uniform_int(0, W - crop);
    return crop_window(padded, oy, ox, crop);
}

}  // namespace unet22
