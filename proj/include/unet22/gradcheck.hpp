#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unet22/ops.hpp"
#include "unet22/tape.hpp"

// Central-difference gradient verification. The loss closure is evaluated once
// under a tape to collect analytic gradients, then re-evaluated untraced with
// individual leaf coordinates nudged by +/-h. Relative error uses
// |a - n| / max(|a|, |n|, floor) so near-zero gradients are judged on the
// absolute scale of the difference-quotient noise.

namespace unet22 {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t coords_checked = 0;
    // location of the worst coordinate, for diagnostics
    int worst_leaf = -1;
    int64_t worst_coord = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    std::string describe() const {
        return "max rel err " + std::to_string(max_rel_err) + " at leaf " +
               std::to_string(worst_leaf) + " coord " + std::to_string(worst_coord) +
               " (analytic " + std::to_string(worst_analytic) + ", numeric " +
               std::to_string(worst_numeric) + ", " + std::to_string(coords_checked) +
               " coords)";
    }
};

template <typename S>
GradCheckResult grad_check(std::vector<TensorT<S>> leaves,
                           const std::function<TensorT<S>()>& make_loss, double h = 1e-5,
                           int64_t max_coords_per_leaf = -1, uint64_t sample_seed = 0,
                           double rel_floor = 1e-6) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.clear_grad();
    }
    TapeT<S> tape;
    TensorT<S> loss;
    {
        TapeScopeT<S> scope(tape);
        loss = make_loss();
    }
    tape.backward(loss);

    Rng coord_rng(sample_seed);
    GradCheckResult r;
    for (size_t li = 0; li < leaves.size(); ++li) {
        TensorT<S>& leaf = leaves[li];
        const int64_t n = leaf.numel();
        if (n <= 0) continue;
        std::vector<int64_t> coords;
        if (max_coords_per_leaf < 0 || n <= max_coords_per_leaf) {
            coords.reserve(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            coords.reserve(static_cast<size_t>(max_coords_per_leaf));
            for (int64_t i = 0; i < max_coords_per_leaf; ++i)
                coords.push_back(static_cast<int64_t>(coord_rng.next_u64() % static_cast<uint64_t>(n)));
        }
        const std::vector<S>& g = leaf.grad_vec();
        for (int64_t c : coords) {
            const S saved = leaf.vec()[static_cast<size_t>(c)];
            leaf.vec()[static_cast<size_t>(c)] = saved + static_cast<S>(h);
            const double f_plus = static_cast<double>(make_loss().item());
            leaf.vec()[static_cast<size_t>(c)] = saved - static_cast<S>(h);
            const double f_minus = static_cast<double>(make_loss().item());
            leaf.vec()[static_cast<size_t>(c)] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * h);
            const double analytic = static_cast<double>(g[static_cast<size_t>(c)]);
            const double abs_err = std::abs(analytic - numeric);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), rel_floor});
            const double rel = abs_err / denom;
            ++r.coords_checked;
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                r.max_abs_err = abs_err;
                r.worst_leaf = static_cast<int>(li);
                r.worst_coord = c;
                r.worst_analytic = analytic;
                r.worst_numeric = numeric;
            }
        }
    }
    return r;
}

}  // namespace unet22
