#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "unet22/sliding.hpp"

using namespace unet22;

// Input-dependent two-class toy model: class 0 logit is the pixel value,
// class 1 logit is 0.5 minus it.
static TensorD signal_model(const TensorD& window) {
    const int crop = window.size(2);
    TensorD logits = TensorD::zeros({1, 2, crop, crop});
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            logits(0, 0, y, x) = window(0, 0, y, x);
            logits(0, 1, y, x) = 0.5 - window(0, 0, y, x);
        }
    return logits;
}

static std::vector<int> axis_of(const SlidingPlan& plan, bool ys) {
    std::set<int> s;
    for (const auto& [y, x] : plan.origins) s.insert(ys ? y : x);
    return {s.begin(), s.end()};
}

TEST_CASE("window plans cover the image with clamped strides") {
    const SlidingPlan exact = plan_windows(16, 16, 16, 0.5);
    CHECK(exact.origins == std::vector<std::pair<int, int>>{{0, 0}});
    CHECK(exact.sigma == 2.0);

    const SlidingPlan p = plan_windows(10, 10, 4, 0.5);
    CHECK(axis_of(p, true) == std::vector<int>{0, 2, 4, 6});
    CHECK(axis_of(p, false) == std::vector<int>{0, 2, 4, 6});
    CHECK(p.origins.size() == 16);
    CHECK(std::is_sorted(p.origins.begin(), p.origins.end()));

    for (double f : {0.2, 0.3, 0.5, 1.0}) {
        const SlidingPlan q = plan_windows(37, 29, 16, f);
        std::vector<uint8_t> hit(37 * 29, 0);
        for (const auto& [y, x] : q.origins) {
            CHECK(y + 16 <= q.padded_h);
            CHECK(x + 16 <= q.padded_w);
            for (int yy = y; yy < y + 16; ++yy)
                for (int xx = x; xx < x + 16; ++xx) hit[static_cast<size_t>(yy) * 29 + xx] = 1;
        }
        CHECK(std::count(hit.begin(), hit.end(), 1) == 37 * 29);
        CHECK(axis_of(q, true).back() + 16 == 37);
        CHECK(axis_of(q, false).back() + 16 == 29);
    }

    size_t prev = 0;
    for (double f : {1.0, 0.8, 0.5, 0.3, 0.2, 0.1}) {
        const size_t n = plan_windows(37, 37, 16, f).origins.size();
        CHECK(n >= prev);
        prev = n;
    }

    CHECK_THROWS_AS(plan_windows(10, 10, 4, 0.0), ConfigError);
    CHECK_THROWS_AS(plan_windows(10, 10, 4, -0.3), ConfigError);
    CHECK_THROWS_AS(plan_windows(10, 10, 4, 1.5), ConfigError);
    CHECK_THROWS_AS(plan_windows(10, 10, 0, 0.5), ConfigError);
    CHECK_THROWS_AS(plan_windows(0, 10, 4, 0.5), ConfigError);
}

TEST_CASE("gaussian importance map peak, symmetry, closed form, and floor") {
    const TensorD odd = gaussian_map<double>(9);
    CHECK(odd(4, 4) == 1.0);

    for (int crop : {8, 9}) {
        const TensorD g = gaussian_map<double>(crop);
        double mx = 0;
        for (int64_t i = 0; i < g.numel(); ++i) mx = std::max(mx, g.data()[i]);
        CHECK(mx == 1.0);
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) {
                CHECK(g(y, x) == g(crop - 1 - y, x));
                CHECK(g(y, x) == g(y, crop - 1 - x));
                CHECK(g(y, x) == g(crop - 1 - y, crop - 1 - x));
            }
    }

    // a pixel exactly one sigma from the center
    const TensorD g = gaussian_map<double>(9, 2.0);
    for (auto [y, x] : {std::pair{4, 2}, {4, 6}, {2, 4}, {6, 4}})
        CHECK(g(y, x) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(g(2, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    const TensorD sharp = gaussian_map<double>(9, 0.5);
    CHECK(sharp(0, 0) == 1e-8);
    CHECK(sharp(8, 8) == 1e-8);

    CHECK_THROWS_AS(gaussian_map<double>(0), ConfigError);
}

TEST_CASE("constant model blends to its own softmax everywhere") {
    const double logit[3] = {0.3, -0.7, 1.2};
    WindowForwardT<double> constant = [&](const TensorD& w) {
        TensorD out = TensorD::zeros({1, 3, w.size(2), w.size(3)});
        for (int k = 0; k < 3; ++k)
            for (int y = 0; y < w.size(2); ++y)
                for (int x = 0; x < w.size(3); ++x) out(0, k, y, x) = logit[k];
        return out;
    };
    double z = 0;
    for (double l : logit) z += std::exp(l);

    Rng rng(1);
    const TensorD image = TensorD::randn({1, 11, 13}, rng);
    const SlidingResultT<double> r = predict_full(image, constant, plan_windows(11, 13, 6, 0.5));
    CHECK(r.prob.shape() == std::vector<int>{3, 11, 13});
    for (int k = 0; k < 3; ++k)
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 13; ++x)
                CHECK(std::abs(r.prob(k, y, x) - std::exp(logit[k]) / z) <= 1e-10);
    for (const int32_t m : r.mask.v) CHECK(m == 2);
}

TEST_CASE("single-window plan equals the direct forward softmax") {
    Rng rng(4);
    const TensorD image = TensorD::randn({1, 8, 8}, rng);
    const SlidingResultT<double> r = predict_full<double>(image, signal_model, plan_windows(8, 8, 8, 1.0));

    TensorD window = TensorD::zeros({1, 1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) window(0, 0, y, x) = image(0, y, x);
    const TensorD direct = softmax(signal_model(window), 1);
    for (int k = 0; k < 2; ++k)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(std::abs(r.prob(k, y, x) - direct(0, k, y, x)) <= 1e-12);
}

TEST_CASE("overlapping blend matches an independent accumulator") {
    Rng rng(12);
    const TensorD image = TensorD::randn({1, 10, 10}, rng);
    const SlidingPlan plan = plan_windows(10, 10, 4, 0.5);
    const SlidingResultT<double> r = predict_full<double>(image, signal_model, plan);

    // oracle: own origin walk, own gaussian, own softmax, one flat pass
    std::vector<int> starts;
    for (int pos = 0; pos + 4 < 10; pos += 2) starts.push_back(pos);
    starts.push_back(6);
    std::vector<double> weight(16);
    double peak = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const double dy = y - 1.5, dx = x - 1.5;
            weight[static_cast<size_t>(y) * 4 + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 0.25));
            peak = std::max(peak, weight[static_cast<size_t>(y) * 4 + x]);
        }
    for (auto& v : weight) v = std::max(v / peak, 1e-8);

    std::vector<double> num(2 * 100, 0.0), den(100, 0.0);
    for (int oy : starts)
        for (int ox : starts)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    const double val = image(0, oy + y, ox + x);
                    const double e0 = std::exp(val), e1 = std::exp(0.5 - val);
                    const double g = weight[static_cast<size_t>(y) * 4 + x];
                    num[static_cast<size_t>(oy + y) * 10 + ox + x] += g * e0 / (e0 + e1);
                    num[100 + static_cast<size_t>(oy + y) * 10 + ox + x] += g * e1 / (e0 + e1);
                    den[static_cast<size_t>(oy + y) * 10 + ox + x] += g;
                }
    for (int k = 0; k < 2; ++k)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x)
                CHECK(std::abs(r.prob(k, y, x) -
                               num[static_cast<size_t>(k) * 100 + static_cast<size_t>(y) * 10 + x] /
                                   den[static_cast<size_t>(y) * 10 + x]) < 1e-10);

    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            CHECK(std::abs(r.prob(0, y, x) + r.prob(1, y, x) - 1.0) <= 1e-10);
}

TEST_CASE("images smaller than the crop are mirror padded and cropped back") {
    TensorD image = TensorD::zeros({1, 3, 3});
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) image(0, y, x) = 1.0 + 3 * y + x;

    const SlidingPlan plan = plan_windows(3, 3, 5, 0.5);
    CHECK(plan.padded_h == 5);
    CHECK(plan.origins == std::vector<std::pair<int, int>>{{0, 0}});

    const SlidingResultT<double> r = predict_full<double>(image, signal_model, plan);
    CHECK(r.prob.shape() == std::vector<int>{2, 3, 3});
    CHECK(r.mask.shape == std::vector<int>{3, 3});

    // single window, so the blend reduces to the softmax of the padded image
    const int refl[5] = {0, 1, 2, 1, 0};
    TensorD padded = TensorD::zeros({1, 1, 5, 5});
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) padded(0, 0, y, x) = image(0, refl[y], refl[x]);
    const TensorD direct = softmax(signal_model(padded), 1);
    for (int k = 0; k < 2; ++k)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x)
                CHECK(std::abs(r.prob(k, y, x) - direct(0, k, y, x)) <= 1e-12);
}

TEST_CASE("inconsistent plans are rejected") {
    Rng rng(3);
    const TensorD image = TensorD::randn({1, 8, 8}, rng);

    SlidingPlan hole = plan_windows(8, 8, 4, 0.5);
    hole.origins = {{0, 0}};
    CHECK_THROWS_AS(predict_full<double>(image, signal_model, hole), ContractError);

    const SlidingPlan other = plan_windows(10, 10, 4, 0.5);
    CHECK_THROWS_AS(predict_full<double>(image, signal_model, other), ContractError);

    SlidingPlan stray = plan_windows(8, 8, 4, 0.5);
    stray.origins.emplace_back(6, 6);
    stray.origins.emplace_back(5, 7);
    CHECK_THROWS_AS(predict_full<double>(image, signal_model, stray), ContractError);

    SlidingPlan empty = plan_windows(8, 8, 4, 0.5);
    empty.origins.clear();
    CHECK_THROWS_AS(predict_full<double>(image, signal_model, empty), ContractError);

    WindowForwardT<double> bad_shape = [](const TensorD& w) {
        return TensorD::zeros({1, 2, w.size(2), w.size(3) + 1});
    };
    CHECK_THROWS_AS(predict_full<double>(image, bad_shape, plan_windows(8, 8, 4, 0.5)), ShapeError);
}
