#include "doctest.h"

#include <cmath>

#include "core/diffusion.hpp"

using namespace dseg;

TEST_CASE("cosine schedule endpoints and monotonicity") {
    NoiseSchedule s = build_cosine_schedule(1000);
    CHECK(s.alpha_bar.size() == 1001);
    CHECK(std::abs(s.alpha_bar[0] - 1.0) < 1e-3);
    CHECK(s.alpha_bar[1000] < 0.01);
    CHECK(s.alpha_bar[1000] > 0.0);
    for (int t = 1; t <= 1000; ++t) {
        REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        REQUIRE(s.alpha_bar[t] > 0.0);
        REQUIRE(s.alpha_bar[t] <= 1.0);
    }

    NoiseSchedule tiny = build_cosine_schedule(1);
    CHECK(tiny.alpha_bar.size() == 2);
    CHECK(tiny.alpha_bar[0] > tiny.alpha_bar[1]);

    CHECK_THROWS_AS(build_cosine_schedule(0), std::invalid_argument);
}

TEST_CASE("scale_signal round trip and endpoints") {
    CHECK(scale_signal(0.5, 2.0) == doctest::Approx(0.0));
    CHECK(scale_signal(0.0, 2.0) == doctest::Approx(-2.0));
    CHECK(scale_signal(1.0, 2.0) == doctest::Approx(2.0));
    for (double x : {0.0, 0.1, 0.33, 0.5, 0.77, 1.0})
        CHECK(unscale_signal(scale_signal(x, 2.0), 2.0) == doctest::Approx(x));
    // inverse clamps out-of-range values into [0,1]
    CHECK(unscale_signal(5.0, 2.0) == 1.0);
    CHECK(unscale_signal(-5.0, 2.0) == 0.0);
}

TEST_CASE("pad_boxes keeps ground truth and pads with positive-extent boxes") {
    Rng rng(1);
    std::vector<BoxCCWH> gt;
    for (int i = 0; i < 10; ++i) gt.push_back({0.1 * i, 0.05 * i, 0.2, 0.3});

    PaddedBoxes same = pad_boxes(gt, 10, 2.0, rng);
    CHECK(same.boxes.size() == 10);
    for (int i = 0; i < 10; ++i) {
        CHECK(same.boxes[i].cx == gt[i].cx);
        CHECK(same.valid[i]);
    }

    PaddedBoxes empty = pad_boxes({}, 16, 2.0, rng);
    CHECK(empty.boxes.size() == 16);
    for (bool v : empty.valid) CHECK_FALSE(v);

    CHECK_THROWS_AS(pad_boxes(gt, 5, 2.0, rng), std::invalid_argument);

    // 95 real rows (paper's average object count), 405 padded; statistics over seeds
    std::vector<BoxCCWH> g95(95, BoxCCWH{0.5, 0.5, 0.1, 0.1});
    int checked = 0;
    double sum = 0, sumsq = 0;
    for (int seed = 0; seed < 100; ++seed) {
        Rng r(seed);
        PaddedBoxes p = pad_boxes(g95, 500, 2.0, r);
        REQUIRE(p.boxes.size() == 500);
        for (int i = 95; i < 500; ++i) {
            REQUIRE(p.boxes[i].w > 0.0);
            REQUIRE(p.boxes[i].h > 0.0);
            REQUIRE_FALSE(p.valid[i]);
            sum += p.boxes[i].cx;
            sumsq += p.boxes[i].cx * p.boxes[i].cx;
            ++checked;
        }
    }
    // cx of padding is a clamped affine image of N(0,1): mean 0.5, sd 1/(2*scale)
    double mean = sum / checked;
    double sd = std::sqrt(sumsq / checked - mean * mean);
    CHECK(mean == doctest::Approx(0.5).epsilon(0.02));
    CHECK(sd == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("q_sample matches forward moments") {
    NoiseSchedule s = build_cosine_schedule(1000);
    std::vector<Coords4> clean{{0.4, -0.8, 1.2, -1.6}};

    // t=0 has alpha_bar exactly 1: output equals input
    Rng rng(2);
    CorruptedBoxBatch z0 = q_sample(clean, 0, s, 2.0, rng);
    for (int j = 0; j < 4; ++j) CHECK(z0.boxes[0][j] == doctest::Approx(clean[0][j]));

    CHECK_THROWS_AS(q_sample(clean, 1001, s, 2.0, rng), std::invalid_argument);

    const int n = 100000;
    for (int t : {1, 500, 1000}) {
        Rng r(17 + t);
        double ab = s.alpha_bar[t];
        for (int j = 0; j < 4; ++j) {
            double sum = 0, sumsq = 0;
            for (int i = 0; i < n; ++i) {
                // redraw noise each time
                CorruptedBoxBatch z = q_sample(clean, t, s, 2.0, r);
                sum += z.boxes[0][j];
                sumsq += z.boxes[0][j] * z.boxes[0][j];
            }
            double mean = sum / n;
            double var = sumsq / n - mean * mean;
            double exp_mean = std::sqrt(ab) * clean[0][j];
            double exp_var = 1.0 - ab;
            double se_mean = std::sqrt(exp_var / n) + 1e-12;
            double se_var = exp_var * std::sqrt(2.0 / n) + 1e-12;
            REQUIRE(std::abs(mean - exp_mean) < 3 * se_mean + 1e-9);
            REQUIRE(std::abs(var - exp_var) < 3 * se_var + 1e-9);
        }
    }
}

TEST_CASE("ddim reverse recovers clean boxes with an identity-oracle denoiser") {
    NoiseSchedule s = build_cosine_schedule(1000);
    Rng rng(3);
    std::vector<Coords4> clean;
    for (int i = 0; i < 50; ++i)
        clean.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2),
                         rng.uniform(-2, 2)});
    std::vector<Coords4> z = q_sample(clean, 1000, s, 2.0, rng).boxes;
    // 10 equal jumps 1000 -> 0
    for (int k = 10; k >= 1; --k) {
        int t_now = 100 * k, t_next = 100 * (k - 1);
        z = ddim_step(clean, z, t_now, t_next, s, rng, 0.0);
    }
    double worst = 0;
    for (std::size_t i = 0; i < clean.size(); ++i)
        for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(z[i][j] - clean[i][j]));
    CHECK(worst < 1e-4);

    // determinism of the eta=0 path
    std::vector<Coords4> znow = q_sample(clean, 800, s, 2.0, rng).boxes;
    Rng ra(9), rb(9);
    auto o1 = ddim_step(clean, znow, 800, 400, s, ra, 0.0);
    auto o2 = ddim_step(clean, znow, 800, 400, s, rb, 0.0);
    CHECK(o1 == o2);

    // t_next == 0 with alpha_bar[0] == 1 returns the predictions exactly
    auto o3 = ddim_step(clean, znow, 800, 0, s, ra, 0.0);
    for (std::size_t i = 0; i < clean.size(); ++i)
        for (int j = 0; j < 4; ++j) CHECK(o3[i][j] == doctest::Approx(clean[i][j]));

    CHECK_THROWS_AS(ddim_step(clean, znow, 400, 400, s, ra, 0.0), std::invalid_argument);
}

TEST_CASE("box_renewal partitions rows") {
    Rng rng(4);
    std::vector<Coords4> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 200; ++i) {
        boxes.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
        scores.push_back(i % 2 == 0 ? 0.9 : 0.1);
    }

    auto all_kept = box_renewal(boxes, std::vector<double>(200, 0.99), 0.5, rng);
    CHECK(all_kept == boxes);

    auto mixed = box_renewal(boxes, scores, 0.5, rng);
    CHECK(mixed.size() == boxes.size());
    for (int i = 0; i < 200; i += 2) CHECK(mixed[i] == boxes[i]);

    // all replaced: empirical mean of replacements near 0
    double sum = 0;
    int cnt = 0;
    for (int rep = 0; rep < 200; ++rep) {
        auto repl = box_renewal(boxes, std::vector<double>(200, 0.0), 0.5, rng);
        for (auto& c : repl)
            for (double v : c) {
                sum += v;
                ++cnt;
            }
    }
    CHECK(std::abs(sum / cnt) < 3.0 / std::sqrt(static_cast<double>(cnt)));
}
