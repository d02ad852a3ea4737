#include "doctest.h"

#include "core/common.hpp"
#include "core/geometry.hpp"

using namespace dseg;

TEST_CASE("iou basic cases") {
    BoxXYXY a{0, 0, 2, 2};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, BoxXYXY{3, 3, 5, 5}) == doctest::Approx(0.0));
    // intersection 1, union 7
    CHECK(iou(a, BoxXYXY{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
    // degenerate zero-area inputs return 0
    BoxXYXY z{1, 1, 1, 1};
    CHECK(iou(z, z) == 0.0);
    CHECK(iou(z, a) >= 0.0);
}

TEST_CASE("giou basic cases") {
    BoxXYXY a{0, 0, 2, 2};
    CHECK(giou(a, a) == doctest::Approx(1.0));
    CHECK(giou(a, BoxXYXY{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0));
    // far-apart boxes go negative; brute-force enclosing area check
    BoxXYXY far{100, 100, 102, 102};
    double uni = a.area() + far.area();
    double hull = 102.0 * 102.0;
    CHECK(giou(a, far) == doctest::Approx(0.0 - (hull - uni) / hull));
    CHECK(giou(a, far) < 0.0);
}

TEST_CASE("iou/giou symmetry, bounds, ordering over random pairs") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        auto rand_box = [&] {
            double x0 = rng.uniform(0, 100), y0 = rng.uniform(0, 100);
            return BoxXYXY{x0, y0, x0 + rng.uniform(0, 50), y0 + rng.uniform(0, 50)};
        };
        BoxXYXY a = rand_box(), b = rand_box();
        double i1 = iou(a, b), i2 = iou(b, a);
        double g1 = giou(a, b), g2 = giou(b, a);
        REQUIRE(i1 == doctest::Approx(i2));
        REQUIRE(g1 == doctest::Approx(g2));
        REQUIRE(i1 >= 0.0);
        REQUIRE(i1 <= 1.0);
        REQUIRE(g1 >= -1.0);
        REQUIRE(g1 <= 1.0);
        REQUIRE(g1 <= i1 + 1e-12);
    }
}

TEST_CASE("ccwh <-> xyxy conversions") {
    BoxXYXY full = ccwh_to_xyxy({0.5, 0.5, 1, 1}, 100, 100);
    CHECK(full.x0 == doctest::Approx(0));
    CHECK(full.y0 == doctest::Approx(0));
    CHECK(full.x1 == doctest::Approx(100));
    CHECK(full.y1 == doctest::Approx(100));

    BoxXYXY b = ccwh_to_xyxy({0.25, 0.25, 0.5, 0.5}, 200, 100);
    CHECK(b.x0 == doctest::Approx(0));
    CHECK(b.y0 == doctest::Approx(0));
    CHECK(b.x1 == doctest::Approx(100));
    CHECK(b.y1 == doctest::Approx(50));

    // round trip identity within 1e-6 on 10k random boxes
    Rng rng(3);
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
        BoxCCWH c{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
        BoxCCWH r = xyxy_to_ccwh(ccwh_to_xyxy(c, 640, 480), 640, 480);
        worst = std::max({worst, std::abs(r.cx - c.cx), std::abs(r.cy - c.cy),
                          std::abs(r.w - c.w), std::abs(r.h - c.h)});
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("ccwh_to_xyxy clamps only when requested") {
    BoxCCWH big{0.5, 0.5, 2.0, 2.0};
    BoxXYXY raw = ccwh_to_xyxy(big, 100, 100);
    CHECK(raw.x0 == doctest::Approx(-50));
    BoxXYXY cl = ccwh_to_xyxy(big, 100, 100, true);
    CHECK(cl.x0 == doctest::Approx(0));
    CHECK(cl.x1 == doctest::Approx(100));
}

TEST_CASE("mask_iou") {
    Mask a{0, 0, 2, 1, {1, 1}};
    Mask b{1, 0, 2, 1, {1, 1}};
    CHECK(mask_iou(a, a) == doctest::Approx(1.0));
    CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0));  // half-overlapping strips
    Mask c{5, 5, 2, 1, {1, 1}};
    CHECK(mask_iou(a, c) == doctest::Approx(0.0));
    Mask e{0, 0, 2, 1, {0, 0}};
    CHECK(mask_iou(e, e) == 0.0);  // both empty defined as 0
    CHECK(mask_iou(a, b) == doctest::Approx(mask_iou(b, a)));
}
