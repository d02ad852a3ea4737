#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "core/losses.hpp"

using namespace dseg;
using Td = Tensor<double>;
using G = Graph<double>;

namespace {

double brute_force_min_cost(const std::vector<double>& cost, int rows, int cols) {
    // enumerate all injective row->column mappings
    std::vector<int> cols_idx(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j) cols_idx[static_cast<std::size_t>(j)] = j;
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> pick(static_cast<std::size_t>(rows), -1);
    std::vector<bool> used(static_cast<std::size_t>(cols), false);
    std::function<void(int, double)> rec = [&](int r, double acc) {
        if (acc >= best) return;
        if (r == rows) {
            best = acc;
            return;
        }
        for (int j = 0; j < cols; ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            used[static_cast<std::size_t>(j)] = true;
            rec(r + 1, acc + cost[static_cast<std::size_t>(r) * cols + j]);
            used[static_cast<std::size_t>(j)] = false;
        }
    };
    rec(0, 0.0);
    return best;
}

DetachedPredictions random_preds(int n, Rng& rng, double img = 100) {
    DetachedPredictions p;
    for (int i = 0; i < n; ++i) {
        double x0 = rng.uniform(0, img - 10), y0 = rng.uniform(0, img - 10);
        p.boxes.push_back({x0, y0, x0 + rng.uniform(2, 30), y0 + rng.uniform(2, 30)});
        std::array<double, 3> pr{};
        double s = 0;
        for (auto& v : pr) {
            v = rng.uniform(0.01, 1.0);
            s += v;
        }
        for (auto& v : pr) v /= s;
        p.probs.push_back(pr);
    }
    return p;
}

std::vector<LabeledInstance> random_gt(int n, Rng& rng, double img = 100) {
    std::vector<LabeledInstance> gt(static_cast<std::size_t>(n));
    for (auto& g : gt) {
        double x0 = rng.uniform(0, img - 10), y0 = rng.uniform(0, img - 10);
        g.box = {x0, y0, x0 + rng.uniform(2, 30), y0 + rng.uniform(2, 30)};
        g.class_id = static_cast<int>(rng.uniform_int(0, 2));
    }
    return gt;
}

}  // namespace

TEST_CASE("hungarian equals brute force on 200 random instances") {
    Rng rng(11);
    LossWeights w;
    for (int rep = 0; rep < 200; ++rep) {
        int n_gt = static_cast<int>(rng.uniform_int(1, 6));
        int n_pred = static_cast<int>(rng.uniform_int(n_gt, 8));
        auto preds = random_preds(n_pred, rng);
        auto gt = random_gt(n_gt, rng);
        MatchResult m = hungarian_match(preds, gt, w, 100, 100);
        REQUIRE(static_cast<int>(m.pairs.size()) == n_gt);
        // rebuild the cost matrix exactly as the matcher does
        std::vector<double> cost(static_cast<std::size_t>(n_gt) * n_pred);
        for (int gi = 0; gi < n_gt; ++gi) {
            BoxCCWH gc = xyxy_to_ccwh(gt[static_cast<std::size_t>(gi)].box, 100, 100);
            for (int p = 0; p < n_pred; ++p) {
                BoxCCWH pc = xyxy_to_ccwh(preds.boxes[static_cast<std::size_t>(p)], 100, 100);
                double l1 = std::abs(pc.cx - gc.cx) + std::abs(pc.cy - gc.cy) +
                            std::abs(pc.w - gc.w) + std::abs(pc.h - gc.h);
                cost[static_cast<std::size_t>(gi) * n_pred + p] =
                    -w.w_cls * preds.probs[static_cast<std::size_t>(p)]
                                          [static_cast<std::size_t>(
                                              gt[static_cast<std::size_t>(gi)].class_id)] +
                    w.w_l1 * l1 +
                    w.w_giou * (1.0 - giou(preds.boxes[static_cast<std::size_t>(p)],
                                           gt[static_cast<std::size_t>(gi)].box));
            }
        }
        double brute = brute_force_min_cost(cost, n_gt, n_pred);
        REQUIRE(std::abs(m.total_cost - brute) <= 1e-9 * std::max(1.0, std::abs(brute)));
        // validity: each gt once, predictions at most once
        std::vector<bool> used(static_cast<std::size_t>(n_pred), false);
        for (auto [p, gi] : m.pairs) {
            REQUIRE_FALSE(used[static_cast<std::size_t>(p)]);
            used[static_cast<std::size_t>(p)] = true;
        }
    }
}

TEST_CASE("hungarian edge cases") {
    LossWeights w;
    Rng rng(5);
    auto gt = random_gt(1, rng);
    DetachedPredictions one;
    one.boxes.push_back(gt[0].box);
    one.probs.push_back({0.9, 0.05, 0.05});
    MatchResult m = hungarian_match(one, gt, w, 100, 100);
    REQUIRE(m.pairs.size() == 1);
    CHECK(m.pairs[0].first == 0);

    // duplicated prediction rows: cost invariant under which one is chosen
    DetachedPredictions two;
    two.boxes = {one.boxes[0], one.boxes[0]};
    two.probs = {one.probs[0], one.probs[0]};
    MatchResult m2 = hungarian_match(two, gt, w, 100, 100);
    CHECK(m2.total_cost == doctest::Approx(m.total_cost));

    // more gt than predictions is a caller error
    auto gt2 = random_gt(3, rng);
    CHECK_THROWS_AS(hungarian_match(one, gt2, w, 100, 100), std::invalid_argument);

    // empty gt: empty match
    CHECK(hungarian_match(one, {}, w, 100, 100).pairs.empty());
}

TEST_CASE("set_loss perfect prediction") {
    LossWeights w;
    Rng rng(7);
    auto gt = random_gt(4, rng);
    int n = 6;
    Td logits({n, 3});
    logits.fill(-20.0);
    Td boxes({n, 4});
    DetachedPredictions det;
    for (int i = 0; i < n; ++i) {
        BoxXYXY b = i < 4 ? gt[static_cast<std::size_t>(i)].box : BoxXYXY{1, 1, 2, 2};
        boxes[i * 4 + 0] = b.x0;
        boxes[i * 4 + 1] = b.y0;
        boxes[i * 4 + 2] = b.x1;
        boxes[i * 4 + 3] = b.y1;
        if (i < 4) logits[i * 3 + gt[static_cast<std::size_t>(i)].class_id] = 20.0;
        std::array<double, 3> pr{};
        for (int c = 0; c < 3; ++c)
            pr[static_cast<std::size_t>(c)] = G::stable_sigmoid(logits[i * 3 + c]);
        det.probs.push_back(pr);
        det.boxes.push_back(b);
    }
    MatchResult m = hungarian_match(det, gt, w, 100, 100);
    G g;
    auto nodes = set_loss(g, g.constant(logits), g.constant(boxes), gt, m, w, 100, 100);
    CHECK(nodes.box_l1 == doctest::Approx(0.0));
    CHECK(nodes.box_giou == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(nodes.cls < 1e-3);

    // no gt: classification-only loss, strictly positive for non-saturated logits
    Td weak({n, 3});
    weak.fill(0.0);
    G g2;
    auto bg = set_loss(g2, g2.constant(weak), g2.constant(boxes), {}, MatchResult{}, w, 100, 100);
    CHECK(bg.box_l1 == 0.0);
    CHECK(bg.box_giou == 0.0);
    CHECK(bg.cls > 0.0);
    CHECK(g2.val(bg.total)[0] == doctest::Approx(w.w_cls * bg.cls));
}

TEST_CASE("set_loss linearity in w_l1 and permutation invariance") {
    LossWeights w;
    Rng rng(13);
    auto gt = random_gt(5, rng);
    auto det = random_preds(9, rng);
    Td logits({9, 3});
    Td boxes({9, 4});
    for (int i = 0; i < 9; ++i) {
        for (int c = 0; c < 3; ++c)
            logits[i * 3 + c] = rng.uniform(-2, 2);
        boxes[i * 4 + 0] = det.boxes[static_cast<std::size_t>(i)].x0;
        boxes[i * 4 + 1] = det.boxes[static_cast<std::size_t>(i)].y0;
        boxes[i * 4 + 2] = det.boxes[static_cast<std::size_t>(i)].x1;
        boxes[i * 4 + 3] = det.boxes[static_cast<std::size_t>(i)].y1;
        for (int c = 0; c < 3; ++c)
            det.probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] =
                G::stable_sigmoid(logits[i * 3 + c]);
    }
    MatchResult m = hungarian_match(det, gt, w, 100, 100);
    G g;
    auto a = set_loss(g, g.constant(logits), g.constant(boxes), gt, m, w, 100, 100);
    LossWeights w2 = w;
    w2.w_l1 *= 2;
    G g2;
    auto b = set_loss(g2, g2.constant(logits), g2.constant(boxes), gt, m, w2, 100, 100);
    CHECK(b.box_l1 == doctest::Approx(a.box_l1));
    CHECK(g2.val(b.total)[0] ==
          doctest::Approx(g.val(a.total)[0] + w.w_l1 * a.box_l1));

    // permute predictions and rematch: scalar total identical
    std::vector<int> perm{3, 1, 4, 0, 8, 6, 2, 7, 5};
    DetachedPredictions pdet;
    Td plogits({9, 3}), pboxes({9, 4});
    for (int i = 0; i < 9; ++i) {
        int src = perm[static_cast<std::size_t>(i)];
        pdet.boxes.push_back(det.boxes[static_cast<std::size_t>(src)]);
        pdet.probs.push_back(det.probs[static_cast<std::size_t>(src)]);
        for (int c = 0; c < 3; ++c) plogits[i * 3 + c] = logits[src * 3 + c];
        for (int c = 0; c < 4; ++c) pboxes[i * 4 + c] = boxes[src * 4 + c];
    }
    MatchResult pm = hungarian_match(pdet, gt, w, 100, 100);
    G g3;
    auto c = set_loss(g3, g3.constant(plogits), g3.constant(pboxes), gt, pm, w, 100, 100);
    CHECK(g3.val(c.total)[0] == doctest::Approx(g.val(a.total)[0]).epsilon(1e-9));
}

TEST_CASE("mask_bce values") {
    G g;
    Td sat({2, 3, 3});
    Td gtm({2, 3, 3});
    for (int i = 0; i < 18; ++i) {
        gtm[i] = (i % 2 == 0) ? 1.0 : 0.0;
        sat[i] = gtm[i] > 0.5 ? 30.0 : -30.0;
    }
    CHECK(g.val(mask_bce(g, g.constant(sat), gtm.clone()))[0] == doctest::Approx(0.0));

    Td zeros({2, 3, 3});
    CHECK(g.val(mask_bce(g, g.constant(zeros), gtm.clone()))[0] ==
          doctest::Approx(std::log(2.0)));

    // random case against an independent scalar-loop oracle
    Rng rng(3);
    Td lg = Td::randn({2, 3, 3}, rng);
    double oracle = 0;
    for (int i = 0; i < 18; ++i) {
        double p = 1.0 / (1.0 + std::exp(-lg[i]));
        oracle += -(gtm[i] * std::log(p) + (1 - gtm[i]) * std::log(1 - p));
    }
    oracle /= 18;
    CHECK(g.val(mask_bce(g, g.constant(lg), gtm.clone()))[0] == doctest::Approx(oracle));

    Td bad({3, 3});
    CHECK_THROWS_AS(mask_bce(g, g.constant(lg), std::move(bad)), std::invalid_argument);
}

TEST_CASE("lesion_bce values") {
    G g;
    Td labels({4}, {1, 0, 1, 1});
    Td sat({4}, {1 - 1e-9, 1e-9, 1 - 1e-9, 1 - 1e-9});
    CHECK(g.val(lesion_bce(g, g.constant(sat), labels.clone()))[0] ==
          doctest::Approx(0.0).epsilon(1e-5));

    Td half = Td::full({4}, 0.5);
    CHECK(g.val(lesion_bce(g, g.constant(half), labels.clone()))[0] ==
          doctest::Approx(std::log(2.0)));

    Td mixed({4}, {0.9, 0.2, 0.6, 0.4});
    double oracle = -(std::log(0.9) + std::log(0.8) + std::log(0.6) + std::log(0.4)) / 4;
    CHECK(g.val(lesion_bce(g, g.constant(mixed), labels.clone()))[0] == doctest::Approx(oracle));

    Td bad({3});
    CHECK_THROWS_AS(lesion_bce(g, g.constant(mixed), std::move(bad)), std::invalid_argument);
}
