#include "doctest.h"

#include "core/nn.hpp"
#include "core/ops_loss.hpp"
#include "core/ops_spatial.hpp"
#include "testutil.hpp"

using namespace dseg;
using G = Graph<double>;
using Td = Tensor<double>;

namespace {

// scalar probe so every output element influences the loss
int probed_sum(G& g, int out, const Td& probe) {
    return g.sum_all(g.mul(out, g.constant(probe)));
}

struct Fixture {
    ParamStore<double> ps;
    Rng rng{42};

    Param<double>& p(const std::string& name, std::vector<int> shape, double scale = 1.0) {
        return ps.add(name, Td::randn(shape, rng, scale));
    }
};

}  // namespace

TEST_CASE("elementwise and shape op gradients") {
    Fixture f;
    auto& a = f.p("a", {3, 5});
    auto& b = f.p("b", {3, 5});
    auto& bias = f.p("bias", {5});
    Td probe = Td::randn({3, 5}, f.rng);
    Td probe2 = Td::randn({3, 5}, f.rng);

    auto loss = [&](bool bw) {
        G g;
        int x = g.add(g.mul(g.param(a), g.param(b)), g.scale(g.param(a), 0.5));
        x = g.add_bias(x, g.param(bias));
        x = g.sigmoid(x);
        int l = probed_sum(g, x, probe);
        // exercise slice + gather + transpose on a second path
        int sl = g.slice_cols(g.param(a), 1, 4);
        int ga2 = g.gather_rows(g.param(b), {2, 0, 1});
        int t = g.transpose_last2(g.reshape(g.param(a), {5, 3}));
        l = g.add(l, probed_sum(g, sl, Td::full({3, 3}, 0.3)));
        l = g.add(l, probed_sum(g, ga2, Td::full({3, 5}, 0.2)));
        l = g.add(l, probed_sum(g, t, probe2));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&a, &b, &bias}, loss, f.rng, 8) < 1e-5);
}

TEST_CASE("matmul/bmm/attention-shaped gradients") {
    Fixture f;
    auto& a = f.p("a", {6, 4});
    auto& w = f.p("w", {4, 8});
    Td probe = Td::randn({6, 8}, f.rng);
    auto loss = [&](bool bw) {
        G g;
        int y = g.matmul(g.param(a), g.param(w));
        int l = probed_sum(g, y, probe);
        // heads split/merge + bmm + softmax round trip
        int h = g.heads_split(y, 2);                      // (2, 6, 4)
        int s = g.bmm(h, g.transpose_last2(h));           // (2, 6, 6)
        int sm = g.softmax_lastdim(g.scale(s, 0.5));
        int mixed = g.heads_merge(g.bmm(sm, h));          // (6, 8)
        l = g.add(l, probed_sum(g, mixed, Td::randn({6, 8}, f.rng)));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    // probe tensor inside the closure must be deterministic: rebuild rng per call
    auto loss_det = [&](bool bw) {
        Rng local(123);
        G g;
        int y = g.matmul(g.param(a), g.param(w));
        int l = probed_sum(g, y, probe);
        int h = g.heads_split(y, 2);
        int s = g.bmm(h, g.transpose_last2(h));
        int sm = g.softmax_lastdim(g.scale(s, 0.5));
        int mixed = g.heads_merge(g.bmm(sm, h));
        l = g.add(l, probed_sum(g, mixed, Td::randn({6, 8}, local)));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    (void)loss;
    CHECK(testutil::max_grad_rel_error(f.ps, {&a, &w}, loss_det, f.rng, 10) < 1e-5);
}

TEST_CASE("normalization gradients") {
    Fixture f;
    auto& x = f.p("x", {4, 6});
    auto& gamma = f.p("g", {6});
    auto& beta = f.p("be", {6});
    Td probe = Td::randn({4, 6}, f.rng);
    auto loss = [&](bool bw) {
        G g;
        int y = g.layer_norm(g.param(x), g.param(gamma), g.param(beta));
        int l = probed_sum(g, y, probe);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x, &gamma, &beta}, loss, f.rng, 8) < 1e-5);

    Fixture f2;
    auto& xc = f2.p("x", {2, 4, 3, 3});
    auto& g2 = f2.p("g", {4});
    auto& b2 = f2.p("b", {4});
    Td probe2 = Td::randn({2, 4, 3, 3}, f2.rng);
    auto loss2 = [&](bool bw) {
        G g;
        int y = g.group_norm(g.param(xc), g.param(g2), g.param(b2), 2);
        int l = probed_sum(g, y, probe2);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f2.ps, {&xc, &g2, &b2}, loss2, f2.rng, 8) < 1e-5);
}

TEST_CASE("batch norm training-mode gradients") {
    Fixture f;
    auto& x = f.p("x", {3, 4, 2, 2});
    auto& gamma = f.p("g", {4});
    auto& beta = f.p("b", {4});
    Td probe = Td::randn({3, 4, 2, 2}, f.rng);
    auto loss = [&](bool bw) {
        Td rm = Td::zeros({4});  // fresh buffers per pass; stats update is tested elsewhere
        Td rv = Td::full({4}, 1.0);
        G g;
        int y = g.batch_norm2d(g.param(x), g.param(gamma), g.param(beta), rm, rv, true);
        int l = probed_sum(g, y, probe);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x, &gamma, &beta}, loss, f.rng, 8) < 1e-5);
}

TEST_CASE("conv2d gradients and shape") {
    Fixture f;
    auto& x = f.p("x", {2, 3, 6, 7});
    auto& w = f.p("w", {4, 3, 3, 3}, 0.5);
    auto& b = f.p("b", {4});
    Td probe = Td::randn({2, 4, 3, 4}, f.rng);
    auto loss = [&](bool bw) {
        G g;
        int y = conv2d(g, g.param(x), g.param(w), g.param(b), 2, 1);
        REQUIRE(g.val(y).shape == std::vector<int>({2, 4, 3, 4}));
        int l = probed_sum(g, y, probe);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x, &w, &b}, loss, f.rng, 10) < 1e-5);
}

TEST_CASE("maxpool and upsample gradients") {
    Fixture f;
    auto& x = f.p("x", {2, 3, 4, 4});
    Td probe = Td::randn({2, 3, 2, 2}, f.rng);
    Td probe_up = Td::randn({2, 3, 8, 8}, f.rng);
    auto loss = [&](bool bw) {
        G g;
        int y = maxpool2d(g, g.param(x));
        int u = upsample2x(g, g.param(x));
        int l = g.add(probed_sum(g, y, probe), probed_sum(g, u, probe_up));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x}, loss, f.rng, 12) < 1e-5);
}

TEST_CASE("roi_align gradients and values") {
    Fixture f;
    auto& l0 = f.p("l0", {3, 8, 8});
    auto& l1 = f.p("l1", {3, 4, 4});
    std::vector<BoxXYXY> boxes{{2, 2, 14, 10}, {0, 0, 32, 32}, {5, 7, 9, 12}};
    std::vector<int> lv{0, 1, 0};
    Td probe = Td::randn({3, 3, 4, 4}, f.rng);
    auto loss = [&](bool bw) {
        G g;
        int a = g.param(l0), b = g.param(l1);
        int y = roi_align<double>(g, {a, b}, {4, 8}, boxes, lv, 4, 2);
        REQUIRE(g.val(y).shape == std::vector<int>({3, 3, 4, 4}));
        int l = probed_sum(g, y, probe);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&l0, &l1}, loss, f.rng, 12) < 1e-5);

    // constant feature map pools to the constant away from borders
    G g;
    Td flat = Td::full({1, 8, 8}, 3.25);
    int fid = g.constant(flat);
    int y = roi_align<double>(g, {fid}, {4}, {{8, 8, 24, 24}}, {0}, 2, 2);
    for (int i = 0; i < 4; ++i) CHECK(g.val(y)[i] == doctest::Approx(3.25));
}

TEST_CASE("loss op gradients") {
    Fixture f;
    auto& x = f.p("x", {5, 4});
    Rng tr(9);
    Td tgt = Td::randn({5, 4}, tr, 0.7);

    auto loss_l1 = [&](bool bw) {
        G g;
        int l = l1_loss(g, g.param(x), tgt.clone(), 5.0);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x}, loss_l1, f.rng, 10) < 1e-4);

    Td bits({5, 4});
    for (std::int64_t i = 0; i < bits.numel(); ++i) bits[i] = (i % 3 == 0) ? 1.0 : 0.0;
    auto loss_bce = [&](bool bw) {
        G g;
        int l = bce_with_logits(g, g.param(x), bits.clone(), 20.0);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x}, loss_bce, f.rng, 10) < 1e-5);

    auto loss_bcep = [&](bool bw) {
        G g;
        int p = g.sigmoid(g.param(x));
        int l = bce_probs(g, p, bits.clone(), 20.0);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x}, loss_bcep, f.rng, 10) < 1e-5);

    std::vector<int> targets{0, 2, -1, 1, -1};
    auto loss_focal = [&](bool bw) {
        G g;
        int l = focal_loss(g, g.param(x), targets, 0.25, 2.0, 3.0);
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&x}, loss_focal, f.rng, 10) < 1e-5);
}

TEST_CASE("box op gradients") {
    Fixture f;
    auto& d = f.p("d", {4, 4}, 0.4);
    std::vector<BoxXYXY> base{{10, 10, 40, 30}, {5, 5, 20, 25}, {50, 40, 90, 80}, {30, 30, 34, 38}};
    Td gt({4, 4}, {12, 11, 42, 33, 6, 4, 22, 28, 48, 44, 88, 78, 29, 31, 36, 40});
    Td probe = Td::randn({4, 4}, f.rng, 0.3);
    auto loss = [&](bool bw) {
        G g;
        int boxes = apply_box_deltas(g, g.param(d), base, 100, 100);
        int ccwh = xyxy_to_ccwhn(g, boxes, 100, 100);
        Td gtn({4, 4});
        for (int i = 0; i < 4; ++i) {
            BoxCCWH c = xyxy_to_ccwh(BoxXYXY{gt[i * 4 + 0], gt[i * 4 + 1], gt[i * 4 + 2],
                                             gt[i * 4 + 3]},
                                     100, 100);
            gtn[i * 4 + 0] = c.cx;
            gtn[i * 4 + 1] = c.cy;
            gtn[i * 4 + 2] = c.w;
            gtn[i * 4 + 3] = c.h;
        }
        int l = g.add(giou_loss(g, boxes, gt.clone(), 4.0), l1_loss(g, ccwh, gtn, 4.0));
        l = g.add(l, probed_sum(g, boxes, probe));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    CHECK(testutil::max_grad_rel_error(f.ps, {&d}, loss, f.rng, 16) < 1e-4);
}

TEST_CASE("multihead self-attention block gradients") {
    ParamStore<double> ps;
    Rng rng(11);
    auto attn = MultiheadSelfAttention<double>::create(ps, "attn", 8, 2, rng);
    Td x = Td::randn({5, 8}, rng);
    Td probe = Td::randn({5, 8}, rng);
    auto loss = [&](bool bw) {
        G g;
        int y = attn.fwd(g, g.constant(x));
        int l = g.sum_all(g.mul(y, g.constant(probe)));
        if (bw) g.backward(l);
        return g.val(l)[0];
    };
    std::vector<Param<double>*> targets;
    for (std::size_t i = 0; i < ps.size(); ++i) targets.push_back(&ps.at(i));
    CHECK(testutil::max_grad_rel_error(ps, targets, loss, rng, 6) < 1e-4);
}

TEST_CASE("adamw reduces a quadratic and clip bounds the norm") {
    ParamStore<double> ps;
    Rng rng(5);
    auto& p = ps.add("p", Td::randn({8}, rng));
    AdamW<double> opt;
    opt.lr = 0.05;
    opt.weight_decay = 0.0;
    double first = 0, last = 0;
    for (int it = 0; it < 200; ++it) {
        ps.zero_grad();
        G g;
        int x = g.param(p);
        int l = g.sum_all(g.mul(x, x));
        g.backward(l);
        if (it == 0) first = g.val(l)[0];
        last = g.val(l)[0];
        opt.clip_global_norm(ps, 10.0);
        opt.step(ps);
    }
    CHECK(last < 0.01 * first);
}
