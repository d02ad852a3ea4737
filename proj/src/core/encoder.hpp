#pragma once

#include <array>
#include <cmath>

#include "core/nn.hpp"

namespace dseg {

inline constexpr std::array<int, 4> kPyramidStrides{4, 8, 16, 32};

// standard FPN scale rule: sqrt(area) 224 at level 4, clamped to [2, 5];
// returned index is into the stride array (0 => stride 4)
inline int fpn_level_for_box(const BoxXYXY& b) {
    double side = std::sqrt(std::max(b.area(), 1e-8));
    int k = static_cast<int>(std::floor(4.0 + std::log2(side / 224.0 + 1e-12)));
    return std::clamp(k, 2, 5) - 2;
}

template <class T>
struct FeaturePyramidT {
    std::array<int, 4> levels{-1, -1, -1, -1};  // graph nodes, (C, H_l, W_l)
};

template <class T>
struct DisentangledFeaturesT {
    FeaturePyramidT<T> det;
    FeaturePyramidT<T> mask;
};

struct EncoderConfig {
    int channels = 256;       // pyramid width C
    int backbone_width = 32;  // first-stage width, doubled per stage
    int gn_groups = 8;
};

template <class T>
class Encoder {
public:
    Encoder(ParamStore<T>& ps, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        int w = cfg.backbone_width, c = cfg.channels;
        stem_ = Conv2d<T>::create(ps, "enc.stem", 3, w, 3, 2, 1, rng);
        stem_gn_ = GroupNorm<T>::create(ps, "enc.stem.gn", w, cfg.gn_groups);
        stage_[0] = Stage(ps, "enc.s1", w, w, cfg.gn_groups, rng);
        stage_[1] = Stage(ps, "enc.s2", w, 2 * w, cfg.gn_groups, rng);
        stage_[2] = Stage(ps, "enc.s3", 2 * w, 4 * w, cfg.gn_groups, rng);
        int widths[3] = {w, 2 * w, 4 * w};
        for (int i = 0; i < 3; ++i)
            lateral_[i] = Conv2d<T>::create(ps, "enc.fpn.lat" + std::to_string(i), widths[i], c, 1,
                                            1, 0, rng);
        for (int i = 0; i < 3; ++i)
            smooth_[i] = Conv2d<T>::create(ps, "enc.fpn.smooth" + std::to_string(i), c, c, 3, 1, 1,
                                           rng);
        extra_ = Conv2d<T>::create(ps, "enc.fpn.p5", c, c, 3, 2, 1, rng);
        for (int i = 0; i < 2; ++i) {
            det_proj_[i] = Conv2d<T>::create(ps, "enc.det.proj" + std::to_string(i), c, c, 3, 1, 1,
                                             rng);
            det_gn_[i] = GroupNorm<T>::create(ps, "enc.det.gn" + std::to_string(i), c,
                                              cfg.gn_groups);
            mask_proj_[i] = Conv2d<T>::create(ps, "enc.mask.proj" + std::to_string(i), c, c, 3, 1,
                                              1, rng);
            mask_gn_[i] = GroupNorm<T>::create(ps, "enc.mask.gn" + std::to_string(i), c,
                                               cfg.gn_groups);
        }
    }

    // image: (3, H, W) in (-1, 1); pads bottom/right to a multiple of 32
    DisentangledFeaturesT<T> encode(Graph<T>& g, const Tensor<T>& image) const {
        require(image.ndim() == 3 && image.dim(0) == 3, "encode: expect 3xHxW input");
        int h = image.dim(1), w = image.dim(2);
        require(h >= 32 && w >= 32, "encode: image smaller than 32px");
        int hp = (h + 31) / 32 * 32, wp = (w + 31) / 32 * 32;
        Tensor<T> padded({1, 3, hp, wp});
        for (int ci = 0; ci < 3; ++ci)
            for (int y = 0; y < h; ++y)
                std::copy_n(image.data() + (static_cast<std::int64_t>(ci) * h + y) * w, w,
                            padded.data() + ((static_cast<std::int64_t>(ci) * hp) + y) * wp);
        int x = g.constant(std::move(padded));
        x = g.relu(stem_gn_.fwd(g, stem_.fwd(g, x)));
        int c2 = stage_[0].fwd(g, x);
        int c3 = stage_[1].fwd(g, c2);
        int c4 = stage_[2].fwd(g, c3);
        int p4 = lateral_[2].fwd(g, c4);
        int p3 = g.add(lateral_[1].fwd(g, c3), upsample2x(g, p4));
        int p2 = g.add(lateral_[0].fwd(g, c2), upsample2x(g, p3));
        p2 = smooth_[0].fwd(g, p2);
        p3 = smooth_[1].fwd(g, p3);
        p4 = smooth_[2].fwd(g, p4);
        int p5 = extra_.fwd(g, p4);
        std::array<int, 4> base{p2, p3, p4, p5};
        DisentangledFeaturesT<T> out;
        for (int i = 0; i < 4; ++i) {
            out.det.levels[static_cast<std::size_t>(i)] =
                branch(g, base[static_cast<std::size_t>(i)], det_proj_, det_gn_);
            out.mask.levels[static_cast<std::size_t>(i)] =
                branch(g, base[static_cast<std::size_t>(i)], mask_proj_, mask_gn_);
        }
        // strip the batch dim: levels are (C, H, W)
        for (int i = 0; i < 4; ++i) {
            auto squeeze = [&](int id) {
                const auto& v = g.val(id);
                return g.reshape(id, {v.dim(1), v.dim(2), v.dim(3)});
            };
            out.det.levels[static_cast<std::size_t>(i)] =
                squeeze(out.det.levels[static_cast<std::size_t>(i)]);
            out.mask.levels[static_cast<std::size_t>(i)] =
                squeeze(out.mask.levels[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    const EncoderConfig& config() const { return cfg_; }

private:
    struct Stage {
        Conv2d<T> conv1, conv2, conv3, conv4, skip;
        GroupNorm<T> gn1, gn2, gn3, gn4, gn_skip;

        Stage() = default;
        Stage(ParamStore<T>& ps, const std::string& name, int cin, int cout, int groups,
              Rng& rng) {
            conv1 = Conv2d<T>::create(ps, name + ".c1", cin, cout, 3, 2, 1, rng);
            gn1 = GroupNorm<T>::create(ps, name + ".g1", cout, groups);
            conv2 = Conv2d<T>::create(ps, name + ".c2", cout, cout, 3, 1, 1, rng);
            gn2 = GroupNorm<T>::create(ps, name + ".g2", cout, groups);
            skip = Conv2d<T>::create(ps, name + ".sk", cin, cout, 1, 2, 0, rng);
            gn_skip = GroupNorm<T>::create(ps, name + ".gsk", cout, groups);
            conv3 = Conv2d<T>::create(ps, name + ".c3", cout, cout, 3, 1, 1, rng);
            gn3 = GroupNorm<T>::create(ps, name + ".g3", cout, groups);
            conv4 = Conv2d<T>::create(ps, name + ".c4", cout, cout, 3, 1, 1, rng);
            gn4 = GroupNorm<T>::create(ps, name + ".g4", cout, groups);
        }
        int fwd(Graph<T>& g, int x) const {
            // downsampling residual block
            int y = g.relu(gn1.fwd(g, conv1.fwd(g, x)));
            y = gn2.fwd(g, conv2.fwd(g, y));
            int s = gn_skip.fwd(g, skip.fwd(g, x));
            x = g.relu(g.add(y, s));
            // identity residual block
            y = g.relu(gn3.fwd(g, conv3.fwd(g, x)));
            y = gn4.fwd(g, conv4.fwd(g, y));
            return g.relu(g.add(y, x));
        }
    };

    int branch(Graph<T>& g, int x, const std::array<Conv2d<T>, 2>& proj,
               const std::array<GroupNorm<T>, 2>& gn) const {
        for (int i = 0; i < 2; ++i)
            x = g.relu(gn[static_cast<std::size_t>(i)].fwd(
                g, proj[static_cast<std::size_t>(i)].fwd(g, x)));
        return x;
    }

    EncoderConfig cfg_;
    Conv2d<T> stem_;
    GroupNorm<T> stem_gn_;
    std::array<Stage, 3> stage_;
    std::array<Conv2d<T>, 3> lateral_;
    std::array<Conv2d<T>, 3> smooth_;
    Conv2d<T> extra_;
    std::array<Conv2d<T>, 2> det_proj_, mask_proj_;
    std::array<GroupNorm<T>, 2> det_gn_, mask_gn_;
};

}  // namespace dseg
