#pragma once

#include "core/encoder.hpp"
#include "core/nn.hpp"

namespace dseg {

struct MaskDecoderConfig {
    int channels = 256;
    int pool = 14;        // regional feature resolution
    int resolution = 28;  // output logit grid, one of {14, 28, 56}
    int gn_groups = 8;
};

// Per-box mask logits from cross-attention between each box's dynamic query
// and its pooled regional features: pixels whose features align with the
// query are gated up before the conv head scores them.
template <class T>
class MaskDecoder {
public:
    MaskDecoder(ParamStore<T>& ps, const MaskDecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        require(cfg.resolution == cfg.pool || cfg.resolution == 2 * cfg.pool ||
                    cfg.resolution == 4 * cfg.pool,
                "mask decoder: resolution must be pool, 2*pool or 4*pool");
        int c = cfg.channels;
        wq_ = Linear<T>::create(ps, "mask.wq", c, c, rng);
        wk_ = Linear<T>::create(ps, "mask.wk", c, c, rng);
        wv_ = Linear<T>::create(ps, "mask.wv", c, c, rng);
        conv1_ = Conv2d<T>::create(ps, "mask.c1", c, c, 3, 1, 1, rng);
        gn1_ = GroupNorm<T>::create(ps, "mask.g1", c, cfg.gn_groups);
        conv2_ = Conv2d<T>::create(ps, "mask.c2", c, c / 2, 3, 1, 1, rng);
        gn2_ = GroupNorm<T>::create(ps, "mask.g2", c / 2, cfg.gn_groups / 2 ? cfg.gn_groups / 2 : 1);
        out_ = Conv2d<T>::create(ps, "mask.out", c / 2, 1, 1, 1, 0, rng);
        pos_ = make_position_encoding(cfg.pool, c);
    }

    const MaskDecoderConfig& config() const { return cfg_; }

    // queries: (B, C) rows aligned with boxes; returns (B, R, R) logits
    int predict(Graph<T>& g, const FeaturePyramidT<T>& pyr, int queries,
                const std::vector<BoxXYXY>& boxes) const {
        int b = static_cast<int>(boxes.size());
        int c = cfg_.channels, p = cfg_.pool;
        std::vector<int> levels(pyr.levels.begin(), pyr.levels.end());
        std::vector<int> lv(boxes.size());
        for (std::size_t i = 0; i < boxes.size(); ++i) lv[i] = fpn_level_for_box(boxes[i]);
        int pooled = roi_align<T>(g, levels, {kPyramidStrides.begin(), kPyramidStrides.end()},
                                  boxes, lv, p);                       // (B, C, P, P)
        int px = g.transpose_last2(g.reshape(pooled, {b, c, p * p}));  // (B, P*P, C)
        px = g.add_bcast0(px, g.constant(pos_.clone()));
        int keys = g.reshape(wk_.fwd(g, g.reshape(px, {b * p * p, c})), {b, p * p, c});
        int vals = g.reshape(wv_.fwd(g, g.reshape(px, {b * p * p, c})), {b, p * p, c});
        int q = g.reshape(wq_.fwd(g, queries), {b, c, 1});
        int affinity = g.scale(g.bmm(keys, q), T(1) / std::sqrt(static_cast<T>(c)));  // (B,P*P,1)
        int gate = g.sigmoid(affinity);
        int enhanced = g.add(px, g.mul_bcast_last(vals, gate));
        int x = g.reshape(g.transpose_last2(enhanced), {b, c, p, p});
        x = g.relu(gn1_.fwd(g, conv1_.fwd(g, x)));
        int r = p;
        while (r < cfg_.resolution) {
            x = upsample2x(g, x);
            r *= 2;
        }
        x = g.relu(gn2_.fwd(g, conv2_.fwd(g, x)));
        int logits = out_.fwd(g, x);  // (B, 1, R, R)
        return g.reshape(logits, {b, cfg_.resolution, cfg_.resolution});
    }

private:
    static Tensor<T> make_position_encoding(int p, int c) {
        Tensor<T> e({p * p, c});
        int quarter = c / 4;
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x) {
                T* row = e.data() + (static_cast<std::int64_t>(y) * p + x) * c;
                for (int i = 0; i < quarter; ++i) {
                    double freq = std::exp(-std::log(100.0) * i / quarter);
                    row[4 * i + 0] = static_cast<T>(std::sin(y * freq));
                    row[4 * i + 1] = static_cast<T>(std::cos(y * freq));
                    row[4 * i + 2] = static_cast<T>(std::sin(x * freq));
                    row[4 * i + 3] = static_cast<T>(std::cos(x * freq));
                }
            }
        return e;
    }

    MaskDecoderConfig cfg_;
    Linear<T> wq_, wk_, wv_;
    Conv2d<T> conv1_, conv2_, out_;
    GroupNorm<T> gn1_, gn2_;
    Tensor<T> pos_;
};

// Bilinear paste of an R x R logit grid into the (half-open) pixel extent of
// its box; prob >= threshold becomes mask support. Masks may overlap across
// instances, no exclusivity is enforced.
template <class T>
std::vector<Mask> paste_masks(const Tensor<T>& logits, const std::vector<BoxXYXY>& boxes,
                              int img_w, int img_h, double threshold) {
    require(threshold > 0.0 && threshold < 1.0, "paste_masks: threshold must be in (0,1)");
    require(logits.ndim() == 3 && logits.dim(0) == static_cast<int>(boxes.size()),
            "paste_masks: logits/boxes mismatch");
    int r = logits.dim(1);
    // compare in logit space
    double logit_thr = std::log(threshold / (1.0 - threshold));
    std::vector<Mask> out(boxes.size());
    for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
        const BoxXYXY& b = boxes[bi];
        int ix0 = std::clamp(static_cast<int>(std::floor(b.x0 + 0.5)), 0, img_w);
        int iy0 = std::clamp(static_cast<int>(std::floor(b.y0 + 0.5)), 0, img_h);
        int ix1 = std::clamp(static_cast<int>(std::floor(b.x1 + 0.5)), ix0, img_w);
        int iy1 = std::clamp(static_cast<int>(std::floor(b.y1 + 0.5)), iy0, img_h);
        Mask& m = out[bi];
        m.x0 = ix0;
        m.y0 = iy0;
        m.width = ix1 - ix0;
        m.height = iy1 - iy0;
        m.data.assign(static_cast<std::size_t>(m.width) * m.height, 0);
        if (m.width == 0 || m.height == 0 || b.width() <= 0 || b.height() <= 0) continue;
        const T* grid = logits.data() + static_cast<std::int64_t>(bi) * r * r;
        auto sample = [&](double gy, double gx) {
            gy = std::clamp(gy, 0.0, static_cast<double>(r - 1));
            gx = std::clamp(gx, 0.0, static_cast<double>(r - 1));
            int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
            int y1 = std::min(y0 + 1, r - 1), x1 = std::min(x0 + 1, r - 1);
            double fy = gy - y0, fx = gx - x0;
            double v00 = grid[y0 * r + x0], v01 = grid[y0 * r + x1];
            double v10 = grid[y1 * r + x0], v11 = grid[y1 * r + x1];
            return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        };
        for (int y = iy0; y < iy1; ++y)
            for (int x = ix0; x < ix1; ++x) {
                double gy = (y + 0.5 - b.y0) / b.height() * r - 0.5;
                double gx = (x + 0.5 - b.x0) / b.width() * r - 0.5;
                if (sample(gy, gx) >= logit_thr)
                    m.data[static_cast<std::size_t>(y - iy0) * m.width + (x - ix0)] = 1;
            }
    }
    return out;
}

// point-sampled R x R binary target of a ground-truth mask inside its box
template <class T>
Tensor<T> rasterize_mask_to_grid(const Mask& mask, const BoxXYXY& box, int r) {
    Tensor<T> grid({r, r});
    if (box.width() <= 0 || box.height() <= 0) return grid;
    for (int gy = 0; gy < r; ++gy)
        for (int gx = 0; gx < r; ++gx) {
            double y = box.y0 + (gy + 0.5) / r * box.height();
            double x = box.x0 + (gx + 0.5) / r * box.width();
            grid[static_cast<std::int64_t>(gy) * r + gx] =
                mask.at(static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y))) ? T(1)
                                                                                          : T(0);
        }
    return grid;
}

}  // namespace dseg
