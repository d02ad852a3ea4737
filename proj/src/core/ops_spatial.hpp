#pragma once

#include <memory>

#include "core/graph.hpp"

namespace dseg {

// conv over (B, Cin, H, W) with OIHW weights; im2col + GEMM per batch item.
// The column matrix is kept alive for the backward pass.
template <class T>
int conv2d(Graph<T>& g, int input, int weight, int bias, int stride, int pad) {
    using Tn = Tensor<T>;
    const Tn& X = g.val(input);
    const Tn& W = g.val(weight);
    require(X.ndim() == 4 && W.ndim() == 4 && X.dim(1) == W.dim(1), "conv2d: shape mismatch");
    int bs = X.dim(0), cin = X.dim(1), h = X.dim(2), w = X.dim(3);
    int cout = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (w + 2 * pad - kw) / stride + 1;
    require(ho > 0 && wo > 0, "conv2d: empty output");
    int ikk = cin * kh * kw;
    std::int64_t hwo = static_cast<std::int64_t>(ho) * wo;

    auto cols = std::make_shared<std::vector<Tn>>();
    cols->reserve(static_cast<std::size_t>(bs));
    Tn out({bs, cout, ho, wo});
    for (int b = 0; b < bs; ++b) {
        Tn col({ikk, static_cast<int>(hwo)});
        const T* xb = X.data() + static_cast<std::int64_t>(b) * cin * h * w;
        T* cd = col.data();
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* row = cd + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * hwo;
                    for (int oy = 0; oy < ho; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) {
                            std::fill_n(row + static_cast<std::int64_t>(oy) * wo, wo, T(0));
                            continue;
                        }
                        const T* xrow = xb + (static_cast<std::int64_t>(ci) * h + iy) * w;
                        for (int ox = 0; ox < wo; ++ox) {
                            int ix = ox * stride - pad + kx;
                            row[static_cast<std::int64_t>(oy) * wo + ox] =
                                (ix >= 0 && ix < w) ? xrow[ix] : T(0);
                        }
                    }
                }
        out.mat_at(static_cast<std::int64_t>(b) * cout * hwo, cout, static_cast<int>(hwo))
            .noalias() = W.mat(cout, ikk) * col.mat(ikk, static_cast<int>(hwo));
        cols->push_back(std::move(col));
    }
    if (bias >= 0) {
        const Tn& Bv = g.val(bias);
        for (int b = 0; b < bs; ++b)
            for (int co = 0; co < cout; ++co) {
                T* o = out.data() + (static_cast<std::int64_t>(b) * cout + co) * hwo;
                for (std::int64_t i = 0; i < hwo; ++i) o[i] += Bv[co];
            }
    }

    auto back = [input, weight, bias, bs, cin, h, w, cout, kh, kw, ho, wo, stride, pad, ikk, hwo,
                 cols](Graph<T>& g, int self) {
        const Tn& go = g.grad_of(self);
        const Tn& W = g.val(weight);
        for (int b = 0; b < bs; ++b) {
            auto dY = go.mat_at(static_cast<std::int64_t>(b) * cout * hwo, cout,
                                static_cast<int>(hwo));
            if (g.needs_grad(weight))
                g.grad_of(weight).mat(cout, ikk).noalias() +=
                    dY * (*cols)[static_cast<std::size_t>(b)]
                             .mat(ikk, static_cast<int>(hwo))
                             .transpose();
            if (g.needs_grad(input)) {
                Tn dcol({ikk, static_cast<int>(hwo)});
                dcol.mat(ikk, static_cast<int>(hwo)).noalias() = W.mat(cout, ikk).transpose() * dY;
                T* gx = g.grad_of(input).data() + static_cast<std::int64_t>(b) * cin * h * w;
                const T* cd = dcol.data();
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const T* row =
                                cd + (static_cast<std::int64_t>(ci) * kh * kw + ky * kw + kx) * hwo;
                            for (int oy = 0; oy < ho; ++oy) {
                                int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= h) continue;
                                T* xrow = gx + (static_cast<std::int64_t>(ci) * h + iy) * w;
                                for (int ox = 0; ox < wo; ++ox) {
                                    int ix = ox * stride - pad + kx;
                                    if (ix >= 0 && ix < w)
                                        xrow[ix] += row[static_cast<std::int64_t>(oy) * wo + ox];
                                }
                            }
                        }
            }
        }
        if (bias >= 0 && g.needs_grad(bias)) {
            Tn& gb = g.grad_of(bias);
            for (int b = 0; b < bs; ++b)
                for (int co = 0; co < cout; ++co) {
                    const T* o = go.data() + (static_cast<std::int64_t>(b) * cout + co) * hwo;
                    T acc = 0;
                    for (std::int64_t i = 0; i < hwo; ++i) acc += o[i];
                    gb[co] += acc;
                }
        }
    };
    return g.make(std::move(out), {input, weight}, std::move(back));
}

// 2x2 max pooling, stride 2; spatial dims must be even
template <class T>
int maxpool2d(Graph<T>& g, int input) {
    using Tn = Tensor<T>;
    const Tn& X = g.val(input);
    require(X.ndim() == 4 && X.dim(2) % 2 == 0 && X.dim(3) % 2 == 0, "maxpool2d: expect even BCHW");
    int bs = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    int ho = h / 2, wo = w / 2;
    Tn out({bs, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.numel());
    std::int64_t oi = 0;
    for (int bc = 0; bc < bs * c; ++bc) {
        const T* x = X.data() + static_cast<std::int64_t>(bc) * h * w;
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox, ++oi) {
                std::int64_t base = static_cast<std::int64_t>(2 * oy) * w + 2 * ox;
                std::int64_t best = base;
                T bv = x[base];
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        std::int64_t k = base + static_cast<std::int64_t>(dy) * w + dx;
                        if (x[k] > bv) {
                            bv = x[k];
                            best = k;
                        }
                    }
                out[oi] = bv;
                (*argmax)[static_cast<std::size_t>(oi)] =
                    static_cast<std::int64_t>(bc) * h * w + best;
            }
    }
    return g.make(std::move(out), {input}, [input, argmax](Graph<T>& g, int self) {
        const Tn& go = g.grad_of(self);
        Tn& gx = g.grad_of(input);
        for (std::int64_t i = 0; i < go.numel(); ++i)
            gx[(*argmax)[static_cast<std::size_t>(i)]] += go[i];
    });
}

// factor-2 bilinear upsampling, align_corners=false
template <class T>
int upsample2x(Graph<T>& g, int input) {
    using Tn = Tensor<T>;
    const Tn& X = g.val(input);
    require(X.ndim() == 4, "upsample2x: expect BCHW");
    int bs = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    int ho = 2 * h, wo = 2 * w;
    Tn out({bs, c, ho, wo});
    // per output pixel: source coordinate and the 4-tap weights
    auto taps = [&](int o, int n, int& lo, int& hi, T& wl) {
        T src = (static_cast<T>(o) + T(0.5)) / T(2) - T(0.5);
        if (src < T(0)) src = T(0);
        lo = static_cast<int>(src);
        if (lo >= n - 1) {
            lo = hi = n - 1;
            wl = T(1);
        } else {
            hi = lo + 1;
            wl = T(1) - (src - static_cast<T>(lo));
        }
    };
    for (int bc = 0; bc < bs * c; ++bc) {
        const T* x = X.data() + static_cast<std::int64_t>(bc) * h * w;
        T* o = out.data() + static_cast<std::int64_t>(bc) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            int y0, y1;
            T wy;
            taps(oy, h, y0, y1, wy);
            for (int ox = 0; ox < wo; ++ox) {
                int x0, x1;
                T wx;
                taps(ox, w, x0, x1, wx);
                o[static_cast<std::int64_t>(oy) * wo + ox] =
                    wy * (wx * x[static_cast<std::int64_t>(y0) * w + x0] +
                          (T(1) - wx) * x[static_cast<std::int64_t>(y0) * w + x1]) +
                    (T(1) - wy) * (wx * x[static_cast<std::int64_t>(y1) * w + x0] +
                                   (T(1) - wx) * x[static_cast<std::int64_t>(y1) * w + x1]);
            }
        }
    }
    return g.make(std::move(out), {input}, [input, bs, c, h, w, ho, wo, taps](Graph<T>& g,
                                                                              int self) {
        const Tn& go = g.grad_of(self);
        Tn& gx = g.grad_of(input);
        for (int bc = 0; bc < bs * c; ++bc) {
            T* gxp = gx.data() + static_cast<std::int64_t>(bc) * h * w;
            const T* gop = go.data() + static_cast<std::int64_t>(bc) * ho * wo;
            for (int oy = 0; oy < ho; ++oy) {
                int y0, y1;
                T wy;
                taps(oy, h, y0, y1, wy);
                for (int ox = 0; ox < wo; ++ox) {
                    int x0, x1;
                    T wx;
                    taps(ox, w, x0, x1, wx);
                    T v = gop[static_cast<std::int64_t>(oy) * wo + ox];
                    gxp[static_cast<std::int64_t>(y0) * w + x0] += wy * wx * v;
                    gxp[static_cast<std::int64_t>(y0) * w + x1] += wy * (T(1) - wx) * v;
                    gxp[static_cast<std::int64_t>(y1) * w + x0] += (T(1) - wy) * wx * v;
                    gxp[static_cast<std::int64_t>(y1) * w + x1] += (T(1) - wy) * (T(1) - wx) * v;
                }
            }
        }
    });
}

namespace detail {
// standard RoIAlign bilinear tap with border handling
template <class T>
struct Tap {
    std::int64_t idx[4];
    T w[4];
    bool inside;
};
template <class T>
Tap<T> bilinear_tap(int h, int w, T y, T x) {
    Tap<T> t{};
    if (y < T(-1) || y > static_cast<T>(h) || x < T(-1) || x > static_cast<T>(w)) {
        t.inside = false;
        return t;
    }
    t.inside = true;
    if (y <= T(0)) y = T(0);
    if (x <= T(0)) x = T(0);
    int y_low = static_cast<int>(y), x_low = static_cast<int>(x);
    int y_high, x_high;
    if (y_low >= h - 1) {
        y_high = y_low = h - 1;
        y = static_cast<T>(y_low);
    } else {
        y_high = y_low + 1;
    }
    if (x_low >= w - 1) {
        x_high = x_low = w - 1;
        x = static_cast<T>(x_low);
    } else {
        x_high = x_low + 1;
    }
    T ly = y - static_cast<T>(y_low), lx = x - static_cast<T>(x_low);
    T hy = T(1) - ly, hx = T(1) - lx;
    t.idx[0] = static_cast<std::int64_t>(y_low) * w + x_low;
    t.idx[1] = static_cast<std::int64_t>(y_low) * w + x_high;
    t.idx[2] = static_cast<std::int64_t>(y_high) * w + x_low;
    t.idx[3] = static_cast<std::int64_t>(y_high) * w + x_high;
    t.w[0] = hy * hx;
    t.w[1] = hy * lx;
    t.w[2] = ly * hx;
    t.w[3] = ly * lx;
    return t;
}
}  // namespace detail

// RoIAlign (aligned, sampling_ratio fixed) over single-image pyramid levels.
// levels[i] is a (C, H_i, W_i) node; each box samples the level given by
// level_idx. Output is (B, C, P, P).
template <class T>
int roi_align(Graph<T>& g, const std::vector<int>& levels, const std::vector<int>& strides,
              const std::vector<BoxXYXY>& boxes, const std::vector<int>& level_idx, int pool,
              int sampling = 2) {
    using Tn = Tensor<T>;
    require(!levels.empty() && levels.size() == strides.size(), "roi_align: bad levels");
    require(boxes.size() == level_idx.size(), "roi_align: box/level mismatch");
    int nb = static_cast<int>(boxes.size());
    int c = g.val(levels[0]).dim(0);
    Tn out({nb, c, pool, pool});
    // record taps for backward: per box, per bin, per sample
    struct BoxTaps {
        int level;
        std::vector<detail::Tap<T>> taps;  // pool*pool*sampling*sampling
    };
    auto all = std::make_shared<std::vector<BoxTaps>>(static_cast<std::size_t>(nb));
    int s2 = sampling * sampling;
    for (int b = 0; b < nb; ++b) {
        int li = level_idx[static_cast<std::size_t>(b)];
        const Tn& F = g.val(levels[static_cast<std::size_t>(li)]);
        int h = F.dim(1), w = F.dim(2);
        T sc = T(1) / static_cast<T>(strides[static_cast<std::size_t>(li)]);
        const BoxXYXY& bx = boxes[static_cast<std::size_t>(b)];
        T x0 = static_cast<T>(bx.x0) * sc - T(0.5), y0 = static_cast<T>(bx.y0) * sc - T(0.5);
        T x1 = static_cast<T>(bx.x1) * sc - T(0.5), y1 = static_cast<T>(bx.y1) * sc - T(0.5);
        T rw = std::max(x1 - x0, T(1e-6)), rh = std::max(y1 - y0, T(1e-6));
        T bw = rw / static_cast<T>(pool), bh = rh / static_cast<T>(pool);
        BoxTaps& bt = (*all)[static_cast<std::size_t>(b)];
        bt.level = li;
        bt.taps.resize(static_cast<std::size_t>(pool) * pool * s2);
        std::size_t ti = 0;
        for (int py = 0; py < pool; ++py)
            for (int px = 0; px < pool; ++px)
                for (int sy = 0; sy < sampling; ++sy)
                    for (int sx = 0; sx < sampling; ++sx, ++ti) {
                        T yy = y0 + static_cast<T>(py) * bh +
                               (static_cast<T>(sy) + T(0.5)) * bh / static_cast<T>(sampling);
                        T xx = x0 + static_cast<T>(px) * bw +
                               (static_cast<T>(sx) + T(0.5)) * bw / static_cast<T>(sampling);
                        bt.taps[ti] = detail::bilinear_tap<T>(h, w, yy, xx);
                    }
        std::int64_t hw = static_cast<std::int64_t>(h) * w;
        for (int ci = 0; ci < c; ++ci) {
            const T* f = F.data() + static_cast<std::int64_t>(ci) * hw;
            T* o = out.data() + ((static_cast<std::int64_t>(b) * c + ci) * pool * pool);
            ti = 0;
            for (int pp = 0; pp < pool * pool; ++pp) {
                T acc = 0;
                for (int s = 0; s < s2; ++s, ++ti) {
                    const auto& tp = bt.taps[ti];
                    if (!tp.inside) continue;
                    acc += tp.w[0] * f[tp.idx[0]] + tp.w[1] * f[tp.idx[1]] +
                           tp.w[2] * f[tp.idx[2]] + tp.w[3] * f[tp.idx[3]];
                }
                o[pp] = acc / static_cast<T>(s2);
            }
        }
    }
    std::initializer_list<int> parents_dummy = {};
    (void)parents_dummy;
    bool needs = false;
    for (int l : levels) needs = needs || g.needs_grad(l);
    typename Graph<T>::Node node;
    node.val = std::move(out);
    node.needs_grad = needs;
    if (needs) {
        std::vector<int> levs = levels;
        node.back = [levs, all, nb, c, pool, s2](Graph<T>& g, int self) {
            const Tn& go = g.grad_of(self);
            for (int b = 0; b < nb; ++b) {
                const auto& bt = (*all)[static_cast<std::size_t>(b)];
                int lid = levs[static_cast<std::size_t>(bt.level)];
                if (!g.needs_grad(lid)) continue;
                Tn& gf = g.grad_of(lid);
                std::int64_t hw = static_cast<std::int64_t>(gf.dim(1)) * gf.dim(2);
                for (int ci = 0; ci < c; ++ci) {
                    T* gfp = gf.data() + static_cast<std::int64_t>(ci) * hw;
                    const T* gop = go.data() + ((static_cast<std::int64_t>(b) * c + ci) * pool * pool);
                    std::size_t ti = 0;
                    for (int pp = 0; pp < pool * pool; ++pp) {
                        T v = gop[pp] / static_cast<T>(s2);
                        for (int s = 0; s < s2; ++s, ++ti) {
                            const auto& tp = bt.taps[ti];
                            if (!tp.inside) continue;
                            gfp[tp.idx[0]] += tp.w[0] * v;
                            gfp[tp.idx[1]] += tp.w[1] * v;
                            gfp[tp.idx[2]] += tp.w[2] * v;
                            gfp[tp.idx[3]] += tp.w[3] * v;
                        }
                    }
                }
            }
        };
    }
    g.nodes.push_back(std::move(node));
    return static_cast<int>(g.nodes.size()) - 1;
}

}  // namespace dseg
