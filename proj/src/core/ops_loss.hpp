#pragma once

#include "core/graph.hpp"

namespace dseg {

template <class T>
int l1_loss(Graph<T>& g, int pred, Tensor<T> target, T norm) {
    using Tn = Tensor<T>;
    const Tn& P = g.val(pred);
    require(P.shape == target.shape, "l1_loss: shape mismatch");
    T s = 0;
    for (std::int64_t i = 0; i < P.numel(); ++i) s += std::abs(P[i] - target[i]);
    Tn out({1});
    out[0] = s / norm;
    return g.make(std::move(out), {pred}, [pred, target = std::move(target), norm](Graph<T>& g,
                                                                                   int self) {
        T go = g.grad_of(self)[0] / norm;
        const Tn& P = g.val(pred);
        Tn& gp = g.grad_of(pred);
        for (std::int64_t i = 0; i < P.numel(); ++i) {
            T d = P[i] - target[i];
            gp[i] += go * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
        }
    });
}

// numerically stable binary cross entropy on logits, sum / norm
template <class T>
int bce_with_logits(Graph<T>& g, int logits, Tensor<T> target, T norm) {
    using Tn = Tensor<T>;
    const Tn& X = g.val(logits);
    require(X.shape == target.shape, "bce_with_logits: shape mismatch");
    T s = 0;
    for (std::int64_t i = 0; i < X.numel(); ++i) {
        T x = X[i], y = target[i];
        s += std::max(x, T(0)) - x * y + Graph<T>::softplus(-std::abs(x));
    }
    Tn out({1});
    out[0] = s / norm;
    return g.make(std::move(out), {logits},
                  [logits, target = std::move(target), norm](Graph<T>& g, int self) {
                      T go = g.grad_of(self)[0] / norm;
                      const Tn& X = g.val(logits);
                      Tn& gx = g.grad_of(logits);
                      for (std::int64_t i = 0; i < X.numel(); ++i)
                          gx[i] += go * (Graph<T>::stable_sigmoid(X[i]) - target[i]);
                  });
}

// BCE on probabilities with clipping; gradient is zero where the clip binds
template <class T>
int bce_probs(Graph<T>& g, int probs, Tensor<T> target, T norm, T clip = T(1e-7)) {
    using Tn = Tensor<T>;
    const Tn& P = g.val(probs);
    require(P.shape == target.shape, "bce_probs: shape mismatch");
    T s = 0;
    for (std::int64_t i = 0; i < P.numel(); ++i) {
        T p = std::clamp(P[i], clip, T(1) - clip);
        s -= target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p);
    }
    Tn out({1});
    out[0] = s / norm;
    return g.make(std::move(out), {probs},
                  [probs, target = std::move(target), norm, clip](Graph<T>& g, int self) {
                      T go = g.grad_of(self)[0] / norm;
                      const Tn& P = g.val(probs);
                      Tn& gp = g.grad_of(probs);
                      for (std::int64_t i = 0; i < P.numel(); ++i) {
                          if (P[i] <= clip || P[i] >= T(1) - clip) continue;
                          gp[i] += go * (P[i] - target[i]) / (P[i] * (T(1) - P[i]));
                      }
                  });
}

// sigmoid focal loss over (N, K) logits; targets[n] in [0, K) or -1 for
// background. Sum over all entries / norm.
template <class T>
int focal_loss(Graph<T>& g, int logits, std::vector<int> targets, T alpha, T gamma, T norm) {
    using Tn = Tensor<T>;
    const Tn& X = g.val(logits);
    require(X.ndim() == 2 && X.dim(0) == static_cast<int>(targets.size()),
            "focal_loss: shape mismatch");
    int n = X.dim(0), k = X.dim(1);
    T s = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            T x = X[static_cast<std::int64_t>(i) * k + j];
            T p = Graph<T>::stable_sigmoid(x);
            T log_p = -Graph<T>::softplus(-x);
            T log_1mp = -Graph<T>::softplus(x);
            if (targets[static_cast<std::size_t>(i)] == j)
                s += -alpha * std::pow(T(1) - p, gamma) * log_p;
            else
                s += -(T(1) - alpha) * std::pow(p, gamma) * log_1mp;
        }
    Tn out({1});
    out[0] = s / norm;
    return g.make(
        std::move(out), {logits},
        [logits, targets = std::move(targets), alpha, gamma, norm, n, k](Graph<T>& g, int self) {
            T go = g.grad_of(self)[0] / norm;
            const Tn& X = g.val(logits);
            Tn& gx = g.grad_of(logits);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    T x = X[static_cast<std::int64_t>(i) * k + j];
                    T p = Graph<T>::stable_sigmoid(x);
                    T log_p = -Graph<T>::softplus(-x);
                    T log_1mp = -Graph<T>::softplus(x);
                    T d;
                    if (targets[static_cast<std::size_t>(i)] == j)
                        d = alpha * (gamma * p * std::pow(T(1) - p, gamma) * log_p -
                                     std::pow(T(1) - p, gamma + T(1)));
                    else
                        d = (T(1) - alpha) * (std::pow(p, gamma + T(1)) -
                                              gamma * std::pow(p, gamma) * (T(1) - p) * log_1mp);
                    gx[static_cast<std::int64_t>(i) * k + j] += go * d;
                }
        });
}

namespace detail {
// d(giou)/d(pred corners) for one pair, written into dst[4]
template <class T>
void giou_grad(const T* a, const T* b, T* dst, T upstream) {
    T ax0 = a[0], ay0 = a[1], ax1 = a[2], ay1 = a[3];
    T bx0 = b[0], by0 = b[1], bx1 = b[2], by1 = b[3];
    T aw = ax1 - ax0, ah = ay1 - ay0;
    T area_a = aw * ah, area_b = (bx1 - bx0) * (by1 - by0);
    T iw = std::min(ax1, bx1) - std::max(ax0, bx0);
    T ih = std::min(ay1, by1) - std::max(ay0, by0);
    T inter = (iw > T(0) && ih > T(0)) ? iw * ih : T(0);
    T uni = area_a + area_b - inter;
    T hw = std::max(ax1, bx1) - std::min(ax0, bx0);
    T hh = std::max(ay1, by1) - std::min(ay0, by0);
    T hull = hw * hh;
    // partials of (inter, union, hull) in x0, y0, x1, y1 of the prediction
    T dI[4] = {0, 0, 0, 0}, dA[4], dH[4];
    if (inter > T(0)) {
        dI[0] = (ax0 >= bx0) ? -ih : T(0);
        dI[2] = (ax1 <= bx1) ? ih : T(0);
        dI[1] = (ay0 >= by0) ? -iw : T(0);
        dI[3] = (ay1 <= by1) ? iw : T(0);
    }
    dA[0] = -ah;
    dA[2] = ah;
    dA[1] = -aw;
    dA[3] = aw;
    dH[0] = (ax0 <= bx0) ? -hh : T(0);
    dH[2] = (ax1 >= bx1) ? hh : T(0);
    dH[1] = (ay0 <= by0) ? -hw : T(0);
    dH[3] = (ay1 >= by1) ? hw : T(0);
    for (int j = 0; j < 4; ++j) {
        T dU = dA[j] - dI[j];
        T d_iou = uni > T(0) ? (dI[j] * uni - inter * dU) / (uni * uni) : T(0);
        T d_pen = hull > T(0) ? (dU * hull - uni * dH[j]) / (hull * hull) : T(0);
        // giou = inter/union - (hull - union)/hull = iou - 1 + union/hull
        dst[j] += upstream * (d_iou + d_pen);
    }
}
}  // namespace detail

// sum of (1 - giou(pred_i, gt_i)) / norm over (M, 4) xyxy rows
template <class T>
int giou_loss(Graph<T>& g, int pred, Tensor<T> gt, T norm) {
    using Tn = Tensor<T>;
    const Tn& P = g.val(pred);
    require(P.shape == gt.shape && P.ndim() == 2 && P.dim(1) == 4, "giou_loss: bad shapes");
    int m = P.dim(0);
    T s = 0;
    for (int i = 0; i < m; ++i) {
        const T* a = P.data() + static_cast<std::int64_t>(i) * 4;
        const T* b = gt.data() + static_cast<std::int64_t>(i) * 4;
        BoxXYXY ba{static_cast<double>(a[0]), static_cast<double>(a[1]), static_cast<double>(a[2]),
                   static_cast<double>(a[3])};
        BoxXYXY bb{static_cast<double>(b[0]), static_cast<double>(b[1]), static_cast<double>(b[2]),
                   static_cast<double>(b[3])};
        s += T(1) - static_cast<T>(giou(ba, bb));
    }
    Tn out({1});
    out[0] = s / norm;
    return g.make(std::move(out), {pred},
                  [pred, gt = std::move(gt), norm, m](Graph<T>& g, int self) {
                      T go = g.grad_of(self)[0] / norm;
                      const Tn& P = g.val(pred);
                      Tn& gp = g.grad_of(pred);
                      for (int i = 0; i < m; ++i)
                          detail::giou_grad<T>(P.data() + static_cast<std::int64_t>(i) * 4,
                                               gt.data() + static_cast<std::int64_t>(i) * 4,
                                               gp.data() + static_cast<std::int64_t>(i) * 4, -go);
                  });
}

// scale-invariant box regression: deltas (N,4) applied to base boxes, output
// absolute xyxy clamped to the image. Gradients vanish where clamps bind.
template <class T>
int apply_box_deltas(Graph<T>& g, int deltas, std::vector<BoxXYXY> base, double img_w,
                     double img_h, T max_dwh = T(4.135)) {
    using Tn = Tensor<T>;
    const Tn& D = g.val(deltas);
    int n = static_cast<int>(base.size());
    require(D.ndim() == 2 && D.dim(0) == n && D.dim(1) == 4, "apply_box_deltas: bad shapes");
    Tn out({n, 4});
    auto clamped = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n) * 8, 0);
    for (int i = 0; i < n; ++i) {
        const BoxXYXY& b = base[static_cast<std::size_t>(i)];
        T w = static_cast<T>(std::max(b.width(), 1e-4));
        T h = static_cast<T>(std::max(b.height(), 1e-4));
        T cx = static_cast<T>((b.x0 + b.x1) / 2), cy = static_cast<T>((b.y0 + b.y1) / 2);
        T dx = D[static_cast<std::int64_t>(i) * 4 + 0];
        T dy = D[static_cast<std::int64_t>(i) * 4 + 1];
        T dw = D[static_cast<std::int64_t>(i) * 4 + 2];
        T dh = D[static_cast<std::int64_t>(i) * 4 + 3];
        std::uint8_t* cl = clamped->data() + static_cast<std::size_t>(i) * 8;
        if (dw > max_dwh) {
            dw = max_dwh;
            cl[4] = 1;
        } else if (dw < -max_dwh) {
            dw = -max_dwh;
            cl[4] = 1;
        }
        if (dh > max_dwh) {
            dh = max_dwh;
            cl[5] = 1;
        } else if (dh < -max_dwh) {
            dh = -max_dwh;
            cl[5] = 1;
        }
        T ncx = cx + dx * w, ncy = cy + dy * h;
        T nw = w * std::exp(dw), nh = h * std::exp(dh);
        T vals[4] = {ncx - nw / 2, ncy - nh / 2, ncx + nw / 2, ncy + nh / 2};
        T lim[4] = {static_cast<T>(img_w), static_cast<T>(img_h), static_cast<T>(img_w),
                    static_cast<T>(img_h)};
        for (int j = 0; j < 4; ++j) {
            T v = vals[j];
            if (v < T(0)) {
                v = T(0);
                cl[j] = 1;
            } else if (v > lim[j]) {
                v = lim[j];
                cl[j] = 1;
            }
            out[static_cast<std::int64_t>(i) * 4 + j] = v;
        }
    }
    return g.make(
        std::move(out), {deltas},
        [deltas, base = std::move(base), clamped, n, max_dwh](Graph<T>& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& D = g.val(deltas);
            Tn& gd = g.grad_of(deltas);
            for (int i = 0; i < n; ++i) {
                const BoxXYXY& b = base[static_cast<std::size_t>(i)];
                T w = static_cast<T>(std::max(b.width(), 1e-4));
                T h = static_cast<T>(std::max(b.height(), 1e-4));
                const std::uint8_t* cl = clamped->data() + static_cast<std::size_t>(i) * 8;
                T dw = std::clamp(D[static_cast<std::int64_t>(i) * 4 + 2], -max_dwh, max_dwh);
                T dh = std::clamp(D[static_cast<std::int64_t>(i) * 4 + 3], -max_dwh, max_dwh);
                T nw = w * std::exp(dw), nh = h * std::exp(dh);
                T g0 = cl[0] ? T(0) : go[static_cast<std::int64_t>(i) * 4 + 0];
                T g1 = cl[1] ? T(0) : go[static_cast<std::int64_t>(i) * 4 + 1];
                T g2 = cl[2] ? T(0) : go[static_cast<std::int64_t>(i) * 4 + 2];
                T g3 = cl[3] ? T(0) : go[static_cast<std::int64_t>(i) * 4 + 3];
                gd[static_cast<std::int64_t>(i) * 4 + 0] += (g0 + g2) * w;
                gd[static_cast<std::int64_t>(i) * 4 + 1] += (g1 + g3) * h;
                if (!cl[4]) gd[static_cast<std::int64_t>(i) * 4 + 2] += (g2 - g0) * nw / 2;
                if (!cl[5]) gd[static_cast<std::int64_t>(i) * 4 + 3] += (g3 - g1) * nh / 2;
            }
        });
}

// linear conversion of absolute xyxy rows to normalized ccwh rows
template <class T>
int xyxy_to_ccwhn(Graph<T>& g, int boxes, double img_w, double img_h) {
    using Tn = Tensor<T>;
    const Tn& B = g.val(boxes);
    require(B.ndim() == 2 && B.dim(1) == 4, "xyxy_to_ccwhn: bad shape");
    int n = B.dim(0);
    T iw = T(1) / static_cast<T>(img_w), ih = T(1) / static_cast<T>(img_h);
    Tn out({n, 4});
    for (int i = 0; i < n; ++i) {
        const T* x = B.data() + static_cast<std::int64_t>(i) * 4;
        T* o = out.data() + static_cast<std::int64_t>(i) * 4;
        o[0] = (x[0] + x[2]) / 2 * iw;
        o[1] = (x[1] + x[3]) / 2 * ih;
        o[2] = (x[2] - x[0]) * iw;
        o[3] = (x[3] - x[1]) * ih;
    }
    return g.make(std::move(out), {boxes}, [boxes, n, iw, ih](Graph<T>& g, int self) {
        const Tn& go = g.grad_of(self);
        Tn& gb = g.grad_of(boxes);
        for (int i = 0; i < n; ++i) {
            const T* o = go.data() + static_cast<std::int64_t>(i) * 4;
            T* x = gb.data() + static_cast<std::int64_t>(i) * 4;
            x[0] += o[0] / 2 * iw - o[2] * iw;
            x[2] += o[0] / 2 * iw + o[2] * iw;
            x[1] += o[1] / 2 * ih - o[3] * ih;
            x[3] += o[1] / 2 * ih + o[3] * ih;
        }
    });
}

}  // namespace dseg
