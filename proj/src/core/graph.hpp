#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace dseg {

// Trainable parameter (or non-trainable buffer, e.g. batchnorm statistics).
template <class T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m, adam_v;  // lazily allocated by the optimizer
    bool trainable = true;
    bool no_decay = false;

    void zero_grad() {
        if (grad.defined())
            grad.fill(T(0));
        else
            grad = Tensor<T>::zeros(value.shape);
    }
};

// Reverse-mode tape. One graph per forward pass; node ids are indices into
// the tape and are only valid for that pass. Ops append nodes in topological
// order, so backward() is a single reverse sweep.
template <class T>
class Graph {
public:
    using Tn = Tensor<T>;

    struct Node {
        Tn val;
        Tn grad;  // allocated on demand during backward
        bool needs_grad = false;
        std::function<void(Graph&, int)> back;
    };

    std::vector<Node> nodes;

    const Tn& val(int id) const { return nodes[static_cast<std::size_t>(id)].val; }
    Tn& grad_of(int id) {
        Node& n = nodes[static_cast<std::size_t>(id)];
        if (!n.grad.defined()) n.grad = Tn::zeros(n.val.shape);
        return n.grad;
    }
    bool has_grad(int id) const { return nodes[static_cast<std::size_t>(id)].grad.defined(); }
    bool needs_grad(int id) const { return nodes[static_cast<std::size_t>(id)].needs_grad; }

    int leaf(Tn v, bool needs = false) {
        Node n;
        n.val = std::move(v);
        n.needs_grad = needs;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }
    int constant(Tn v) { return leaf(std::move(v), false); }

    int param(Param<T>& p) {
        int id = leaf(p.value, p.trainable);
        if (p.trainable) param_nodes_.push_back({id, &p});
        return id;
    }

    // ---- elementwise ----

    int add(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        require(A.shape == B.shape, "add: shape mismatch");
        Tn out(A.shape);
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] + B[i];
        return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            if (g.needs_grad(a)) {
                Tn& ga = g.grad_of(a);
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            }
            if (g.needs_grad(b)) {
                Tn& gb = g.grad_of(b);
                for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i];
            }
        });
    }

    int sub(int a, int b) { return add(a, scale(b, T(-1))); }

    int mul(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        require(A.shape == B.shape, "mul: shape mismatch");
        Tn out(A.shape);
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
        return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& A = g.val(a);
            const Tn& B = g.val(b);
            if (g.needs_grad(a)) {
                Tn& ga = g.grad_of(a);
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * B[i];
            }
            if (g.needs_grad(b)) {
                Tn& gb = g.grad_of(b);
                for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * A[i];
            }
        });
    }

    int scale(int a, T s) {
        const Tn& A = val(a);
        Tn out(A.shape);
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] * s;
        return make(std::move(out), {a}, [a, s](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * s;
        });
    }

    // (..., N) + (N,)
    int add_bias(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        int n = B.dim(0);
        require(B.ndim() == 1 && A.dim(A.ndim() - 1) == n, "add_bias: shape mismatch");
        std::int64_t rows = A.numel() / n;
        Tn out(A.shape);
        for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < n; ++j) out[r * n + j] = A[r * n + j] + B[j];
        return make(std::move(out), {a, b}, [a, b, rows, n](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            if (g.needs_grad(a)) {
                Tn& ga = g.grad_of(a);
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            }
            if (g.needs_grad(b)) {
                Tn& gb = g.grad_of(b);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < n; ++j) gb[j] += go[r * n + j];
            }
        });
    }

    // (B, ...) + (...) broadcast over the leading dim
    int add_bcast0(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        std::int64_t inner = B.numel();
        require(A.numel() % inner == 0, "add_bcast0: shape mismatch");
        std::int64_t batch = A.numel() / inner;
        Tn out(A.shape);
        for (std::int64_t i = 0; i < batch; ++i)
            for (std::int64_t j = 0; j < inner; ++j) out[i * inner + j] = A[i * inner + j] + B[j];
        return make(std::move(out), {a, b}, [a, b, batch, inner](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            if (g.needs_grad(a)) {
                Tn& ga = g.grad_of(a);
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
            }
            if (g.needs_grad(b)) {
                Tn& gb = g.grad_of(b);
                for (std::int64_t i = 0; i < batch; ++i)
                    for (std::int64_t j = 0; j < inner; ++j) gb[j] += go[i * inner + j];
            }
        });
    }

    // (B, M, C) * (B, M, 1)
    int mul_bcast_last(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        require(A.ndim() == 3 && B.ndim() == 3 && B.dim(2) == 1 && A.dim(0) == B.dim(0) &&
                    A.dim(1) == B.dim(1),
                "mul_bcast_last: shape mismatch");
        int c = A.dim(2);
        std::int64_t rows = static_cast<std::int64_t>(A.dim(0)) * A.dim(1);
        Tn out(A.shape);
        for (std::int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j) out[r * c + j] = A[r * c + j] * B[r];
        return make(std::move(out), {a, b}, [a, b, rows, c](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& A = g.val(a);
            const Tn& B = g.val(b);
            if (g.needs_grad(a)) {
                Tn& ga = g.grad_of(a);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int j = 0; j < c; ++j) ga[r * c + j] += go[r * c + j] * B[r];
            }
            if (g.needs_grad(b)) {
                Tn& gb = g.grad_of(b);
                for (std::int64_t r = 0; r < rows; ++r) {
                    T acc = 0;
                    for (int j = 0; j < c; ++j) acc += go[r * c + j] * A[r * c + j];
                    gb[r] += acc;
                }
            }
        });
    }

    int relu(int a) {
        const Tn& A = val(a);
        Tn out(A.shape);
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = A[i] > T(0) ? A[i] : T(0);
        return make(std::move(out), {a}, [a](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& A = g.val(a);
            Tn& ga = g.grad_of(a);
            for (std::int64_t i = 0; i < go.numel(); ++i)
                if (A[i] > T(0)) ga[i] += go[i];
        });
    }

    int sigmoid(int a) {
        const Tn& A = val(a);
        Tn out(A.shape);
        for (std::int64_t i = 0; i < A.numel(); ++i) out[i] = stable_sigmoid(A[i]);
        return make(std::move(out), {a}, [a](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& y = g.val(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * y[i] * (T(1) - y[i]);
        });
    }

    // ---- shape ----

    int reshape(int a, std::vector<int> shape) {
        Tn out = val(a).reshaped(std::move(shape));
        return make(std::move(out), {a}, [a](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        });
    }

    // last-dim column slice, copies
    int slice_cols(int a, int c0, int c1) {
        const Tn& A = val(a);
        int c = A.dim(A.ndim() - 1);
        require(0 <= c0 && c0 < c1 && c1 <= c, "slice_cols: bad range");
        std::int64_t rows = A.numel() / c;
        std::vector<int> shape = A.shape;
        shape.back() = c1 - c0;
        Tn out(shape);
        int w = c1 - c0;
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy_n(A.data() + r * c + c0, w, out.data() + r * w);
        return make(std::move(out), {a}, [a, c0, c, rows, w](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < w; ++j) ga[r * c + c0 + j] += go[r * w + j];
        });
    }

    // (N, C) rows gathered by constant index list -> (M, C)
    int gather_rows(int a, std::vector<int> idx) {
        const Tn& A = val(a);
        int c = A.dim(A.ndim() - 1);
        int m = static_cast<int>(idx.size());
        Tn out({m, c});
        for (int r = 0; r < m; ++r)
            std::copy_n(A.data() + static_cast<std::int64_t>(idx[static_cast<std::size_t>(r)]) * c,
                        c, out.data() + static_cast<std::int64_t>(r) * c);
        return make(std::move(out), {a}, [a, idx = std::move(idx), c](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (int j = 0; j < c; ++j)
                    ga[static_cast<std::int64_t>(idx[r]) * c + j] +=
                        go[static_cast<std::int64_t>(r) * c + j];
        });
    }

    // (B, M, N) -> (B, N, M)
    int transpose_last2(int a) {
        const Tn& A = val(a);
        require(A.ndim() >= 2, "transpose_last2: need >=2 dims");
        int m = A.dim(A.ndim() - 2), n = A.dim(A.ndim() - 1);
        std::int64_t batch = A.numel() / (static_cast<std::int64_t>(m) * n);
        std::vector<int> shape = A.shape;
        std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
        Tn out(shape);
        for (std::int64_t b = 0; b < batch; ++b) {
            auto src = A.mat_at(b * m * n, m, n);
            out.mat_at(b * m * n, n, m) = src.transpose();
        }
        return make(std::move(out), {a}, [a, m, n, batch](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t b = 0; b < batch; ++b)
                ga.mat_at(b * m * n, m, n) += go.mat_at(b * m * n, n, m).transpose();
        });
    }

    // (N, H*D) -> (H, N, D)
    int heads_split(int a, int heads) {
        const Tn& A = val(a);
        int n = A.dim(0), c = A.dim(1);
        require(c % heads == 0, "heads_split: channels not divisible");
        int d = c / heads;
        Tn out({heads, n, d});
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i)
                std::copy_n(A.data() + static_cast<std::int64_t>(i) * c + h * d, d,
                            out.data() + (static_cast<std::int64_t>(h) * n + i) * d);
        return make(std::move(out), {a}, [a, heads, n, c, d](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        ga[static_cast<std::int64_t>(i) * c + h * d + j] +=
                            go[(static_cast<std::int64_t>(h) * n + i) * d + j];
        });
    }

    // (H, N, D) -> (N, H*D)
    int heads_merge(int a) {
        const Tn& A = val(a);
        int heads = A.dim(0), n = A.dim(1), d = A.dim(2);
        int c = heads * d;
        Tn out({n, c});
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < n; ++i)
                std::copy_n(A.data() + (static_cast<std::int64_t>(h) * n + i) * d, d,
                            out.data() + static_cast<std::int64_t>(i) * c + h * d);
        return make(std::move(out), {a}, [a, heads, n, c, d](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            Tn& ga = g.grad_of(a);
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        ga[(static_cast<std::int64_t>(h) * n + i) * d + j] +=
                            go[static_cast<std::int64_t>(i) * c + h * d + j];
        });
    }

    // ---- linear algebra ----

    int matmul(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        require(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0), "matmul: shape mismatch");
        int m = A.dim(0), k = A.dim(1), n = B.dim(1);
        Tn out({m, n});
        out.mat(m, n).noalias() = A.mat(m, k) * B.mat(k, n);
        return make(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& A = g.val(a);
            const Tn& B = g.val(b);
            if (g.needs_grad(a))
                g.grad_of(a).mat(m, k).noalias() += go.mat(m, n) * B.mat(k, n).transpose();
            if (g.needs_grad(b))
                g.grad_of(b).mat(k, n).noalias() += A.mat(m, k).transpose() * go.mat(m, n);
        });
    }

    // (B, M, K) x (B, K, N)
    int bmm(int a, int b) {
        const Tn& A = val(a);
        const Tn& B = val(b);
        require(A.ndim() == 3 && B.ndim() == 3 && A.dim(0) == B.dim(0) && A.dim(2) == B.dim(1),
                "bmm: shape mismatch");
        int bs = A.dim(0), m = A.dim(1), k = A.dim(2), n = B.dim(2);
        Tn out({bs, m, n});
        for (int i = 0; i < bs; ++i)
            out.mat_at(static_cast<std::int64_t>(i) * m * n, m, n).noalias() =
                A.mat_at(static_cast<std::int64_t>(i) * m * k, m, k) *
                B.mat_at(static_cast<std::int64_t>(i) * k * n, k, n);
        return make(std::move(out), {a, b}, [a, b, bs, m, k, n](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& A = g.val(a);
            const Tn& B = g.val(b);
            for (int i = 0; i < bs; ++i) {
                auto dO = go.mat_at(static_cast<std::int64_t>(i) * m * n, m, n);
                if (g.needs_grad(a))
                    g.grad_of(a).mat_at(static_cast<std::int64_t>(i) * m * k, m, k).noalias() +=
                        dO * B.mat_at(static_cast<std::int64_t>(i) * k * n, k, n).transpose();
                if (g.needs_grad(b))
                    g.grad_of(b).mat_at(static_cast<std::int64_t>(i) * k * n, k, n).noalias() +=
                        A.mat_at(static_cast<std::int64_t>(i) * m * k, m, k).transpose() * dO;
            }
        });
    }

    // ---- normalization / softmax ----

    int softmax_lastdim(int a) {
        const Tn& A = val(a);
        int n = A.dim(A.ndim() - 1);
        std::int64_t rows = A.numel() / n;
        Tn out(A.shape);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* x = A.data() + r * n;
            T* y = out.data() + r * n;
            T mx = x[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            T s = 0;
            for (int j = 0; j < n; ++j) {
                y[j] = std::exp(x[j] - mx);
                s += y[j];
            }
            for (int j = 0; j < n; ++j) y[j] /= s;
        }
        return make(std::move(out), {a}, [a, rows, n](Graph& g, int self) {
            const Tn& go = g.grad_of(self);
            const Tn& y = g.val(self);
            Tn& ga = g.grad_of(a);
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* gy = go.data() + r * n;
                const T* yy = y.data() + r * n;
                T dot = 0;
                for (int j = 0; j < n; ++j) dot += gy[j] * yy[j];
                T* gx = ga.data() + r * n;
                for (int j = 0; j < n; ++j) gx[j] += (gy[j] - dot) * yy[j];
            }
        });
    }

    // last-dim layer norm with affine params gamma (C,), beta (C,)
    int layer_norm(int a, int gamma, int beta, T eps = T(1e-5)) {
        const Tn& A = val(a);
        int n = A.dim(A.ndim() - 1);
        std::int64_t rows = A.numel() / n;
        Tn out(A.shape);
        auto xhat = std::make_shared<std::vector<T>>(A.numel());
        auto rstd = std::make_shared<std::vector<T>>(rows);
        const Tn& G = val(gamma);
        const Tn& Bt = val(beta);
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* x = A.data() + r * n;
            T mu = 0;
            for (int j = 0; j < n; ++j) mu += x[j];
            mu /= n;
            T var = 0;
            for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
            var /= n;
            T rs = T(1) / std::sqrt(var + eps);
            (*rstd)[static_cast<std::size_t>(r)] = rs;
            for (int j = 0; j < n; ++j) {
                T xh = (x[j] - mu) * rs;
                (*xhat)[static_cast<std::size_t>(r * n + j)] = xh;
                out[r * n + j] = xh * G[j] + Bt[j];
            }
        }
        return make(std::move(out), {a, gamma, beta},
                    [a, gamma, beta, rows, n, xhat, rstd](Graph& g, int self) {
                        const Tn& go = g.grad_of(self);
                        const Tn& G = g.val(gamma);
                        for (std::int64_t r = 0; r < rows; ++r) {
                            const T* gy = go.data() + r * n;
                            const T* xh = xhat->data() + r * n;
                            if (g.needs_grad(gamma)) {
                                Tn& gg = g.grad_of(gamma);
                                for (int j = 0; j < n; ++j) gg[j] += gy[j] * xh[j];
                            }
                            if (g.needs_grad(beta)) {
                                Tn& gb = g.grad_of(beta);
                                for (int j = 0; j < n; ++j) gb[j] += gy[j];
                            }
                            if (g.needs_grad(a)) {
                                T rs = (*rstd)[static_cast<std::size_t>(r)];
                                T sum_gyg = 0, sum_gyg_xh = 0;
                                for (int j = 0; j < n; ++j) {
                                    T v = gy[j] * G[j];
                                    sum_gyg += v;
                                    sum_gyg_xh += v * xh[j];
                                }
                                Tn& ga = g.grad_of(a);
                                for (int j = 0; j < n; ++j) {
                                    T v = gy[j] * G[j];
                                    ga[r * n + j] +=
                                        rs * (v - sum_gyg / n - xh[j] * sum_gyg_xh / n);
                                }
                            }
                        }
                    });
    }

    // group norm over (B, C, H, W) with per-channel affine
    int group_norm(int a, int gamma, int beta, int groups, T eps = T(1e-5)) {
        const Tn& A = val(a);
        require(A.ndim() == 4, "group_norm: expect BCHW");
        int bs = A.dim(0), c = A.dim(1), h = A.dim(2), w = A.dim(3);
        require(c % groups == 0, "group_norm: channels not divisible by groups");
        int cg = c / groups;
        std::int64_t hw = static_cast<std::int64_t>(h) * w;
        std::int64_t gsize = cg * hw;
        Tn out(A.shape);
        auto xhat = std::make_shared<std::vector<T>>(A.numel());
        auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(bs) * groups);
        const Tn& G = val(gamma);
        const Tn& Bt = val(beta);
        for (int b = 0; b < bs; ++b)
            for (int gi = 0; gi < groups; ++gi) {
                std::int64_t off = (static_cast<std::int64_t>(b) * c + gi * cg) * hw;
                const T* x = A.data() + off;
                T mu = 0;
                for (std::int64_t i = 0; i < gsize; ++i) mu += x[i];
                mu /= gsize;
                T var = 0;
                for (std::int64_t i = 0; i < gsize; ++i) var += (x[i] - mu) * (x[i] - mu);
                var /= gsize;
                T rs = T(1) / std::sqrt(var + eps);
                (*rstd)[static_cast<std::size_t>(b) * groups + gi] = rs;
                for (int cc = 0; cc < cg; ++cc) {
                    T gam = G[gi * cg + cc], bet = Bt[gi * cg + cc];
                    for (std::int64_t i = 0; i < hw; ++i) {
                        std::int64_t k = off + cc * hw + i;
                        T xh = (A[k] - mu) * rs;
                        (*xhat)[static_cast<std::size_t>(k)] = xh;
                        out[k] = xh * gam + bet;
                    }
                }
            }
        return make(
            std::move(out), {a, gamma, beta},
            [a, gamma, beta, bs, c, cg, groups, hw, gsize, xhat, rstd](Graph& g, int self) {
                const Tn& go = g.grad_of(self);
                const Tn& G = g.val(gamma);
                for (int b = 0; b < bs; ++b)
                    for (int gi = 0; gi < groups; ++gi) {
                        std::int64_t off = (static_cast<std::int64_t>(b) * c + gi * cg) * hw;
                        T rs = (*rstd)[static_cast<std::size_t>(b) * groups + gi];
                        if (g.needs_grad(gamma) || g.needs_grad(beta)) {
                            Tn& gg = g.grad_of(gamma);
                            Tn& gb = g.grad_of(beta);
                            for (int cc = 0; cc < cg; ++cc)
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    std::int64_t k = off + cc * hw + i;
                                    gg[gi * cg + cc] +=
                                        go[k] * (*xhat)[static_cast<std::size_t>(k)];
                                    gb[gi * cg + cc] += go[k];
                                }
                        }
                        if (g.needs_grad(a)) {
                            T sum_v = 0, sum_vx = 0;
                            for (int cc = 0; cc < cg; ++cc) {
                                T gam = G[gi * cg + cc];
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    std::int64_t k = off + cc * hw + i;
                                    T v = go[k] * gam;
                                    sum_v += v;
                                    sum_vx += v * (*xhat)[static_cast<std::size_t>(k)];
                                }
                            }
                            Tn& ga = g.grad_of(a);
                            for (int cc = 0; cc < cg; ++cc) {
                                T gam = G[gi * cg + cc];
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    std::int64_t k = off + cc * hw + i;
                                    T v = go[k] * gam;
                                    ga[k] += rs * (v - sum_v / gsize -
                                                   (*xhat)[static_cast<std::size_t>(k)] * sum_vx /
                                                       gsize);
                                }
                            }
                        }
                    }
            });
    }

    // batch norm over (B, C, H, W); training mode uses batch statistics and
    // updates the running buffers in place, eval mode reads them.
    int batch_norm2d(int a, int gamma, int beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                     bool training, T momentum = T(0.1), T eps = T(1e-5)) {
        const Tn& A = val(a);
        require(A.ndim() == 4, "batch_norm2d: expect BCHW");
        int bs = A.dim(0), c = A.dim(1), h = A.dim(2), w = A.dim(3);
        std::int64_t hw = static_cast<std::int64_t>(h) * w;
        std::int64_t m = bs * hw;
        const Tn& G = val(gamma);
        const Tn& Bt = val(beta);
        Tn out(A.shape);
        if (!training) {
            for (int cc = 0; cc < c; ++cc) {
                T rs = T(1) / std::sqrt(running_var[cc] + eps);
                T mu = running_mean[cc];
                for (int b = 0; b < bs; ++b) {
                    std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                    for (std::int64_t i = 0; i < hw; ++i)
                        out[off + i] = (A[off + i] - mu) * rs * G[cc] + Bt[cc];
                }
            }
            auto rm = running_mean, rv = running_var;  // snapshot for backward
            return make(std::move(out), {a, gamma, beta},
                        [a, gamma, beta, bs, c, hw, rm, rv, eps](Graph& g, int self) {
                            const Tn& go = g.grad_of(self);
                            const Tn& G = g.val(gamma);
                            const Tn& A = g.val(a);
                            for (int cc = 0; cc < c; ++cc) {
                                T rs = T(1) / std::sqrt(rv[cc] + eps);
                                for (int b = 0; b < bs; ++b) {
                                    std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                                    for (std::int64_t i = 0; i < hw; ++i) {
                                        T gy = go[off + i];
                                        if (g.needs_grad(a)) g.grad_of(a)[off + i] += gy * G[cc] * rs;
                                        if (g.needs_grad(gamma))
                                            g.grad_of(gamma)[cc] += gy * (A[off + i] - rm[cc]) * rs;
                                        if (g.needs_grad(beta)) g.grad_of(beta)[cc] += gy;
                                    }
                                }
                            }
                        });
        }
        auto mean = std::make_shared<std::vector<T>>(c);
        auto rstd = std::make_shared<std::vector<T>>(c);
        for (int cc = 0; cc < c; ++cc) {
            T mu = 0;
            for (int b = 0; b < bs; ++b) {
                std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                for (std::int64_t i = 0; i < hw; ++i) mu += A[off + i];
            }
            mu /= m;
            T var = 0;
            for (int b = 0; b < bs; ++b) {
                std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                for (std::int64_t i = 0; i < hw; ++i) var += (A[off + i] - mu) * (A[off + i] - mu);
            }
            var /= m;
            (*mean)[static_cast<std::size_t>(cc)] = mu;
            (*rstd)[static_cast<std::size_t>(cc)] = T(1) / std::sqrt(var + eps);
            running_mean[cc] = (T(1) - momentum) * running_mean[cc] + momentum * mu;
            running_var[cc] = (T(1) - momentum) * running_var[cc] + momentum * var;
            for (int b = 0; b < bs; ++b) {
                std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                for (std::int64_t i = 0; i < hw; ++i)
                    out[off + i] =
                        (A[off + i] - mu) * (*rstd)[static_cast<std::size_t>(cc)] * G[cc] + Bt[cc];
            }
        }
        return make(std::move(out), {a, gamma, beta},
                    [a, gamma, beta, bs, c, hw, m, mean, rstd](Graph& g, int self) {
                        const Tn& go = g.grad_of(self);
                        const Tn& G = g.val(gamma);
                        const Tn& A = g.val(a);
                        for (int cc = 0; cc < c; ++cc) {
                            T mu = (*mean)[static_cast<std::size_t>(cc)];
                            T rs = (*rstd)[static_cast<std::size_t>(cc)];
                            T sum_gy = 0, sum_gyxh = 0;
                            for (int b = 0; b < bs; ++b) {
                                std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                                for (std::int64_t i = 0; i < hw; ++i) {
                                    T xh = (A[off + i] - mu) * rs;
                                    sum_gy += go[off + i];
                                    sum_gyxh += go[off + i] * xh;
                                }
                            }
                            if (g.needs_grad(gamma)) g.grad_of(gamma)[cc] += sum_gyxh;
                            if (g.needs_grad(beta)) g.grad_of(beta)[cc] += sum_gy;
                            if (g.needs_grad(a)) {
                                Tn& ga = g.grad_of(a);
                                for (int b = 0; b < bs; ++b) {
                                    std::int64_t off = (static_cast<std::int64_t>(b) * c + cc) * hw;
                                    for (std::int64_t i = 0; i < hw; ++i) {
                                        T xh = (A[off + i] - mu) * rs;
                                        ga[off + i] += G[cc] * rs *
                                                       (go[off + i] - sum_gy / m - xh * sum_gyxh / m);
                                    }
                                }
                            }
                        }
                    });
    }

    // ---- reductions ----

    int sum_all(int a) {
        const Tn& A = val(a);
        T s = 0;
        for (std::int64_t i = 0; i < A.numel(); ++i) s += A[i];
        Tn out({1});
        out[0] = s;
        return make(std::move(out), {a}, [a](Graph& g, int self) {
            T go = g.grad_of(self)[0];
            Tn& ga = g.grad_of(a);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += go;
        });
    }

    int mean_all(int a) { return scale(sum_all(a), T(1) / static_cast<T>(val(a).numel())); }

    // ---- backward ----

    void backward(int root) {
        require(val(root).numel() == 1, "backward: root must be scalar");
        grad_of(root)[0] = T(1);
        for (int i = root; i >= 0; --i) {
            Node& n = nodes[static_cast<std::size_t>(i)];
            if (n.needs_grad && n.grad.defined() && n.back) n.back(*this, i);
        }
        for (auto& [id, p] : param_nodes_) {
            if (!has_grad(id)) continue;
            if (!p->grad.defined()) p->zero_grad();
            const Tn& g = grad_of(id);
            for (std::int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
        }
    }

    static T stable_sigmoid(T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
    }
    static T softplus(T x) { return x > T(30) ? x : std::log1p(std::exp(x)); }

    int make(Tn out, std::initializer_list<int> parents, std::function<void(Graph&, int)> back) {
        bool needs = false;
        for (int p : parents) needs = needs || nodes[static_cast<std::size_t>(p)].needs_grad;
        Node n;
        n.val = std::move(out);
        n.needs_grad = needs;
        if (needs) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

private:
    std::vector<std::pair<int, Param<T>*>> param_nodes_;
};

}  // namespace dseg
