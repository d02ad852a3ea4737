#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "core/graph.hpp"
#include "core/ops_spatial.hpp"

namespace dseg {

template <class T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Tensor<T> init, bool trainable = true,
                  bool no_decay = false) {
        auto p = std::make_unique<Param<T>>();
        p->name = name;
        p->value = std::move(init);
        p->trainable = trainable;
        p->no_decay = no_decay;
        params_.push_back(std::move(p));
        return *params_.back();
    }

    std::size_t size() const { return params_.size(); }
    Param<T>& at(std::size_t i) { return *params_[i]; }
    const Param<T>& at(std::size_t i) const { return *params_[i]; }

    Param<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (auto& p : params_) n += p->value.numel();
        return n;
    }

private:
    std::vector<std::unique_ptr<Param<T>>> params_;
};

// ---- initializers ----

template <class T>
Tensor<T> xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    Tensor<T> t(std::move(shape));
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-a, a));
    return t;
}

template <class T>
Tensor<T> kaiming_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    double s = std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, s));
    return t;
}

// ---- layers ----

template <class T>
struct Linear {
    Param<T>* w = nullptr;  // (in, out)
    Param<T>* b = nullptr;  // (out)

    static Linear create(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng) {
        Linear l;
        l.w = &ps.add(name + ".w", xavier_uniform<T>({in, out}, in, out, rng));
        l.b = &ps.add(name + ".b", Tensor<T>::zeros({out}), true, true);
        return l;
    }
    // x: (..., in), flattened to rows internally
    int fwd(Graph<T>& g, int x) const {
        const auto& X = g.val(x);
        int in = w->value.dim(0), out = w->value.dim(1);
        std::vector<int> out_shape = X.shape;
        out_shape.back() = out;
        int rows = static_cast<int>(X.numel() / in);
        int flat = g.reshape(x, {rows, in});
        int y = g.add_bias(g.matmul(flat, g.param(*w)), g.param(*b));
        return g.reshape(y, std::move(out_shape));
    }
};

template <class T>
struct Conv2d {
    Param<T>* w = nullptr;  // (out, in, k, k)
    Param<T>* b = nullptr;
    int stride = 1, pad = 1;

    static Conv2d create(ParamStore<T>& ps, const std::string& name, int in, int out, int k,
                         int stride, int pad, Rng& rng) {
        Conv2d c;
        c.w = &ps.add(name + ".w", kaiming_normal<T>({out, in, k, k}, in * k * k, rng));
        c.b = &ps.add(name + ".b", Tensor<T>::zeros({out}), true, true);
        c.stride = stride;
        c.pad = pad;
        return c;
    }
    int fwd(Graph<T>& g, int x) const { return conv2d(g, x, g.param(*w), g.param(*b), stride, pad); }
};

template <class T>
struct LayerNorm {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;

    static LayerNorm create(ParamStore<T>& ps, const std::string& name, int c) {
        LayerNorm n;
        n.gamma = &ps.add(name + ".g", Tensor<T>::full({c}, T(1)), true, true);
        n.beta = &ps.add(name + ".b", Tensor<T>::zeros({c}), true, true);
        return n;
    }
    int fwd(Graph<T>& g, int x) const { return g.layer_norm(x, g.param(*gamma), g.param(*beta)); }
};

template <class T>
struct GroupNorm {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    int groups = 8;

    static GroupNorm create(ParamStore<T>& ps, const std::string& name, int c, int groups) {
        GroupNorm n;
        n.gamma = &ps.add(name + ".g", Tensor<T>::full({c}, T(1)), true, true);
        n.beta = &ps.add(name + ".b", Tensor<T>::zeros({c}), true, true);
        n.groups = groups;
        return n;
    }
    int fwd(Graph<T>& g, int x) const {
        return g.group_norm(x, g.param(*gamma), g.param(*beta), groups);
    }
};

template <class T>
struct BatchNorm2d {
    Param<T>* gamma = nullptr;
    Param<T>* beta = nullptr;
    Param<T>* running_mean = nullptr;  // non-trainable buffers
    Param<T>* running_var = nullptr;

    static BatchNorm2d create(ParamStore<T>& ps, const std::string& name, int c) {
        BatchNorm2d n;
        n.gamma = &ps.add(name + ".g", Tensor<T>::full({c}, T(1)), true, true);
        n.beta = &ps.add(name + ".b", Tensor<T>::zeros({c}), true, true);
        n.running_mean = &ps.add(name + ".rm", Tensor<T>::zeros({c}), false);
        n.running_var = &ps.add(name + ".rv", Tensor<T>::full({c}, T(1)), false);
        return n;
    }
    int fwd(Graph<T>& g, int x, bool training) const {
        return g.batch_norm2d(x, g.param(*gamma), g.param(*beta), running_mean->value,
                              running_var->value, training);
    }
};

template <class T>
struct MultiheadSelfAttention {
    Linear<T> qkv;
    Linear<T> out;
    int heads = 8;

    static MultiheadSelfAttention create(ParamStore<T>& ps, const std::string& name, int c,
                                         int heads, Rng& rng) {
        MultiheadSelfAttention a;
        a.qkv = Linear<T>::create(ps, name + ".qkv", c, 3 * c, rng);
        a.out = Linear<T>::create(ps, name + ".out", c, c, rng);
        a.heads = heads;
        return a;
    }
    // x: (N, C)
    int fwd(Graph<T>& g, int x) const {
        int c = g.val(x).dim(1);
        int dh = c / heads;
        int proj = qkv.fwd(g, x);
        int q = g.heads_split(g.slice_cols(proj, 0, c), heads);
        int k = g.heads_split(g.slice_cols(proj, c, 2 * c), heads);
        int v = g.heads_split(g.slice_cols(proj, 2 * c, 3 * c), heads);
        int scores = g.scale(g.bmm(q, g.transpose_last2(k)), T(1) / std::sqrt(static_cast<T>(dh)));
        int attn = g.softmax_lastdim(scores);
        int mixed = g.heads_merge(g.bmm(attn, v));
        return out.fwd(g, mixed);
    }
};

// ---- optimizer ----

template <class T>
struct AdamW {
    T lr = T(2.5e-5);
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    T weight_decay = T(1e-4);
    std::int64_t t = 0;

    // returns the pre-clip global gradient norm
    T clip_global_norm(ParamStore<T>& ps, T max_norm) {
        double sq = 0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Param<T>& p = ps.at(i);
            if (!p.trainable || !p.grad.defined()) continue;
            for (std::int64_t j = 0; j < p.grad.numel(); ++j)
                sq += static_cast<double>(p.grad[j]) * static_cast<double>(p.grad[j]);
        }
        T norm = static_cast<T>(std::sqrt(sq));
        if (max_norm > T(0) && norm > max_norm) {
            T s = max_norm / (norm + T(1e-12));
            for (std::size_t i = 0; i < ps.size(); ++i) {
                Param<T>& p = ps.at(i);
                if (!p.trainable || !p.grad.defined()) continue;
                for (std::int64_t j = 0; j < p.grad.numel(); ++j) p.grad[j] *= s;
            }
        }
        return norm;
    }

    void step(ParamStore<T>& ps) {
        ++t;
        T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
        T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            Param<T>& p = ps.at(i);
            if (!p.trainable || !p.grad.defined()) continue;
            if (!p.adam_m.defined()) {
                p.adam_m = Tensor<T>::zeros(p.value.shape);
                p.adam_v = Tensor<T>::zeros(p.value.shape);
            }
            for (std::int64_t j = 0; j < p.value.numel(); ++j) {
                T gj = p.grad[j];
                p.adam_m[j] = beta1 * p.adam_m[j] + (T(1) - beta1) * gj;
                p.adam_v[j] = beta2 * p.adam_v[j] + (T(1) - beta2) * gj * gj;
                T mhat = p.adam_m[j] / bc1;
                T vhat = p.adam_v[j] / bc2;
                T upd = mhat / (std::sqrt(vhat) + eps);
                if (!p.no_decay) upd += weight_decay * p.value[j];
                p.value[j] -= lr * upd;
            }
        }
    }
};

// sinusoidal embedding of a (diffusion) time step
template <class T>
Tensor<T> sinusoidal_embedding(double t, int dim) {
    Tensor<T> e({dim});
    int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * i / half);
        e[i] = static_cast<T>(std::sin(t * freq));
        e[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return e;
}

}  // namespace dseg
