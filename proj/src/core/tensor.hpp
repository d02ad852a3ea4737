#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "core/common.hpp"

namespace dseg {

// Dense row-major tensor. The buffer is shared so reshapes are zero-copy;
// mutating ops must own their buffer (autograd nodes always allocate fresh
// outputs, so aliasing only happens through explicit reshape).
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> buf;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        buf = std::make_shared<std::vector<T>>(numel_of(shape), T(0));
    }
    Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)) {
        require(static_cast<std::int64_t>(values.size()) == numel_of(shape),
                "tensor: value count does not match shape");
        buf = std::make_shared<std::vector<T>>(std::move(values));
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    std::int64_t numel() const { return numel_of(shape); }
    bool defined() const { return buf != nullptr; }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T* data() { return buf->data(); }
    const T* data() const { return buf->data(); }
    T& operator[](std::int64_t i) { return (*buf)[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return (*buf)[static_cast<std::size_t>(i)]; }

    Tensor reshaped(std::vector<int> s) const {
        require(numel_of(s) == numel(), "reshape: element count mismatch");
        Tensor out;
        out.shape = std::move(s);
        out.buf = buf;
        return out;
    }
    Tensor clone() const {
        Tensor out;
        out.shape = shape;
        out.buf = std::make_shared<std::vector<T>>(*buf);
        return out;
    }
    void fill(T v) { std::fill(buf->begin(), buf->end(), v); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        t.fill(v);
        return t;
    }
    static Tensor randn(std::vector<int> s, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(s));
        for (auto& v : *t.buf) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;
    // 2-D view (rows, cols) over the flat buffer
    MapM mat(int rows, int cols) { return MapM(data(), rows, cols); }
    CMapM mat(int rows, int cols) const { return CMapM(data(), rows, cols); }
    // offset view, for batch slices
    MapM mat_at(std::int64_t offset, int rows, int cols) { return MapM(data() + offset, rows, cols); }
    CMapM mat_at(std::int64_t offset, int rows, int cols) const {
        return CMapM(data() + offset, rows, cols);
    }
};

}  // namespace dseg
