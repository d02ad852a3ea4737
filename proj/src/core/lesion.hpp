#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "core/nn.hpp"
#include "core/ops_spatial.hpp"

namespace dseg {

// 256x256 bilinear crop of an instance's box region (box crop, not mask crop)
template <class T>
Tensor<T> crop_instance(const Tensor<T>& image, const BoxXYXY& box, int size = 256) {
    require(image.ndim() == 3, "crop_instance: expect CxHxW image");
    require(box.area() > 0, "crop_instance: degenerate box");
    int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor<T> crop({ch, size, size});
    for (int c = 0; c < ch; ++c) {
        const T* src = image.data() + static_cast<std::int64_t>(c) * h * w;
        T* dst = crop.data() + static_cast<std::int64_t>(c) * size * size;
        for (int oy = 0; oy < size; ++oy) {
            double sy = box.y0 + (oy + 0.5) / size * box.height() - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            int y0 = static_cast<int>(sy);
            int y1 = std::min(y0 + 1, h - 1);
            double fy = sy - y0;
            for (int ox = 0; ox < size; ++ox) {
                double sx = box.x0 + (ox + 0.5) / size * box.width() - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                int x0 = static_cast<int>(sx);
                int x1 = std::min(x0 + 1, w - 1);
                double fx = sx - x0;
                double v = (1 - fy) * ((1 - fx) * src[static_cast<std::int64_t>(y0) * w + x0] +
                                       fx * src[static_cast<std::int64_t>(y0) * w + x1]) +
                           fy * ((1 - fx) * src[static_cast<std::int64_t>(y1) * w + x0] +
                                 fx * src[static_cast<std::int64_t>(y1) * w + x1]);
                dst[static_cast<std::int64_t>(oy) * size + ox] = static_cast<T>(v);
            }
        }
    }
    return crop;
}

struct LesionHeadSpec {
    int structure_class = kGlomerulus;
    std::vector<std::string> lesion_names;
    int width = 32;      // channels of the first block, doubled per block
    int crop_size = 256;
};

// batch of instance crops with provenance
template <class T>
struct CropBatch {
    Tensor<T> crops;              // (B, 3, S, S) in (-1, 1)
    std::vector<int> classes;     // structure class per crop
    std::vector<int> instance_ids;
};

// One independent multi-label head: three conv blocks (3x3 conv + batchnorm +
// relu), each followed by 2x2 max pooling, then global averaging and a
// logistic multi-label output. Each head owns its parameters so adding or
// removing one head cannot perturb another.
template <class T>
class LesionHead {
public:
    LesionHead(const LesionHeadSpec& spec, std::uint64_t seed) : spec_(spec) {
        require(!spec.lesion_names.empty(), "lesion head: need at least one lesion label");
        Rng rng(seed);
        int w = spec.width;
        conv_[0] = Conv2d<T>::create(ps_, "head.c0", 3, w, 3, 1, 1, rng);
        bn_[0] = BatchNorm2d<T>::create(ps_, "head.b0", w);
        conv_[1] = Conv2d<T>::create(ps_, "head.c1", w, 2 * w, 3, 1, 1, rng);
        bn_[1] = BatchNorm2d<T>::create(ps_, "head.b1", 2 * w);
        conv_[2] = Conv2d<T>::create(ps_, "head.c2", 2 * w, 4 * w, 3, 1, 1, rng);
        bn_[2] = BatchNorm2d<T>::create(ps_, "head.b2", 4 * w);
        fc_ = Linear<T>::create(ps_, "head.fc", 4 * w,
                                static_cast<int>(spec.lesion_names.size()), rng);
    }

    const LesionHeadSpec& spec() const { return spec_; }
    int lesion_count() const { return static_cast<int>(spec_.lesion_names.size()); }
    ParamStore<T>& params() { return ps_; }
    const ParamStore<T>& params() const { return ps_; }

    // crops: (B, 3, S, S) in (-1,1); returns (B, L) probabilities
    int forward_probs(Graph<T>& g, int crops, bool training) const {
        const auto& X = g.val(crops);
        require(X.ndim() == 4 && X.dim(1) == 3 && X.dim(2) == spec_.crop_size &&
                    X.dim(3) == spec_.crop_size,
                "lesion head: bad crop batch shape");
        int b = X.dim(0);
        int x = crops;
        for (int i = 0; i < 3; ++i) {
            x = conv_[static_cast<std::size_t>(i)].fwd(g, x);
            x = bn_[static_cast<std::size_t>(i)].fwd(g, x, training);
            x = g.relu(x);
            x = maxpool2d(g, x);
        }
        // global average pool
        const auto& F = g.val(x);
        int c = F.dim(1);
        std::int64_t hw = static_cast<std::int64_t>(F.dim(2)) * F.dim(3);
        Tensor<T> avg({static_cast<int>(hw), 1});
        avg.fill(T(1) / static_cast<T>(hw));
        int flat = g.reshape(x, {b * c, static_cast<int>(hw)});
        int pooled = g.reshape(g.matmul(flat, g.constant(std::move(avg))), {b, c});
        return g.sigmoid(fc_.fwd(g, pooled));
    }

private:
    LesionHeadSpec spec_;
    ParamStore<T> ps_;
    std::array<Conv2d<T>, 3> conv_;
    std::array<BatchNorm2d<T>, 3> bn_;
    Linear<T> fc_;
};

// Pluggable per-structure registry; at most one head per structure class.
template <class T>
class LesionRegistry {
public:
    void register_head(std::unique_ptr<LesionHead<T>> head) {
        int cls = head->spec().structure_class;
        require(heads_.find(cls) == heads_.end(),
                "lesion registry: class already has a registered head");
        heads_[cls] = std::move(head);
    }

    std::unique_ptr<LesionHead<T>> remove_head(int structure_class) {
        auto it = heads_.find(structure_class);
        require(it != heads_.end(), "lesion registry: no head registered for class");
        auto out = std::move(it->second);
        heads_.erase(it);
        return out;
    }

    LesionHead<T>* find(int structure_class) const {
        auto it = heads_.find(structure_class);
        return it == heads_.end() ? nullptr : it->second.get();
    }

    LesionHead<T>& require_head(int structure_class) const {
        LesionHead<T>* h = find(structure_class);
        require(h != nullptr, "lesion registry: no head registered for class");
        return *h;
    }

    const std::map<int, std::unique_ptr<LesionHead<T>>>& heads() const { return heads_; }
    std::map<int, std::unique_ptr<LesionHead<T>>>& heads() { return heads_; }

    // the paper's dataset: glomeruli with sclerosis, tubuli with atrophy
    static LesionRegistry default_registry(int width, int crop_size, std::uint64_t seed) {
        LesionRegistry r;
        LesionHeadSpec glom{kGlomerulus, {"sclerosis"}, width, crop_size};
        LesionHeadSpec tub{kTubulus, {"atrophy"}, width, crop_size};
        r.register_head(std::make_unique<LesionHead<T>>(glom, seed + 1));
        r.register_head(std::make_unique<LesionHead<T>>(tub, seed + 2));
        return r;
    }

private:
    std::map<int, std::unique_ptr<LesionHead<T>>> heads_;
};

}  // namespace dseg
