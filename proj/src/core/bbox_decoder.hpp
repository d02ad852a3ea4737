#pragma once

#include "core/diffusion.hpp"
#include "core/encoder.hpp"
#include "core/losses.hpp"
#include "core/nn.hpp"
#include "core/ops_loss.hpp"

namespace dseg {

struct BboxDecoderConfig {
    int channels = 256;
    int stages = 6;
    int heads = 8;
    int pool = 7;
    bool global_queries = false;  // ablation: learned static query bank
    int global_query_count = 500;
};

template <class T>
struct StageOutputT {
    int cls_logits = -1;  // (N, 3)
    int boxes = -1;       // (N, 4) absolute xyxy, clamped
    int queries = -1;     // (N, C)
    DetachedPredictions detached;
};

template <class T>
class BboxDecoder {
public:
    BboxDecoder(ParamStore<T>& ps, const BboxDecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        int c = cfg.channels;
        init_proj_ = Linear<T>::create(ps, "dec.init", cfg.pool * cfg.pool * c, c, rng);
        init_ln_ = LayerNorm<T>::create(ps, "dec.init.ln", c);
        time_fc1_ = Linear<T>::create(ps, "dec.time1", c, c, rng);
        time_fc2_ = Linear<T>::create(ps, "dec.time2", c, c, rng);
        if (cfg.global_queries)
            global_bank_ = &ps.add("dec.global_queries",
                                   Tensor<T>::randn({cfg.global_query_count, c}, rng, T(0.02)));
        stages_.reserve(static_cast<std::size_t>(cfg.stages));
        for (int s = 0; s < cfg.stages; ++s)
            stages_.emplace_back(ps, "dec.s" + std::to_string(s), cfg, rng);
    }

    int stage_count() const { return cfg_.stages; }
    const BboxDecoderConfig& config() const { return cfg_; }

    static std::vector<int> levels_for(const std::vector<BoxXYXY>& boxes) {
        std::vector<int> lv(boxes.size());
        for (std::size_t i = 0; i < boxes.size(); ++i) lv[i] = fpn_level_for_box(boxes[i]);
        return lv;
    }

    // pooled regional features -> one dynamic query per box
    int init_queries(Graph<T>& g, const FeaturePyramidT<T>& det,
                     const std::vector<BoxXYXY>& boxes) const {
        if (cfg_.global_queries) {
            require(static_cast<int>(boxes.size()) == cfg_.global_query_count,
                    "global query mode requires box count == bank size");
            return g.param(*global_bank_);
        }
        int pooled = pool_boxes(g, det, boxes);
        int n = static_cast<int>(boxes.size());
        int flat = g.reshape(pooled, {n, cfg_.pool * cfg_.pool * cfg_.channels});
        return init_ln_.fwd(g, init_proj_.fwd(g, flat));
    }

    StageOutputT<T> refine_stage(Graph<T>& g, int stage_idx, int queries,
                                 const std::vector<BoxXYXY>& boxes,
                                 const FeaturePyramidT<T>& det, double img_w,
                                 double img_h) const {
        return stages_[static_cast<std::size_t>(stage_idx)].fwd(g, *this, queries, boxes, det,
                                                                img_w, img_h);
    }

    // full cascade from a corrupted batch; boxes are unscaled and clamped
    // before pooling, stage s+1 consumes stage s boxes and queries
    std::vector<StageOutputT<T>> decode(Graph<T>& g, const FeaturePyramidT<T>& det,
                                        const CorruptedBoxBatch& noisy, double img_w,
                                        double img_h) const {
        std::vector<BoxXYXY> boxes(noisy.boxes.size());
        for (std::size_t i = 0; i < noisy.boxes.size(); ++i)
            boxes[i] = ccwh_to_xyxy(unscale_box(noisy.boxes[i], noisy.scale), img_w, img_h, true);
        int q = init_queries(g, det, boxes);
        int temb = time_embed(g, noisy.t);
        std::vector<StageOutputT<T>> out;
        out.reserve(static_cast<std::size_t>(cfg_.stages));
        for (int s = 0; s < cfg_.stages; ++s) {
            q = g.add_bias(q, temb);
            StageOutputT<T> so = refine_stage(g, s, q, boxes, det, img_w, img_h);
            q = so.queries;
            boxes = so.detached.boxes;
            out.push_back(std::move(so));
        }
        return out;
    }

    int pool_boxes(Graph<T>& g, const FeaturePyramidT<T>& pyr,
                   const std::vector<BoxXYXY>& boxes) const {
        std::vector<int> levels(pyr.levels.begin(), pyr.levels.end());
        return roi_align<T>(g, levels, {kPyramidStrides.begin(), kPyramidStrides.end()}, boxes,
                            levels_for(boxes), cfg_.pool);
    }

    int time_embed(Graph<T>& g, int t) const {
        int e = g.constant(sinusoidal_embedding<T>(static_cast<double>(t), cfg_.channels));
        return g.reshape(time_fc2_.fwd(g, g.relu(time_fc1_.fwd(g, e))), {cfg_.channels});
    }

private:
    struct Stage {
        MultiheadSelfAttention<T> attn;
        LayerNorm<T> ln_attn;
        Linear<T> dyn_params;
        LayerNorm<T> dyn_ln1, dyn_ln2;
        Linear<T> obj_proj;
        LayerNorm<T> ln_obj;
        Linear<T> ffn1, ffn2;
        LayerNorm<T> ln_ffn;
        Linear<T> cls_head;
        Linear<T> reg_fc, reg_head;
        int channels, dyn_dim, pool;

        Stage(ParamStore<T>& ps, const std::string& name, const BboxDecoderConfig& cfg, Rng& rng)
            : channels(cfg.channels), dyn_dim(std::max(8, cfg.channels / 4)), pool(cfg.pool) {
            int c = cfg.channels, d = dyn_dim;
            attn = MultiheadSelfAttention<T>::create(ps, name + ".attn", c, cfg.heads, rng);
            ln_attn = LayerNorm<T>::create(ps, name + ".ln_attn", c);
            dyn_params = Linear<T>::create(ps, name + ".dyn", c, 2 * c * d, rng);
            dyn_ln1 = LayerNorm<T>::create(ps, name + ".dyn_ln1", d);
            dyn_ln2 = LayerNorm<T>::create(ps, name + ".dyn_ln2", c);
            obj_proj = Linear<T>::create(ps, name + ".obj", pool * pool * c, c, rng);
            ln_obj = LayerNorm<T>::create(ps, name + ".ln_obj", c);
            ffn1 = Linear<T>::create(ps, name + ".ffn1", c, 4 * c, rng);
            ffn2 = Linear<T>::create(ps, name + ".ffn2", 4 * c, c, rng);
            ln_ffn = LayerNorm<T>::create(ps, name + ".ln_ffn", c);
            cls_head = Linear<T>::create(ps, name + ".cls", c, kStructureClassCount, rng);
            // focal prior so background dominates at initialization
            cls_head.b->value.fill(static_cast<T>(-std::log(99.0)));
            reg_fc = Linear<T>::create(ps, name + ".reg_fc", c, c, rng);
            reg_head = Linear<T>::create(ps, name + ".reg", c, 4, rng);
            reg_head.w->value.fill(T(0));  // start from identity boxes
        }

        StageOutputT<T> fwd(Graph<T>& g, const BboxDecoder& dec, int queries,
                            const std::vector<BoxXYXY>& boxes, const FeaturePyramidT<T>& det,
                            double img_w, double img_h) const {
            int n = static_cast<int>(boxes.size());
            int c = channels, d = dyn_dim;
            int pooled = dec.pool_boxes(g, det, boxes);  // (N, C, P, P)
            int q = ln_attn.fwd(g, g.add(queries, attn.fwd(g, queries)));
            // query-generated per-region convolution parameters
            int params = dyn_params.fwd(g, q);  // (N, 2*C*D)
            int w1 = g.reshape(g.slice_cols(params, 0, c * d), {n, c, d});
            int w2 = g.reshape(g.slice_cols(params, c * d, 2 * c * d), {n, d, c});
            int feats = g.transpose_last2(g.reshape(pooled, {n, c, pool * pool}));  // (N,49,C)
            int f1 = g.relu(dyn_ln1.fwd(g, g.bmm(feats, w1)));
            int f2 = g.relu(dyn_ln2.fwd(g, g.bmm(f1, w2)));
            int obj = obj_proj.fwd(g, g.reshape(f2, {n, pool * pool * c}));
            q = ln_obj.fwd(g, g.add(q, obj));
            q = ln_ffn.fwd(g, g.add(q, ffn2.fwd(g, g.relu(ffn1.fwd(g, q)))));
            StageOutputT<T> out;
            out.queries = q;
            out.cls_logits = cls_head.fwd(g, q);
            int deltas = reg_head.fwd(g, g.relu(reg_fc.fwd(g, q)));
            out.boxes = apply_box_deltas(g, deltas, boxes, img_w, img_h);
            const auto& lv = g.val(out.cls_logits);
            const auto& bv = g.val(out.boxes);
            out.detached.probs.resize(static_cast<std::size_t>(n));
            out.detached.boxes.resize(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                for (int cc = 0; cc < kStructureClassCount; ++cc)
                    out.detached.probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(cc)] =
                        static_cast<double>(Graph<T>::stable_sigmoid(
                            lv[static_cast<std::int64_t>(i) * kStructureClassCount + cc]));
                out.detached.boxes[static_cast<std::size_t>(i)] =
                    BoxXYXY{static_cast<double>(bv[static_cast<std::int64_t>(i) * 4 + 0]),
                            static_cast<double>(bv[static_cast<std::int64_t>(i) * 4 + 1]),
                            static_cast<double>(bv[static_cast<std::int64_t>(i) * 4 + 2]),
                            static_cast<double>(bv[static_cast<std::int64_t>(i) * 4 + 3])};
            }
            return out;
        }
    };

    BboxDecoderConfig cfg_;
    Linear<T> init_proj_;
    LayerNorm<T> init_ln_;
    Linear<T> time_fc1_, time_fc2_;
    Param<T>* global_bank_ = nullptr;
    std::vector<Stage> stages_;
};

}  // namespace dseg
