#pragma once

#include <array>
#include <utility>
#include <vector>

#include "core/geometry.hpp"
#include "core/graph.hpp"
#include "core/ops_loss.hpp"

namespace dseg {

struct LossWeights {
    double w_cls = 2.0;
    double w_l1 = 5.0;
    double w_giou = 2.0;
    double w_mask = 5.0;
    double w_lesion = 1.0;
    bool focal = true;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

// Matching between a prediction set and ground truth. Each gt index appears
// exactly once; unmatched predictions are implicitly "no object".
struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (prediction index, gt index)
    double total_cost = 0.0;
};

// Plain (detached) view of one decoder stage for matching.
struct DetachedPredictions {
    std::vector<std::array<double, kStructureClassCount>> probs;
    std::vector<BoxXYXY> boxes;
};

// Exact min-cost assignment of rows (gt) to columns (predictions), rows <= cols.
// Returns the column chosen for each row.
std::vector<int> solve_assignment(const std::vector<double>& cost, int rows, int cols);

MatchResult hungarian_match(const DetachedPredictions& pred,
                            const std::vector<LabeledInstance>& gt, const LossWeights& w,
                            double img_w, double img_h);

struct LossBreakdown {
    double cls = 0, box_l1 = 0, box_giou = 0, mask_bce = 0, lesion_bce = 0;
    double total = 0;
};

// Classification + box terms of the set loss over one stage; normalized by
// the ground-truth count, summed over stages by the trainer.
template <class T>
struct SetLossNodes {
    int total = -1;
    double cls = 0, box_l1 = 0, box_giou = 0;
};

template <class T>
SetLossNodes<T> set_loss(Graph<T>& g, int cls_logits, int boxes_xyxy,
                         const std::vector<LabeledInstance>& gt, const MatchResult& match,
                         const LossWeights& w, double img_w, double img_h) {
    const auto& L = g.val(cls_logits);
    int n_pred = L.dim(0);
    require(L.ndim() == 2 && L.dim(1) == kStructureClassCount, "set_loss: bad logit shape");
    std::vector<int> targets(static_cast<std::size_t>(n_pred), -1);
    for (auto [p, gi] : match.pairs)
        targets[static_cast<std::size_t>(p)] = gt[static_cast<std::size_t>(gi)].class_id;
    T norm = static_cast<T>(std::max<std::size_t>(gt.size(), 1));

    SetLossNodes<T> out;
    int cls_node;
    if (w.focal) {
        cls_node = focal_loss(g, cls_logits, targets, static_cast<T>(w.focal_alpha),
                              static_cast<T>(w.focal_gamma), norm);
    } else {
        // plain sigmoid CE over the class columns
        Tensor<T> onehot({n_pred, kStructureClassCount});
        for (int i = 0; i < n_pred; ++i)
            if (targets[static_cast<std::size_t>(i)] >= 0)
                onehot[static_cast<std::int64_t>(i) * kStructureClassCount +
                       targets[static_cast<std::size_t>(i)]] = T(1);
        cls_node = bce_with_logits(g, cls_logits, std::move(onehot), norm);
    }
    out.cls = static_cast<double>(g.val(cls_node)[0]);

    int total = g.scale(cls_node, static_cast<T>(w.w_cls));
    if (!match.pairs.empty()) {
        std::vector<int> pred_rows;
        Tensor<T> gt_xyxy({static_cast<int>(match.pairs.size()), 4});
        Tensor<T> gt_ccwh({static_cast<int>(match.pairs.size()), 4});
        int r = 0;
        for (auto [p, gi] : match.pairs) {
            pred_rows.push_back(p);
            const BoxXYXY& b = gt[static_cast<std::size_t>(gi)].box;
            gt_xyxy[r * 4 + 0] = static_cast<T>(b.x0);
            gt_xyxy[r * 4 + 1] = static_cast<T>(b.y0);
            gt_xyxy[r * 4 + 2] = static_cast<T>(b.x1);
            gt_xyxy[r * 4 + 3] = static_cast<T>(b.y1);
            BoxCCWH c = xyxy_to_ccwh(b, img_w, img_h);
            gt_ccwh[r * 4 + 0] = static_cast<T>(c.cx);
            gt_ccwh[r * 4 + 1] = static_cast<T>(c.cy);
            gt_ccwh[r * 4 + 2] = static_cast<T>(c.w);
            gt_ccwh[r * 4 + 3] = static_cast<T>(c.h);
            ++r;
        }
        int matched = g.gather_rows(boxes_xyxy, pred_rows);
        int l1 = l1_loss(g, xyxy_to_ccwhn(g, matched, img_w, img_h), std::move(gt_ccwh), norm);
        int gi = giou_loss(g, matched, std::move(gt_xyxy), norm);
        out.box_l1 = static_cast<double>(g.val(l1)[0]);
        out.box_giou = static_cast<double>(g.val(gi)[0]);
        total = g.add(total, g.add(g.scale(l1, static_cast<T>(w.w_l1)),
                                   g.scale(gi, static_cast<T>(w.w_giou))));
    }
    out.total = total;
    return out;
}

// mean binary cross entropy between predicted mask logits and rasterized
// ground truth of the same shape
template <class T>
int mask_bce(Graph<T>& g, int mask_logits, Tensor<T> gt_grids) {
    require(g.val(mask_logits).shape == gt_grids.shape, "mask_bce: shape mismatch");
    T n = static_cast<T>(gt_grids.numel());
    return bce_with_logits(g, mask_logits, std::move(gt_grids), n);
}

// mean BCE on probabilities for multi-label lesion bits
template <class T>
int lesion_bce(Graph<T>& g, int probs, Tensor<T> labels) {
    require(g.val(probs).shape == labels.shape, "lesion_bce: shape mismatch");
    T n = static_cast<T>(labels.numel());
    return bce_probs(g, probs, std::move(labels), n);
}

}  // namespace dseg
