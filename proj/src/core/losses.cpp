#include "core/losses.hpp"

#include <cmath>
#include <limits>

namespace dseg {

// Shortest augmenting path assignment (Jonker-Volgenant style) with
// potentials; exact for rectangular cost matrices with rows <= cols.
std::vector<int> solve_assignment(const std::vector<double>& cost, int rows, int cols) {
    require(rows <= cols, "solve_assignment: need rows <= cols");
    require(static_cast<int>(cost.size()) == rows * cols, "solve_assignment: bad cost size");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(rows) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(cols) + 1, 0.0);
    std::vector<int> col_row(static_cast<std::size_t>(cols) + 1, 0);  // row matched to column
    std::vector<int> way(static_cast<std::size_t>(cols) + 1, 0);
    for (int i = 1; i <= rows; ++i) {
        col_row[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(cols) + 1, inf);
        std::vector<bool> used(static_cast<std::size_t>(cols) + 1, false);
        do {
            used[static_cast<std::size_t>(j0)] = true;
            int i0 = col_row[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = cost[static_cast<std::size_t>(i0 - 1) * cols + (j - 1)] -
                             u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= cols; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(col_row[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (col_row[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            col_row[static_cast<std::size_t>(j0)] = col_row[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_col(static_cast<std::size_t>(rows), -1);
    for (int j = 1; j <= cols; ++j)
        if (col_row[static_cast<std::size_t>(j)] > 0)
            row_col[static_cast<std::size_t>(col_row[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_col;
}

MatchResult hungarian_match(const DetachedPredictions& pred,
                            const std::vector<LabeledInstance>& gt, const LossWeights& w,
                            double img_w, double img_h) {
    int n_pred = static_cast<int>(pred.boxes.size());
    int n_gt = static_cast<int>(gt.size());
    require(n_gt <= n_pred, "hungarian_match: more ground truth than predictions");
    MatchResult out;
    if (n_gt == 0) return out;
    std::vector<double> cost(static_cast<std::size_t>(n_gt) * n_pred);
    std::vector<BoxCCWH> pred_ccwh(static_cast<std::size_t>(n_pred));
    for (int p = 0; p < n_pred; ++p)
        pred_ccwh[static_cast<std::size_t>(p)] =
            xyxy_to_ccwh(pred.boxes[static_cast<std::size_t>(p)], img_w, img_h);
    for (int gi = 0; gi < n_gt; ++gi) {
        const LabeledInstance& inst = gt[static_cast<std::size_t>(gi)];
        BoxCCWH gc = xyxy_to_ccwh(inst.box, img_w, img_h);
        for (int p = 0; p < n_pred; ++p) {
            const BoxCCWH& pc = pred_ccwh[static_cast<std::size_t>(p)];
            double l1 = std::abs(pc.cx - gc.cx) + std::abs(pc.cy - gc.cy) +
                        std::abs(pc.w - gc.w) + std::abs(pc.h - gc.h);
            double c = -w.w_cls *
                           pred.probs[static_cast<std::size_t>(p)]
                                     [static_cast<std::size_t>(inst.class_id)] +
                       w.w_l1 * l1 +
                       w.w_giou * (1.0 - giou(pred.boxes[static_cast<std::size_t>(p)], inst.box));
            cost[static_cast<std::size_t>(gi) * n_pred + p] = c;
        }
    }
    std::vector<int> row_col = solve_assignment(cost, n_gt, n_pred);
    for (int gi = 0; gi < n_gt; ++gi) {
        int p = row_col[static_cast<std::size_t>(gi)];
        out.pairs.push_back({p, gi});
        out.total_cost += cost[static_cast<std::size_t>(gi) * n_pred + p];
    }
    return out;
}

}  // namespace dseg
