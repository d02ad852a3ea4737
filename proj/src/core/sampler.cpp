#include "core/sampler.hpp"

#include <algorithm>
#include <numeric>

namespace dseg {

namespace {
// uniform without replacement: partial Fisher-Yates over a copy
std::vector<int> draw_without_replacement(std::vector<int> pool, int k, Rng& rng) {
    int n = static_cast<int>(pool.size());
    for (int i = 0; i < k; ++i) {
        int j = static_cast<int>(rng.uniform_int(i, n - 1));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}
}  // namespace

std::vector<int> sample_positive_indices(const std::vector<LabeledInstance>& gt,
                                         const SamplerConfig& cfg, Rng& rng) {
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(cfg.class_count));
    for (int i = 0; i < static_cast<int>(gt.size()); ++i) {
        int c = gt[static_cast<std::size_t>(i)].class_id;
        require(c >= 0 && c < cfg.class_count, "sample_positives: class id out of range");
        by_class[static_cast<std::size_t>(c)].push_back(i);
    }
    std::vector<int> out;
    for (auto& pool : by_class) {
        int take = std::min<int>(cfg.per_class_cap, static_cast<int>(pool.size()));
        if (take == static_cast<int>(pool.size())) {
            out.insert(out.end(), pool.begin(), pool.end());
        } else {
            auto picked = draw_without_replacement(pool, take, rng);
            out.insert(out.end(), picked.begin(), picked.end());
        }
    }
    // randomized output order
    for (int i = static_cast<int>(out.size()) - 1; i > 0; --i) {
        int j = static_cast<int>(rng.uniform_int(0, i));
        std::swap(out[static_cast<std::size_t>(i)], out[static_cast<std::size_t>(j)]);
    }
    return out;
}

std::vector<LabeledInstance> sample_positives(const std::vector<LabeledInstance>& gt,
                                              const SamplerConfig& cfg, Rng& rng) {
    std::vector<LabeledInstance> out;
    for (int i : sample_positive_indices(gt, cfg, rng)) out.push_back(gt[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<std::pair<int, int>> sample_biased_proposals(
    const std::vector<BoxXYXY>& proposals, const std::vector<LabeledInstance>& gt,
    double iou_threshold, int max_total, Rng& rng) {
    std::vector<std::pair<int, int>> positives;
    for (int p = 0; p < static_cast<int>(proposals.size()); ++p) {
        int best = -1;
        double best_iou = iou_threshold;
        for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
            double v = iou(proposals[static_cast<std::size_t>(p)],
                           gt[static_cast<std::size_t>(g)].box);
            if (v >= best_iou) {
                best_iou = v;
                best = g;
            }
        }
        if (best >= 0) positives.push_back({p, best});
    }
    if (static_cast<int>(positives.size()) > max_total) {
        for (int i = 0; i < max_total; ++i) {
            int j = static_cast<int>(rng.uniform_int(i, static_cast<int>(positives.size()) - 1));
            std::swap(positives[static_cast<std::size_t>(i)], positives[static_cast<std::size_t>(j)]);
        }
        positives.resize(static_cast<std::size_t>(max_total));
    }
    return positives;
}

}  // namespace dseg
