#pragma once

#include <utility>
#include <vector>

#include "core/common.hpp"
#include "core/geometry.hpp"

namespace dseg {

struct SamplerConfig {
    int max_total = 500;
    int per_class_cap = 133;
    int class_count = kStructureClassCount;
};

// Class-balanced positive sampling directly from ground truth: per class c,
// exactly min(count_c, cap) instances drawn uniformly without replacement.
// Returns indices into gt, in randomized order.
std::vector<int> sample_positive_indices(const std::vector<LabeledInstance>& gt,
                                         const SamplerConfig& cfg, Rng& rng);

std::vector<LabeledInstance> sample_positives(const std::vector<LabeledInstance>& gt,
                                              const SamplerConfig& cfg, Rng& rng);

// Conventional IoU-based positive selection against decoder proposals, kept
// as the biased-sampling ablation. Each pair is (proposal index, gt index);
// a proposal is positive when its IoU with some gt reaches iou_threshold.
std::vector<std::pair<int, int>> sample_biased_proposals(
    const std::vector<BoxXYXY>& proposals, const std::vector<LabeledInstance>& gt,
    double iou_threshold, int max_total, Rng& rng);

}  // namespace dseg
