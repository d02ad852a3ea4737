#pragma once

#include <array>
#include <vector>

#include "core/common.hpp"
#include "core/geometry.hpp"

namespace dseg {

using Coords4 = std::array<double, 4>;

// Cumulative signal coefficients; alpha_bar[0] == 1 exactly, strictly
// decreasing, alpha_bar[T] small but positive.
struct NoiseSchedule {
    int total_steps = 0;                // T
    std::vector<double> alpha_bar;      // T+1 entries
};

NoiseSchedule build_cosine_schedule(int total_steps);

// Fixed-cardinality set of signal-scaled ccwh boxes at diffusion state t.
struct CorruptedBoxBatch {
    std::vector<Coords4> boxes;
    int t = 0;
    double scale = 1.0;
};

// affine map [0,1] <-> [-scale, scale]; the inverse clamps to [0,1] first
double scale_signal(double x, double scale);
double unscale_signal(double x, double scale);
Coords4 scale_box(const BoxCCWH& b, double scale);
BoxCCWH unscale_box(const Coords4& c, double scale);

struct PaddedBoxes {
    std::vector<BoxCCWH> boxes;       // normalized ccwh, first rows == gt
    std::vector<bool> valid;          // true for real ground-truth rows
};

// Pads ground truth to exactly n rows. Padding rows are standard-normal
// draws in scaled space mapped back to normalized coordinates, with w,h
// floored so padded boxes keep positive extent.
PaddedBoxes pad_boxes(const std::vector<BoxCCWH>& gt, int n, double scale, Rng& rng);

// forward corruption, Gaussian reparameterization of q(z_t | z_0)
CorruptedBoxBatch q_sample(const std::vector<Coords4>& clean_scaled, int t,
                           const NoiseSchedule& sched, double scale, Rng& rng);

// one reverse jump t_now -> t_next given the predicted clean boxes
std::vector<Coords4> ddim_step(const std::vector<Coords4>& pred_clean,
                               const std::vector<Coords4>& z_now, int t_now, int t_next,
                               const NoiseSchedule& sched, Rng& rng, double eta = 0.0);

// rows with score >= threshold kept bit-exactly, the rest redrawn N(0,1)
std::vector<Coords4> box_renewal(const std::vector<Coords4>& boxes,
                                 const std::vector<double>& scores, double threshold, Rng& rng);

}  // namespace dseg
