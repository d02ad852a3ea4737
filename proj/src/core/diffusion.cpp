#include "core/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace dseg {

NoiseSchedule build_cosine_schedule(int total_steps) {
    require(total_steps >= 1, "build_cosine_schedule: T must be >= 1");
    const double s = 0.008;
    auto f = [&](double t) {
        double v = std::cos((t / total_steps + s) / (1.0 + s) * M_PI / 2.0);
        return v * v;
    };
    NoiseSchedule sched;
    sched.total_steps = total_steps;
    sched.alpha_bar.resize(static_cast<std::size_t>(total_steps) + 1);
    sched.alpha_bar[0] = 1.0;
    double f0 = f(0.0);
    double prev_raw = 1.0;
    double acc = 1.0;
    for (int t = 1; t <= total_steps; ++t) {
        double raw = f(static_cast<double>(t)) / f0;
        // clip per-step noise so alpha_bar stays strictly positive
        double beta = std::min(1.0 - raw / prev_raw, 0.999);
        acc *= 1.0 - beta;
        sched.alpha_bar[static_cast<std::size_t>(t)] = acc;
        prev_raw = raw;
    }
    return sched;
}

double scale_signal(double x, double scale) { return (2.0 * x - 1.0) * scale; }

double unscale_signal(double x, double scale) {
    return std::clamp((x / scale + 1.0) / 2.0, 0.0, 1.0);
}

Coords4 scale_box(const BoxCCWH& b, double scale) {
    return {scale_signal(b.cx, scale), scale_signal(b.cy, scale), scale_signal(b.w, scale),
            scale_signal(b.h, scale)};
}

BoxCCWH unscale_box(const Coords4& c, double scale) {
    return {unscale_signal(c[0], scale), unscale_signal(c[1], scale), unscale_signal(c[2], scale),
            unscale_signal(c[3], scale)};
}

PaddedBoxes pad_boxes(const std::vector<BoxCCWH>& gt, int n, double scale, Rng& rng) {
    require(static_cast<int>(gt.size()) <= n, "pad_boxes: more ground truth boxes than slots");
    PaddedBoxes out;
    out.boxes = gt;
    out.boxes.reserve(static_cast<std::size_t>(n));
    out.valid.assign(gt.size(), true);
    const double wh_floor = 1e-4;
    for (int i = static_cast<int>(gt.size()); i < n; ++i) {
        BoxCCWH b{unscale_signal(rng.normal(), scale), unscale_signal(rng.normal(), scale),
                  std::max(unscale_signal(rng.normal(), scale), wh_floor),
                  std::max(unscale_signal(rng.normal(), scale), wh_floor)};
        out.boxes.push_back(b);
        out.valid.push_back(false);
    }
    return out;
}

CorruptedBoxBatch q_sample(const std::vector<Coords4>& clean_scaled, int t,
                           const NoiseSchedule& sched, double scale, Rng& rng) {
    require(t >= 0 && t <= sched.total_steps, "q_sample: t out of range");
    double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    CorruptedBoxBatch out;
    out.t = t;
    out.scale = scale;
    out.boxes.reserve(clean_scaled.size());
    for (const Coords4& c : clean_scaled) {
        Coords4 z;
        for (int j = 0; j < 4; ++j) z[static_cast<std::size_t>(j)] =
            sa * c[static_cast<std::size_t>(j)] + sn * rng.normal();
        out.boxes.push_back(z);
    }
    return out;
}

std::vector<Coords4> ddim_step(const std::vector<Coords4>& pred_clean,
                               const std::vector<Coords4>& z_now, int t_now, int t_next,
                               const NoiseSchedule& sched, Rng& rng, double eta) {
    require(t_next >= 0 && t_next < t_now && t_now <= sched.total_steps,
            "ddim_step: need 0 <= t_next < t_now <= T");
    require(pred_clean.size() == z_now.size(), "ddim_step: size mismatch");
    double ab_now = sched.alpha_bar[static_cast<std::size_t>(t_now)];
    double ab_next = sched.alpha_bar[static_cast<std::size_t>(t_next)];
    double sigma = eta * std::sqrt((1.0 - ab_next) / (1.0 - ab_now)) *
                   std::sqrt(1.0 - ab_now / ab_next);
    double dir = std::sqrt(std::max(1.0 - ab_next - sigma * sigma, 0.0));
    std::vector<Coords4> out(z_now.size());
    for (std::size_t i = 0; i < z_now.size(); ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double eps_hat = (z_now[i][j] - std::sqrt(ab_now) * pred_clean[i][j]) /
                             std::sqrt(1.0 - ab_now);
            out[i][j] = std::sqrt(ab_next) * pred_clean[i][j] + dir * eps_hat;
            if (eta > 0.0) out[i][j] += sigma * rng.normal();
        }
    return out;
}

std::vector<Coords4> box_renewal(const std::vector<Coords4>& boxes,
                                 const std::vector<double>& scores, double threshold, Rng& rng) {
    require(boxes.size() == scores.size(), "box_renewal: score/box size mismatch");
    std::vector<Coords4> out = boxes;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (scores[i] >= threshold) continue;
        for (std::size_t j = 0; j < 4; ++j) out[i][j] = rng.normal();
    }
    return out;
}

}  // namespace dseg
