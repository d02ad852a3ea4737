#pragma once

#include <functional>
#include <vector>

#include "core/nn.hpp"

namespace dseg::testutil {

// Central finite-difference check of parameter gradients at 64-bit precision.
// `loss_fn` must run a fresh forward pass and return the scalar loss value.
// Returns the max relative error over `samples` random entries per parameter.
inline double max_grad_rel_error(ParamStore<double>& ps,
                                 const std::vector<Param<double>*>& targets,
                                 const std::function<double(bool)>& loss_fn, Rng& rng,
                                 int samples = 5, double h = 1e-4) {
    ps.zero_grad();
    loss_fn(true);  // forward + backward, fills grads
    double worst = 0;
    for (Param<double>* p : targets) {
        for (int s = 0; s < samples; ++s) {
            std::int64_t j = rng.uniform_int(0, p->value.numel() - 1);
            double orig = p->value[j];
            double step = h * std::max(1.0, std::abs(orig));
            p->value[j] = orig + step;
            double lp = loss_fn(false);
            p->value[j] = orig - step;
            double lm = loss_fn(false);
            p->value[j] = orig;
            double fd = (lp - lm) / (2 * step);
            double an = p->grad[j];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

}  // namespace dseg::testutil
