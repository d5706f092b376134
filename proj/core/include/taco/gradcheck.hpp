#pragma once

#include <functional>
#include <string>
#include <vector>

#include "taco/params.hpp"

namespace taco {

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        std::int64_t worst_coord = -1;
        double analytic = 0.0;  // at the worst coordinate
        double numeric = 0.0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;

    const Entry& worst() const;
};

// Compares reverse-mode gradients against central finite differences, one
// coordinate at a time. loss_fn must be deterministic and is re-evaluated
// under NoGradGuard for the perturbed points.
//
// rel_err = |a - n| / max(|a|, |n|, denom_floor); coordinates where both
// sides are exactly zero report 0.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ModelParams& params,
                           double fd_step = 1e-3, double denom_floor = 1e-4);

}  // namespace taco
