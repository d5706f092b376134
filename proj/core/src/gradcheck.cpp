#include "taco/gradcheck.hpp"

#include <cmath>

namespace taco {

const GradCheckReport::Entry& GradCheckReport::worst() const {
    const Entry* w = &entries.front();
    for (const auto& e : entries)
        if (e.max_rel_err > w->max_rel_err) w = &e;
    return *w;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ModelParams& params,
                           double fd_step, double denom_floor) {
    const GradMap analytic = collect_gradients(loss_fn(), params);

    GradCheckReport report;
    for (auto& [name, tensor] : params.items()) {
        GradCheckReport::Entry entry;
        entry.name = name;
        const std::vector<double>* ga = analytic.find(name);
        auto values = tensor.mutable_values();
        for (std::int64_t i = 0; i < tensor.numel(); ++i) {
            const double saved = values[i];
            double plus, minus;
            {
                autograd::NoGradGuard no_grad;
                values[i] = saved + fd_step;
                plus = loss_fn().item();
                values[i] = saved - fd_step;
                minus = loss_fn().item();
                values[i] = saved;
            }
            const double numeric = (plus - minus) / (2.0 * fd_step);
            const double a = (*ga)[static_cast<std::size_t>(i)];
            double rel = 0.0;
            if (a != 0.0 || numeric != 0.0)
                rel = std::abs(a - numeric) /
                      std::max({std::abs(a), std::abs(numeric), denom_floor});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_coord = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace taco
