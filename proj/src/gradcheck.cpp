#include "icicle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icicle {

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<std::pair<std::string, TensorF*>>& params,
                           double h, double tol) {
    GradCheckReport report;
    report.tol = tol;
    for (const auto& [name, p] : params) {
        if (!p->has_grad()) throw std::runtime_error("grad_check: missing analytic gradient for " + name);
        GradCheckReport::Entry entry;
        entry.name = name;
        for (std::size_t i = 0; i < p->numel(); ++i) {
            double saved = p->data[i];
            p->data[i] = saved + h;
            double fp = loss_fn();
            p->data[i] = saved - h;
            double fm = loss_fn();
            p->data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite loss at perturbed point of " + name);
            double numeric = (fp - fm) / (2.0 * h);
            double analytic = p->grad[i];
            double rel = std::fabs(analytic - numeric) /
                         std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace icicle
