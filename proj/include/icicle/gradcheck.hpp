#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "icicle/tensor.hpp"

namespace icicle {

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
        std::size_t worst_index = 0;
        double analytic = 0.0;
        double numeric = 0.0;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Compares the .grad buffers of `params` (already filled by the caller's
// analytic backward) against central finite differences of `loss_fn`,
// perturbing each coordinate by ±h. Relative error per coordinate is
// |analytic - numeric| / max(1, |analytic|, |numeric|). Throws if the loss
// evaluates non-finite at a perturbed point.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<std::pair<std::string, TensorF*>>& params,
                           double h, double tol);

}  // namespace icicle
