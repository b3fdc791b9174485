#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icicle/gradcheck.hpp"
#include "icicle/losses.hpp"

namespace icicle {

// One randomized end-to-end gradient check of total_loss on a tiny model
// with two heads (one frozen in the snapshot, one new). Configurations that
// sit too close to a kink of the loss (relu zero crossings, argmax/argmin
// ties, |a-b| sign changes) are resampled before checking, since central
// differences are meaningless across a kink.
struct GradSuiteCase {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    RegPlacement placement = RegPlacement::similarity;
    double lambda_ir = 0.0;
    std::size_t resamples = 0;
    GradCheckReport report;
};

struct GradSuiteReport {
    std::vector<GradSuiteCase> cases;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;

    std::string text() const;  // deterministic printable summary
};

GradSuiteReport run_gradcheck_suite(std::uint64_t seed, double tol, std::size_t n_configs,
                                    double h = 1e-5);

}  // namespace icicle
