#include "icicle/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "icicle/rng.hpp"

namespace icicle {

void AdamState::register_param(TensorF* p, AdamParams hp) {
    if (!p) throw std::invalid_argument("AdamState: null parameter");
    Slot s;
    s.param = p;
    s.hp = hp;
    s.m.assign(p->numel(), 0.0);
    s.v.assign(p->numel(), 0.0);
    params_.push_back(std::move(s));
}

void AdamState::step() {
    // validate every gradient first so a NaN leaves all parameters untouched
    for (const Slot& s : params_) {
        if (!s.param->has_grad())
            throw std::runtime_error("AdamState: parameter has no gradient buffer");
        for (double g : s.param->grad)
            if (!std::isfinite(g)) throw std::runtime_error("AdamState: non-finite gradient");
    }
    ++step_;
    for (Slot& s : params_) {
        const double b1 = s.hp.beta1, b2 = s.hp.beta2;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_));
        for (std::size_t i = 0; i < s.param->numel(); ++i) {
            double g = s.param->grad[i] + s.hp.weight_decay * s.param->data[i];
            s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
            s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
            double mhat = s.m[i] / corr1;
            double vhat = s.v[i] / corr2;
            s.param->data[i] -= s.hp.lr * mhat / (std::sqrt(vhat) + s.hp.eps);
        }
    }
}

void AdamState::scale_lr(double factor) {
    for (Slot& s : params_) s.hp.lr *= factor;
}

TensorF xavier_normal_init(std::vector<std::size_t> shape, std::size_t fan_in,
                           std::size_t fan_out, std::uint64_t seed) {
    if (fan_in == 0 || fan_out == 0)
        throw std::invalid_argument("xavier_normal_init: fans must be positive");
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    TensorF t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data) v = stddev * rng.normal();
    return t;
}

}  // namespace icicle
