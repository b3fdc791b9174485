#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icicle/tensor.hpp"

namespace icicle {

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // coupled L2, added to the gradient pre-moments
};

// Bias-corrected Adam over a set of registered parameter tensors, with a
// per-tensor learning rate / weight decay group.
class AdamState {
  public:
    void register_param(TensorF* p, AdamParams hp);

    // One optimizer step using each parameter's .grad buffer. Throws on a
    // non-finite gradient before mutating anything.
    void step();

    // Learning-rate schedule hook (halving every N epochs is driven by the
    // training loop).
    void scale_lr(double factor);

    long step_count() const { return step_; }
    std::size_t num_params() const { return params_.size(); }

  private:
    struct Slot {
        TensorF* param = nullptr;
        AdamParams hp;
        std::vector<double> m, v;
    };
    std::vector<Slot> params_;
    long step_ = 0;
};

// Samples a tensor from N(0, 2/(fan_in+fan_out)).
TensorF xavier_normal_init(std::vector<std::size_t> shape, std::size_t fan_in,
                           std::size_t fan_out, std::uint64_t seed);

}  // namespace icicle
