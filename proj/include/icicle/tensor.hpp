#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace icicle {

std::size_t shape_numel(const std::vector<std::size_t>& shape);

// Dense row-major tensor of 64-bit floats with an optional gradient buffer
// of the same shape. All model parameters and activations live in these.
struct TensorF {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until alloc_grad()

    TensorF() = default;
    explicit TensorF(std::vector<std::size_t> s)
        : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

    static TensorF zeros(std::vector<std::size_t> s) { return TensorF(std::move(s)); }
    static TensorF full(std::vector<std::size_t> s, double v) {
        TensorF t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    bool has_grad() const { return !grad.empty(); }
    void alloc_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
    void zero_grad() {
        if (has_grad()) grad.assign(data.size(), 0.0);
    }

    // H×W×C indexing for image-like tensors.
    double& at3(std::size_t i, std::size_t j, std::size_t c) {
        return data[(i * shape[1] + j) * shape[2] + c];
    }
    double at3(std::size_t i, std::size_t j, std::size_t c) const {
        return data[(i * shape[1] + j) * shape[2] + c];
    }

    bool all_finite() const;
    std::string shape_str() const;
};

bool same_shape(const TensorF& a, const TensorF& b);

}  // namespace icicle
