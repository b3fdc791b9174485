#include "icicle/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace icicle {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimension must be positive");
        n *= d;
    }
    return n;
}

bool TensorF::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string TensorF::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

bool same_shape(const TensorF& a, const TensorF& b) { return a.shape == b.shape; }

}  // namespace icicle
