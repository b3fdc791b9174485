#include "icicle/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icicle {

namespace {

struct ConvDims {
    std::size_t h, w, cin, k, cout, oh, ow;
    int stride, pad;
};

ConvDims conv_dims(const TensorF& input, const TensorF& kernels, int stride, int pad) {
    if (input.shape.size() != 3) throw std::invalid_argument("conv2d: input must be H x W x Cin");
    if (kernels.shape.size() != 4)
        throw std::invalid_argument("conv2d: kernels must be k x k x Cin x Cout");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be nonnegative");

    ConvDims d{};
    d.h = input.shape[0];
    d.w = input.shape[1];
    d.cin = input.shape[2];
    d.k = kernels.shape[0];
    d.cout = kernels.shape[3];
    d.stride = stride;
    d.pad = pad;
    if (kernels.shape[1] != d.k) throw std::invalid_argument("conv2d: kernel must be square");
    if (kernels.shape[2] != d.cin)
        throw std::invalid_argument("conv2d: kernel Cin " + kernels.shape_str() +
                                    " does not match input " + input.shape_str());
    std::size_t ph = d.h + 2 * static_cast<std::size_t>(pad);
    std::size_t pw = d.w + 2 * static_cast<std::size_t>(pad);
    if (d.k > ph || d.k > pw) throw std::invalid_argument("conv2d: kernel larger than padded input");
    if ((ph - d.k) % static_cast<std::size_t>(stride) != 0 ||
        (pw - d.k) % static_cast<std::size_t>(stride) != 0)
        throw std::invalid_argument("conv2d: non-integer output size");
    d.oh = (ph - d.k) / static_cast<std::size_t>(stride) + 1;
    d.ow = (pw - d.k) / static_cast<std::size_t>(stride) + 1;
    return d;
}

}  // namespace

TensorF conv2d(const TensorF& input, const TensorF& kernels, const TensorF& bias,
               int stride, int pad) {
    ConvDims d = conv_dims(input, kernels, stride, pad);
    if (bias.numel() != d.cout) throw std::invalid_argument("conv2d: bias size mismatch");

    TensorF out({d.oh, d.ow, d.cout});
    for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
            double* optr = &out.data[(oy * d.ow + ox) * d.cout];
            for (std::size_t co = 0; co < d.cout; ++co) optr[co] = bias.data[co];
            for (std::size_t ky = 0; ky < d.k; ++ky) {
                long iy = static_cast<long>(oy) * d.stride + static_cast<long>(ky) - d.pad;
                if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                for (std::size_t kx = 0; kx < d.k; ++kx) {
                    long ix = static_cast<long>(ox) * d.stride + static_cast<long>(kx) - d.pad;
                    if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                    const double* iptr =
                        &input.data[(static_cast<std::size_t>(iy) * d.w +
                                     static_cast<std::size_t>(ix)) * d.cin];
                    const double* wbase = &kernels.data[((ky * d.k + kx) * d.cin) * d.cout];
                    for (std::size_t ci = 0; ci < d.cin; ++ci) {
                        double iv = iptr[ci];
                        const double* wptr = wbase + ci * d.cout;
                        for (std::size_t co = 0; co < d.cout; ++co) optr[co] += iv * wptr[co];
                    }
                }
            }
        }
    }
    if (!out.all_finite()) throw std::runtime_error("conv2d: non-finite output");
    return out;
}

void conv2d_backward(const TensorF& input, const TensorF& kernels, int stride, int pad,
                     const TensorF& d_out, TensorF* d_input, TensorF* d_kernels,
                     TensorF* d_bias) {
    ConvDims d = conv_dims(input, kernels, stride, pad);
    if (d_out.shape != std::vector<std::size_t>{d.oh, d.ow, d.cout})
        throw std::invalid_argument("conv2d_backward: d_out shape mismatch");

    for (std::size_t oy = 0; oy < d.oh; ++oy) {
        for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const double* gptr = &d_out.data[(oy * d.ow + ox) * d.cout];
            if (d_bias) {
                for (std::size_t co = 0; co < d.cout; ++co) d_bias->data[co] += gptr[co];
            }
            for (std::size_t ky = 0; ky < d.k; ++ky) {
                long iy = static_cast<long>(oy) * d.stride + static_cast<long>(ky) - d.pad;
                if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                for (std::size_t kx = 0; kx < d.k; ++kx) {
                    long ix = static_cast<long>(ox) * d.stride + static_cast<long>(kx) - d.pad;
                    if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
                    std::size_t ibase = (static_cast<std::size_t>(iy) * d.w +
                                         static_cast<std::size_t>(ix)) * d.cin;
                    std::size_t wbase = (ky * d.k + kx) * d.cin * d.cout;
                    for (std::size_t ci = 0; ci < d.cin; ++ci) {
                        double iv = input.data[ibase + ci];
                        const double* wptr = &kernels.data[wbase + ci * d.cout];
                        double gin = 0.0;
                        for (std::size_t co = 0; co < d.cout; ++co) {
                            double g = gptr[co];
                            if (d_kernels) d_kernels->data[wbase + ci * d.cout + co] += iv * g;
                            gin += wptr[co] * g;
                        }
                        if (d_input) d_input->data[ibase + ci] += gin;
                    }
                }
            }
        }
    }
}

double sigmoid(double x) {
    // split on sign for stability at large |x|
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

TensorF activation(const TensorF& input, Activation kind) {
    TensorF out = input;
    if (kind == Activation::relu) {
        for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    } else {
        for (auto& v : out.data) v = sigmoid(v);
    }
    return out;
}

void activation_backward(const TensorF& pre, Activation kind, const TensorF& d_out,
                         TensorF& d_input) {
    if (pre.numel() != d_out.numel() || pre.numel() != d_input.numel())
        throw std::invalid_argument("activation_backward: size mismatch");
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < pre.numel(); ++i)
            d_input.data[i] += pre.data[i] > 0.0 ? d_out.data[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < pre.numel(); ++i) {
            double s = sigmoid(pre.data[i]);
            d_input.data[i] += d_out.data[i] * s * (1.0 - s);
        }
    }
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

std::pair<double, std::vector<double>> softmax_cross_entropy(
    const std::vector<double>& logits, std::size_t label) {
    if (logits.empty()) throw std::invalid_argument("softmax_cross_entropy: empty logits");
    if (label >= logits.size())
        throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double loss = std::log(sum) - (logits[label] - mx);
    std::vector<double> grad = softmax(logits);
    grad[label] -= 1.0;
    return {loss, std::move(grad)};
}

}  // namespace icicle
