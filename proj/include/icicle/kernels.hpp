#pragma once

#include <utility>
#include <vector>

#include "icicle/tensor.hpp"

namespace icicle {

// 2D convolution over an H×W×Cin input with a k×k×Cin×Cout kernel bank.
// Output is H'×W'×Cout with H' = (H + 2*pad - k)/stride + 1; throws if the
// output size is not integral or shapes disagree.
TensorF conv2d(const TensorF& input, const TensorF& kernels, const TensorF& bias,
               int stride, int pad);

// Accumulates gradients of the convolution into d_input/d_kernels/d_bias
// given the upstream gradient d_out. Any of the output buffers may be null.
void conv2d_backward(const TensorF& input, const TensorF& kernels, int stride, int pad,
                     const TensorF& d_out, TensorF* d_input, TensorF* d_kernels,
                     TensorF* d_bias);

enum class Activation { sigmoid, relu };

TensorF activation(const TensorF& input, Activation kind);

// d_input += d_out * act'(pre). `pre` is the pre-activation input.
void activation_backward(const TensorF& pre, Activation kind, const TensorF& d_out,
                         TensorF& d_input);

double sigmoid(double x);

// Numerically stabilized softmax cross-entropy on a logit vector.
// Returns (loss, d_loss/d_logits). Throws if label is out of range.
std::pair<double, std::vector<double>> softmax_cross_entropy(
    const std::vector<double>& logits, std::size_t label);

std::vector<double> softmax(const std::vector<double>& logits);

}  // namespace icicle
