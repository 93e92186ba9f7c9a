#pragma once

#include <string_view>
#include <vector>

#include "densecount/tape.hpp"
#include "densecount/tensor.hpp"

namespace densecount {

struct ConvOptions {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
};

enum class ActivationKind { kNone, kRelu, kRelu6, kAbs };

std::string_view to_string(ActivationKind kind);
ActivationKind activation_from_string(std::string_view name);

// All ops record onto `tape` when it is non-null and at least one input
// requires a gradient. Passing nullptr runs the forward pass only.

// Dense 2-D cross-correlation with zero padding.
// input [N,Ci,H,W], weight [Co,Ci,kH,kW], bias [Co] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvOptions options, Tape<T>* tape = nullptr);

// One kH x kW kernel per channel. weight [C,1,kH,kW], bias [C].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           ConvOptions options, Tape<T>* tape = nullptr);

// 2x2 window, stride 2. Gradient goes to the first row-major argmax.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape = nullptr);

// Integer-factor bilinear upsampling with half-pixel centers:
// output (y, x) samples the input at ((y + 0.5) / f - 0.5, (x + 0.5) / f - 0.5),
// clamped to [0, H - 1] x [0, W - 1].
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor, Tape<T>* tape = nullptr);

// Elementwise activation. abs uses sign(x) as its derivative, 0 at x = 0.
template <typename T>
Tensor<T> activation(const Tensor<T>& input, ActivationKind kind, Tape<T>* tape = nullptr);

// Concatenation along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

// Sum of all elements as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input, Tape<T>* tape = nullptr);

}  // namespace densecount
