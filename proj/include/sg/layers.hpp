#pragma once

#include <cstdint>

#include "sg/tensor.hpp"

namespace sg {

// Learnable layer parameter bundles. Plain data: shareable read-only across
// threads during evaluation; training mutates them only between steps.

struct Conv2dParams {
  Tensor weight;  // (out_ch, in_ch, kh, kw)
  Tensor bias;    // (out_ch)
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct ConvT2dParams {
  Tensor weight;  // (in_ch, out_ch, kh, kw)
  Tensor bias;    // (out_ch)
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct BatchNorm2dParams {
  Tensor gamma;         // (ch), learnable
  Tensor beta;          // (ch), learnable
  Tensor running_mean;  // (ch), buffer
  Tensor running_var;   // (ch), buffer
  double momentum = 0.1;
  double eps = 1e-5;
};

struct LinearParams {
  Tensor weight;  // (out_features, in_features)
  Tensor bias;    // (out_features)
};

// Uniform fan-in initialization: weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in))
// (variance 1/fan_in), biases zero, deterministic per seed. Learnable tensors
// come back with requires_grad set; running stats do not.
Conv2dParams make_conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k,
                         std::int64_t stride, std::int64_t padding,
                         std::uint64_t seed, DType dtype = DType::F32);
ConvT2dParams make_conv_transpose2d(std::int64_t in_ch, std::int64_t out_ch,
                                    std::int64_t k, std::int64_t stride,
                                    std::int64_t padding, std::uint64_t seed,
                                    DType dtype = DType::F32);
BatchNorm2dParams make_batchnorm2d(std::int64_t ch, double momentum = 0.1,
                                   double eps = 1e-5, DType dtype = DType::F32);
LinearParams make_linear(std::int64_t in_features, std::int64_t out_features,
                         std::uint64_t seed, DType dtype = DType::F32);

// Cross-correlation with zero padding over NCHW input; differentiable with
// respect to x, weight, and bias.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// Exact adjoint of conv2d with the same weight/stride/padding, bias added
// afterwards. Output extent (in-1)*stride - 2*padding + k.
Tensor conv_transpose2d(const Tensor& x, const ConvT2dParams& p);

// Train mode normalizes with batch statistics over (batch, h, w) per channel
// and folds them into the running stats; eval mode is a pure function of the
// running stats. Train mode needs batch*h*w >= 2.
Tensor batchnorm2d(const Tensor& x, BatchNorm2dParams& p, bool training);

// y = x W^T + b for x (batch, in_features).
Tensor linear(const Tensor& x, const LinearParams& p);

}  // namespace sg
