#include "sg/layers.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "sg/kernels.hpp"
#include "sg/random.hpp"

namespace sg {

using detail::TensorImpl;
using i64 = std::int64_t;

namespace {

template <class F>
void dispatch(DType dt, F&& f) {
  if (dt == DType::F32) {
    f(float{});
  } else {
    f(double{});
  }
}

bool wants_grad(const TensorImpl& t) { return t.requires_grad || t.tracked; }

// Uniform over +-sqrt(3/fan_in) has variance 1/fan_in, which keeps activation
// scale roughly constant through a linear op instead of shrinking it 3x per
// layer. The blocks without a following batchnorm (ConvF, the fc pair, the
// output block) rely on this to keep early gradients alive.
Tensor fan_in_uniform(Shape shape, i64 fan_in, std::uint64_t seed, DType dtype) {
  const double b = std::sqrt(3.0 / static_cast<double>(fan_in));
  Tensor w = Tensor::uniform(std::move(shape), -b, b, seed, dtype);
  w.set_requires_grad(true);
  return w;
}

Tensor zero_param(Shape shape, DType dtype) {
  Tensor b = Tensor::zeros(std::move(shape), dtype);
  b.set_requires_grad(true);
  return b;
}

void check_layer_geometry(const char* op, i64 in_ch, i64 out_ch, i64 k, i64 stride,
                          i64 padding) {
  if (in_ch < 1 || out_ch < 1 || k < 1 || stride < 1 || padding < 0) {
    throw ArgumentError(std::string(op) + ": invalid geometry (channels " +
                        std::to_string(in_ch) + "->" + std::to_string(out_ch) +
                        ", k=" + std::to_string(k) + ", stride=" +
                        std::to_string(stride) + ", padding=" +
                        std::to_string(padding) + ")");
  }
}

}  // namespace

Conv2dParams make_conv2d(i64 in_ch, i64 out_ch, i64 k, i64 stride, i64 padding,
                         std::uint64_t seed, DType dtype) {
  check_layer_geometry("make_conv2d", in_ch, out_ch, k, stride, padding);
  Conv2dParams p;
  p.weight = fan_in_uniform({out_ch, in_ch, k, k}, in_ch * k * k, seed, dtype);
  p.bias = zero_param({out_ch}, dtype);
  p.stride = stride;
  p.padding = padding;
  return p;
}

ConvT2dParams make_conv_transpose2d(i64 in_ch, i64 out_ch, i64 k, i64 stride,
                                    i64 padding, std::uint64_t seed, DType dtype) {
  check_layer_geometry("make_conv_transpose2d", in_ch, out_ch, k, stride, padding);
  ConvT2dParams p;
  p.weight = fan_in_uniform({in_ch, out_ch, k, k}, in_ch * k * k, seed, dtype);
  p.bias = zero_param({out_ch}, dtype);
  p.stride = stride;
  p.padding = padding;
  return p;
}

BatchNorm2dParams make_batchnorm2d(i64 ch, double momentum, double eps, DType dtype) {
  if (ch < 1) throw ArgumentError("make_batchnorm2d: channels must be positive");
  BatchNorm2dParams p;
  p.gamma = Tensor::full({ch}, 1.0, dtype);
  p.gamma.set_requires_grad(true);
  p.beta = zero_param({ch}, dtype);
  p.running_mean = Tensor::zeros({ch}, dtype);
  p.running_var = Tensor::full({ch}, 1.0, dtype);
  p.momentum = momentum;
  p.eps = eps;
  return p;
}

LinearParams make_linear(i64 in_features, i64 out_features, std::uint64_t seed,
                         DType dtype) {
  if (in_features < 1 || out_features < 1) {
    throw ArgumentError("make_linear: feature extents must be positive");
  }
  LinearParams p;
  p.weight = fan_in_uniform({out_features, in_features}, in_features, seed, dtype);
  p.bias = zero_param({out_features}, dtype);
  return p;
}

// ---- conv2d -----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  if (x.rank() != 4 || p.weight.rank() != 4 || p.bias.rank() != 1) {
    throw ShapeError("conv2d: expects NCHW input, 4-d weight, 1-d bias");
  }
  if (x.dtype() != p.weight.dtype() || x.dtype() != p.bias.dtype()) {
    throw ShapeError("conv2d: dtype mismatch between input and parameters");
  }
  const i64 B = x.extent(0), Cin = x.extent(1), H = x.extent(2), W = x.extent(3);
  const i64 Cout = p.weight.extent(0), KH = p.weight.extent(2),
            KW = p.weight.extent(3);
  if (p.weight.extent(1) != Cin) {
    throw ShapeError("conv2d: input has " + std::to_string(Cin) +
                     " channels but weight expects " +
                     std::to_string(p.weight.extent(1)));
  }
  if (p.bias.extent(0) != Cout) throw ShapeError("conv2d: bias extent mismatch");
  const i64 stride = p.stride, pad = p.padding;
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: invalid stride/padding");
  const i64 OH = kernels::conv_out_extent(H, KH, stride, pad);
  const i64 OW = kernels::conv_out_extent(W, KW, stride, pad);
  if (OH < 1 || OW < 1) {
    throw ShapeError("conv2d: no valid output positions for input " +
                     shape_str(x.shape()) + " with kernel " +
                     shape_str(p.weight.shape()));
  }

  Tensor y = Tensor::zeros({B, Cout, OH, OW}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::conv2d_forward<T>(x.impl()->ptr<T>(), p.weight.impl()->ptr<T>(),
                               p.bias.impl()->ptr<T>(), y.impl()->ptr<T>(), B, Cin, H,
                               W, Cout, KH, KW, stride, pad, OH, OW);
  });

  auto xi = x.impl();
  auto wi = p.weight.impl();
  auto bi = p.bias.impl();
  auto yi = y.impl();
  const Tensor ins[3] = {x, p.weight, p.bias};
  detail::finish_op(
      "conv2d", std::span<const Tensor>(ins, 3), y,
      [xi, wi, bi, yi, B, Cin, H, W, Cout, KH, KW, stride, pad, OH, OW]() {
        dispatch(yi->dtype, [&](auto tag) {
          using T = decltype(tag);
          const T* g = yi->grad_ptr<T>();
          if (wants_grad(*xi)) {
            std::vector<T> tmp(static_cast<std::size_t>(xi->numel()));
            kernels::conv2d_adjoint<T>(g, wi->ptr<T>(), nullptr, tmp.data(), B, Cout,
                                       OH, OW, Cin, KH, KW, stride, pad, H, W);
            detail::accumulate_grad_raw(*xi, tmp.data());
          }
          if (wants_grad(*wi)) {
            wi->ensure_grad();
            kernels::conv2d_weight_grad<T>(xi->ptr<T>(), g, wi->grad_ptr<T>(), B, Cin,
                                           H, W, Cout, KH, KW, stride, pad, OH, OW);
          }
          if (wants_grad(*bi)) {
            bi->ensure_grad();
            kernels::channel_bias_grad<T>(g, bi->grad_ptr<T>(), B, Cout, OH, OW);
          }
        });
      });
  return y;
}

// ---- conv_transpose2d ---------------------------------------------------------

Tensor conv_transpose2d(const Tensor& x, const ConvT2dParams& p) {
  if (x.rank() != 4 || p.weight.rank() != 4 || p.bias.rank() != 1) {
    throw ShapeError("conv_transpose2d: expects NCHW input, 4-d weight, 1-d bias");
  }
  if (x.dtype() != p.weight.dtype() || x.dtype() != p.bias.dtype()) {
    throw ShapeError("conv_transpose2d: dtype mismatch");
  }
  const i64 B = x.extent(0), C1 = x.extent(1), H1 = x.extent(2), W1 = x.extent(3);
  const i64 C2 = p.weight.extent(1), KH = p.weight.extent(2), KW = p.weight.extent(3);
  if (p.weight.extent(0) != C1) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(C1) +
                     " channels but weight expects " +
                     std::to_string(p.weight.extent(0)));
  }
  if (p.bias.extent(0) != C2) {
    throw ShapeError("conv_transpose2d: bias extent mismatch");
  }
  const i64 stride = p.stride, pad = p.padding;
  if (stride < 1 || pad < 0) {
    throw ArgumentError("conv_transpose2d: invalid stride/padding");
  }
  const i64 OH = kernels::convt_out_extent(H1, KH, stride, pad);
  const i64 OW = kernels::convt_out_extent(W1, KW, stride, pad);
  if (OH < 1 || OW < 1) {
    throw ShapeError("conv_transpose2d: output extent collapsed for input " +
                     shape_str(x.shape()));
  }

  Tensor y = Tensor::zeros({B, C2, OH, OW}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::conv2d_adjoint<T>(x.impl()->ptr<T>(), p.weight.impl()->ptr<T>(),
                               p.bias.impl()->ptr<T>(), y.impl()->ptr<T>(), B, C1, H1,
                               W1, C2, KH, KW, stride, pad, OH, OW);
  });

  auto xi = x.impl();
  auto wi = p.weight.impl();
  auto bi = p.bias.impl();
  auto yi = y.impl();
  const Tensor ins[3] = {x, p.weight, p.bias};
  detail::finish_op(
      "conv_transpose2d", std::span<const Tensor>(ins, 3), y,
      [xi, wi, bi, yi, B, C1, H1, W1, C2, KH, KW, stride, pad, OH, OW]() {
        dispatch(yi->dtype, [&](auto tag) {
          using T = decltype(tag);
          const T* g = yi->grad_ptr<T>();
          if (wants_grad(*xi)) {
            // adjoint of the adjoint: a plain convolution of the gradient
            std::vector<T> tmp(static_cast<std::size_t>(xi->numel()));
            kernels::conv2d_forward<T>(g, wi->ptr<T>(), nullptr, tmp.data(), B, C2, OH,
                                       OW, C1, KH, KW, stride, pad, H1, W1);
            detail::accumulate_grad_raw(*xi, tmp.data());
          }
          if (wants_grad(*wi)) {
            wi->ensure_grad();
            kernels::convt2d_weight_grad<T>(xi->ptr<T>(), g, wi->grad_ptr<T>(), B, C1,
                                            H1, W1, C2, KH, KW, stride, pad, OH, OW);
          }
          if (wants_grad(*bi)) {
            bi->ensure_grad();
            kernels::channel_bias_grad<T>(g, bi->grad_ptr<T>(), B, C2, OH, OW);
          }
        });
      });
  return y;
}

// ---- batchnorm2d ----------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, BatchNorm2dParams& p, bool training) {
  if (x.rank() != 4) throw ShapeError("batchnorm2d: expects NCHW input");
  const i64 B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (p.gamma.rank() != 1 || p.gamma.extent(0) != C || p.beta.extent(0) != C ||
      p.running_mean.extent(0) != C || p.running_var.extent(0) != C) {
    throw ShapeError("batchnorm2d: parameter extents do not match " +
                     std::to_string(C) + " channels");
  }
  if (x.dtype() != p.gamma.dtype()) throw ShapeError("batchnorm2d: dtype mismatch");
  const i64 n = B * H * W;
  if (training && n < 2) {
    throw ArgumentError("batchnorm2d: train mode needs at least 2 values per channel");
  }

  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  // Normalized values, saved for the backward pass.
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  // Per-channel 1/sqrt(var+eps) actually used in the forward.
  Tensor inv_std = Tensor::zeros({C}, x.dtype());

  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.impl()->ptr<T>();
    const T* gam = p.gamma.impl()->ptr<T>();
    const T* bet = p.beta.impl()->ptr<T>();
    T* py = y.impl()->ptr<T>();
    T* ph = xhat.impl()->ptr<T>();
    T* pis = inv_std.impl()->ptr<T>();
    const i64 plane = H * W;

    std::vector<T> mu(static_cast<std::size_t>(C)), var(static_cast<std::size_t>(C));
    if (training) {
      std::vector<T> tmp(static_cast<std::size_t>(plane));
      for (i64 c = 0; c < C; ++c) {
        T acc = 0;
        for (i64 b = 0; b < B; ++b) {
          acc += kernels::reduce_sum<T>(px + ((b * C + c) * plane), plane);
        }
        const T m = acc / static_cast<T>(n);
        T acc2 = 0;
        for (i64 b = 0; b < B; ++b) {
          const T* pl = px + ((b * C + c) * plane);
          for (i64 i = 0; i < plane; ++i) {
            const T d = pl[i] - m;
            tmp[static_cast<std::size_t>(i)] = d * d;
          }
          acc2 += kernels::reduce_sum<T>(tmp.data(), plane);
        }
        mu[static_cast<std::size_t>(c)] = m;
        var[static_cast<std::size_t>(c)] = acc2 / static_cast<T>(n);
      }
      // fold batch statistics into the running estimates (unbiased variance)
      T* rm = p.running_mean.impl()->ptr<T>();
      T* rv = p.running_var.impl()->ptr<T>();
      const T mom = static_cast<T>(p.momentum);
      const T bessel = static_cast<T>(n) / static_cast<T>(n - 1);
      for (i64 c = 0; c < C; ++c) {
        rm[c] = (T(1) - mom) * rm[c] + mom * mu[static_cast<std::size_t>(c)];
        rv[c] = (T(1) - mom) * rv[c] +
                mom * var[static_cast<std::size_t>(c)] * bessel;
      }
    } else {
      const T* rm = p.running_mean.impl()->ptr<T>();
      const T* rv = p.running_var.impl()->ptr<T>();
      for (i64 c = 0; c < C; ++c) {
        mu[static_cast<std::size_t>(c)] = rm[c];
        var[static_cast<std::size_t>(c)] = rv[c];
      }
    }

#pragma omp parallel for collapse(2)
    for (i64 b = 0; b < B; ++b) {
      for (i64 c = 0; c < C; ++c) {
        const T m = mu[static_cast<std::size_t>(c)];
        const T is =
            T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + static_cast<T>(p.eps));
        const T* in = px + ((b * C + c) * plane);
        T* out = py + ((b * C + c) * plane);
        T* hat = ph + ((b * C + c) * plane);
        for (i64 i = 0; i < plane; ++i) {
          const T h = (in[i] - m) * is;
          hat[i] = h;
          out[i] = gam[c] * h + bet[c];
        }
      }
    }
    for (i64 c = 0; c < C; ++c) {
      pis[c] = T(1) / std::sqrt(var[static_cast<std::size_t>(c)] +
                                static_cast<T>(p.eps));
    }
  });

  auto xi = x.impl();
  auto gi = p.gamma.impl();
  auto bi = p.beta.impl();
  auto yi = y.impl();
  auto hi = xhat.impl();
  auto ii = inv_std.impl();
  const Tensor ins[3] = {x, p.gamma, p.beta};
  detail::finish_op(
      "batchnorm2d", std::span<const Tensor>(ins, 3), y,
      [xi, gi, bi, yi, hi, ii, B, C, H, W, n, training]() {
        dispatch(yi->dtype, [&](auto tag) {
          using T = decltype(tag);
          const T* g = yi->grad_ptr<T>();
          const T* hat = hi->ptr<T>();
          const T* pis = ii->ptr<T>();
          const T* gam = gi->ptr<T>();
          const i64 plane = H * W;

          std::vector<T> s1(static_cast<std::size_t>(C)),
              s2(static_cast<std::size_t>(C));
          std::vector<T> tmp(static_cast<std::size_t>(plane));
          for (i64 c = 0; c < C; ++c) {
            T a1 = 0, a2 = 0;
            for (i64 b = 0; b < B; ++b) {
              const T* gp = g + ((b * C + c) * plane);
              const T* hp = hat + ((b * C + c) * plane);
              a1 += kernels::reduce_sum<T>(gp, plane);
              for (i64 i = 0; i < plane; ++i) {
                tmp[static_cast<std::size_t>(i)] = gp[i] * hp[i];
              }
              a2 += kernels::reduce_sum<T>(tmp.data(), plane);
            }
            s1[static_cast<std::size_t>(c)] = a1;
            s2[static_cast<std::size_t>(c)] = a2;
          }

          if (wants_grad(*bi)) {
            bi->ensure_grad();
            T* gb = bi->grad_ptr<T>();
            for (i64 c = 0; c < C; ++c) gb[c] += s1[static_cast<std::size_t>(c)];
          }
          if (wants_grad(*gi)) {
            gi->ensure_grad();
            T* gg = gi->grad_ptr<T>();
            for (i64 c = 0; c < C; ++c) gg[c] += s2[static_cast<std::size_t>(c)];
          }
          if (wants_grad(*xi)) {
            xi->ensure_grad();
            T* gx = xi->grad_ptr<T>();
#pragma omp parallel for collapse(2)
            for (i64 b = 0; b < B; ++b) {
              for (i64 c = 0; c < C; ++c) {
                const T* gp = g + ((b * C + c) * plane);
                const T* hp = hat + ((b * C + c) * plane);
                T* out = gx + ((b * C + c) * plane);
                const T scale = gam[c] * pis[c];
                if (training) {
                  const T m1 = s1[static_cast<std::size_t>(c)] / static_cast<T>(n);
                  const T m2 = s2[static_cast<std::size_t>(c)] / static_cast<T>(n);
                  for (i64 i = 0; i < plane; ++i) {
                    out[i] += scale * (gp[i] - m1 - hp[i] * m2);
                  }
                } else {
                  for (i64 i = 0; i < plane; ++i) out[i] += scale * gp[i];
                }
              }
            }
          }
        });
      });
  return y;
}

// ---- linear ---------------------------------------------------------------------

Tensor linear(const Tensor& x, const LinearParams& p) {
  if (x.rank() != 2 || p.weight.rank() != 2 || p.bias.rank() != 1) {
    throw ShapeError("linear: expects (batch, features) input, 2-d weight, 1-d bias");
  }
  if (x.dtype() != p.weight.dtype() || x.dtype() != p.bias.dtype()) {
    throw ShapeError("linear: dtype mismatch");
  }
  const i64 B = x.extent(0), IN = x.extent(1), OUT = p.weight.extent(0);
  if (p.weight.extent(1) != IN) {
    throw ShapeError("linear: input has " + std::to_string(IN) +
                     " features but weight expects " +
                     std::to_string(p.weight.extent(1)));
  }
  if (p.bias.extent(0) != OUT) throw ShapeError("linear: bias extent mismatch");

  Tensor y = Tensor::zeros({B, OUT}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::linear_forward<T>(x.impl()->ptr<T>(), p.weight.impl()->ptr<T>(),
                               p.bias.impl()->ptr<T>(), y.impl()->ptr<T>(), B, IN, OUT);
  });

  auto xi = x.impl();
  auto wi = p.weight.impl();
  auto bi = p.bias.impl();
  auto yi = y.impl();
  const Tensor ins[3] = {x, p.weight, p.bias};
  detail::finish_op("linear", std::span<const Tensor>(ins, 3), y,
                    [xi, wi, bi, yi, B, IN, OUT]() {
                      dispatch(yi->dtype, [&](auto tag) {
                        using T = decltype(tag);
                        const T* g = yi->grad_ptr<T>();
                        if (wants_grad(*xi)) {
                          xi->ensure_grad();
                          kernels::linear_input_grad<T>(g, wi->ptr<T>(),
                                                        xi->grad_ptr<T>(), B, IN, OUT);
                        }
                        const bool w_grad = wants_grad(*wi);
                        const bool b_grad = wants_grad(*bi);
                        if (w_grad || b_grad) {
                          std::vector<T> scratch;
                          T* gw = nullptr;
                          if (w_grad) {
                            wi->ensure_grad();
                            gw = wi->grad_ptr<T>();
                          } else {
                            scratch.resize(static_cast<std::size_t>(wi->numel()));
                            gw = scratch.data();
                          }
                          T* gb = nullptr;
                          if (b_grad) {
                            bi->ensure_grad();
                            gb = bi->grad_ptr<T>();
                          }
                          kernels::linear_weight_grad<T>(xi->ptr<T>(), g, gw, gb, B,
                                                         IN, OUT);
                        }
                      });
                    });
  return y;
}

}  // namespace sg
