#pragma once

// Serial reference kernels: the most literal loop formulations, kept
// deliberately independent of the optimized OpenMP kernels. Tests use them
// as oracles; tools/bench_kernels compares both paths.

#include <cstdint>

namespace sg::reference {

using i64 = std::int64_t;

// Quadruple-loop direct cross-correlation with explicit zero padding.
template <typename T>
void conv2d_naive(const T* x, const T* w, const T* bias, T* y, i64 B, i64 Cin,
                  i64 H, i64 W, i64 Cout, i64 KH, i64 KW, i64 stride, i64 pad,
                  i64 OH, i64 OW) {
  for (i64 b = 0; b < B; ++b)
    for (i64 oc = 0; oc < Cout; ++oc)
      for (i64 oh = 0; oh < OH; ++oh)
        for (i64 ow = 0; ow < OW; ++ow) {
          T acc = bias ? bias[oc] : T(0);
          for (i64 ic = 0; ic < Cin; ++ic)
            for (i64 kh = 0; kh < KH; ++kh)
              for (i64 kw = 0; kw < KW; ++kw) {
                const i64 ih = oh * stride + kh - pad;
                const i64 iw = ow * stride + kw - pad;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((b * Cin + ic) * H + ih) * W + iw] *
                       w[((oc * Cin + ic) * KH + kh) * KW + kw];
              }
          y[((b * Cout + oc) * OH + oh) * OW + ow] = acc;
        }
}

// Transposed convolution in scatter form: every input element distributes
// its value across the kernel footprint. Weight layout (C1, C2, KH, KW).
template <typename T>
void convt2d_naive(const T* x, const T* w, const T* bias, T* y, i64 B, i64 C1,
                   i64 H1, i64 W1, i64 C2, i64 KH, i64 KW, i64 stride, i64 pad,
                   i64 OH, i64 OW) {
  for (i64 b = 0; b < B; ++b)
    for (i64 c2 = 0; c2 < C2; ++c2)
      for (i64 i = 0; i < OH * OW; ++i)
        y[((b * C2 + c2) * OH) * OW + i] = bias ? bias[c2] : T(0);
  for (i64 b = 0; b < B; ++b)
    for (i64 c1 = 0; c1 < C1; ++c1)
      for (i64 ih = 0; ih < H1; ++ih)
        for (i64 iw = 0; iw < W1; ++iw) {
          const T v = x[((b * C1 + c1) * H1 + ih) * W1 + iw];
          for (i64 c2 = 0; c2 < C2; ++c2)
            for (i64 kh = 0; kh < KH; ++kh)
              for (i64 kw = 0; kw < KW; ++kw) {
                const i64 oh = ih * stride + kh - pad;
                const i64 ow = iw * stride + kw - pad;
                if (oh < 0 || oh >= OH || ow < 0 || ow >= OW) continue;
                y[((b * C2 + c2) * OH + oh) * OW + ow] +=
                    v * w[((c1 * C2 + c2) * KH + kh) * KW + kw];
              }
        }
}

template <typename T>
void linear_naive(const T* x, const T* w, const T* bias, T* y, i64 B, i64 IN,
                  i64 OUT) {
  for (i64 b = 0; b < B; ++b)
    for (i64 o = 0; o < OUT; ++o) {
      T acc = bias ? bias[o] : T(0);
      for (i64 i = 0; i < IN; ++i) acc += x[b * IN + i] * w[o * IN + i];
      y[b * OUT + o] = acc;
    }
}

// Cyclic shift by explicit modular index arithmetic over flat multi-indices.
template <typename T>
void roll_naive(const T* x, T* y, const std::int64_t* shape, i64 rank, i64 shift,
                i64 axis) {
  i64 numel = 1;
  for (i64 i = 0; i < rank; ++i) numel *= shape[i];
  std::int64_t strides_buf[16];
  i64 s = 1;
  for (i64 i = rank - 1; i >= 0; --i) {
    strides_buf[i] = s;
    s *= shape[i];
  }
  const i64 n = shape[axis];
  for (i64 out = 0; out < numel; ++out) {
    const i64 pos = (out / strides_buf[axis]) % n;
    i64 src_pos = (pos - shift) % n;
    if (src_pos < 0) src_pos += n;
    const i64 in = out + (src_pos - pos) * strides_buf[axis];
    y[out] = x[in];
  }
}

template <typename T>
T sum_naive(const T* p, i64 n) {
  T acc = 0;
  for (i64 i = 0; i < n; ++i) acc += p[i];
  return acc;
}

}  // namespace sg::reference
