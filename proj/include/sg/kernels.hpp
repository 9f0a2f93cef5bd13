#pragma once

// OpenMP-parallel compute kernels. Parallelism is always over disjoint output
// regions and every reduction runs in a fixed order, so results are
// bit-identical for any thread count. The serial counterparts used as test
// oracles and benchmark baselines live in sg/reference.hpp.

#include <cstdint>
#include <vector>

namespace sg::kernels {

using i64 = std::int64_t;

inline i64 conv_out_extent(i64 in, i64 k, i64 stride, i64 pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline i64 convt_out_extent(i64 in, i64 k, i64 stride, i64 pad) {
  return (in - 1) * stride - 2 * pad + k;
}

// Cross-correlation with zero padding. y has shape (B, Cout, OH, OW).
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, i64 B, i64 Cin,
                    i64 H, i64 W, i64 Cout, i64 KH, i64 KW, i64 stride, i64 pad,
                    i64 OH, i64 OW) {
#pragma omp parallel for collapse(2)
  for (i64 b = 0; b < B; ++b) {
    for (i64 oc = 0; oc < Cout; ++oc) {
      T* out = y + ((b * Cout + oc) * OH) * OW;
      const T bv = bias ? bias[oc] : T(0);
      for (i64 i = 0; i < OH * OW; ++i) out[i] = bv;
      for (i64 ic = 0; ic < Cin; ++ic) {
        const T* in = x + ((b * Cin + ic) * H) * W;
        const T* wk = w + ((oc * Cin + ic) * KH) * KW;
        for (i64 kh = 0; kh < KH; ++kh) {
          for (i64 kw = 0; kw < KW; ++kw) {
            const T wv = wk[kh * KW + kw];
            for (i64 oh = 0; oh < OH; ++oh) {
              const i64 ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              const T* in_row = in + ih * W;
              T* out_row = out + oh * OW;
              // valid ow range: 0 <= ow*stride + kw - pad < W
              i64 ow_lo = 0;
              while (ow_lo < OW && ow_lo * stride + kw - pad < 0) ++ow_lo;
              i64 ow_hi = OW;
              while (ow_hi > ow_lo && (ow_hi - 1) * stride + kw - pad >= W) --ow_hi;
              const T* src = in_row + ow_lo * stride + kw - pad;
              for (i64 ow = ow_lo; ow < ow_hi; ++ow) {
                out_row[ow] += wv * src[(ow - ow_lo) * stride];
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of conv2d_forward with the same weight/stride/padding: maps a
// (B, C1, H1, W1) tensor through weight (C1, C2, KH, KW) to (B, C2, OH, OW).
// Doubles as the transposed-convolution forward (bias optional) and as the
// conv2d input-gradient kernel (src = output gradient, OH/OW = input extents).
template <typename T>
void conv2d_adjoint(const T* src, const T* w, const T* bias, T* y, i64 B, i64 C1,
                    i64 H1, i64 W1, i64 C2, i64 KH, i64 KW, i64 stride, i64 pad,
                    i64 OH, i64 OW) {
#pragma omp parallel for collapse(2)
  for (i64 b = 0; b < B; ++b) {
    for (i64 c2 = 0; c2 < C2; ++c2) {
      T* out = y + ((b * C2 + c2) * OH) * OW;
      const T bv = bias ? bias[c2] : T(0);
      for (i64 i = 0; i < OH * OW; ++i) out[i] = bv;
      for (i64 c1 = 0; c1 < C1; ++c1) {
        const T* in = src + ((b * C1 + c1) * H1) * W1;
        const T* wk = w + ((c1 * C2 + c2) * KH) * KW;
        for (i64 kh = 0; kh < KH; ++kh) {
          for (i64 kw = 0; kw < KW; ++kw) {
            const T wv = wk[kh * KW + kw];
            // contribution: out[oh][ow] += wv * in[ih][iw] where
            // oh = ih*stride + kh - pad, ow = iw*stride + kw - pad
            for (i64 ih = 0; ih < H1; ++ih) {
              const i64 oh = ih * stride + kh - pad;
              if (oh < 0 || oh >= OH) continue;
              const T* in_row = in + ih * W1;
              T* out_row = out + oh * OW;
              i64 iw_lo = 0;
              while (iw_lo < W1 && iw_lo * stride + kw - pad < 0) ++iw_lo;
              i64 iw_hi = W1;
              while (iw_hi > iw_lo && (iw_hi - 1) * stride + kw - pad >= OW) --iw_hi;
              T* dst = out_row + iw_lo * stride + kw - pad;
              for (i64 iw = iw_lo; iw < iw_hi; ++iw) {
                dst[(iw - iw_lo) * stride] += wv * in_row[iw];
              }
            }
          }
        }
      }
    }
  }
}

// Weight gradient of conv2d: gw[oc][ic][kh][kw] += sum over (b, oh, ow) of
// x[b][ic][oh*s+kh-p][ow*s+kw-p] * gy[b][oc][oh][ow]. Accumulates into gw.
template <typename T>
void conv2d_weight_grad(const T* x, const T* gy, T* gw, i64 B, i64 Cin, i64 H,
                        i64 W, i64 Cout, i64 KH, i64 KW, i64 stride, i64 pad,
                        i64 OH, i64 OW) {
#pragma omp parallel for collapse(2)
  for (i64 oc = 0; oc < Cout; ++oc) {
    for (i64 ic = 0; ic < Cin; ++ic) {
      T* wk = gw + ((oc * Cin + ic) * KH) * KW;
      for (i64 kh = 0; kh < KH; ++kh) {
        for (i64 kw = 0; kw < KW; ++kw) {
          T acc = 0;
          for (i64 b = 0; b < B; ++b) {
            const T* in = x + ((b * Cin + ic) * H) * W;
            const T* g = gy + ((b * Cout + oc) * OH) * OW;
            for (i64 oh = 0; oh < OH; ++oh) {
              const i64 ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              const T* in_row = in + ih * W;
              const T* g_row = g + oh * OW;
              for (i64 ow = 0; ow < OW; ++ow) {
                const i64 iw = ow * stride + kw - pad;
                if (iw < 0 || iw >= W) continue;
                acc += in_row[iw] * g_row[ow];
              }
            }
          }
          wk[kh * KW + kw] += acc;
        }
      }
    }
  }
}

// Weight gradient of the transposed convolution, weight layout (C1, C2, KH, KW):
// gw[c1][c2][kh][kw] += sum over (b, ih, iw) of x[b][c1][ih][iw] *
// gy[b][c2][ih*s+kh-p][iw*s+kw-p]. Accumulates into gw.
template <typename T>
void convt2d_weight_grad(const T* x, const T* gy, T* gw, i64 B, i64 C1, i64 H1,
                         i64 W1, i64 C2, i64 KH, i64 KW, i64 stride, i64 pad,
                         i64 OH, i64 OW) {
#pragma omp parallel for collapse(2)
  for (i64 c1 = 0; c1 < C1; ++c1) {
    for (i64 c2 = 0; c2 < C2; ++c2) {
      T* wk = gw + ((c1 * C2 + c2) * KH) * KW;
      for (i64 kh = 0; kh < KH; ++kh) {
        for (i64 kw = 0; kw < KW; ++kw) {
          T acc = 0;
          for (i64 b = 0; b < B; ++b) {
            const T* in = x + ((b * C1 + c1) * H1) * W1;
            const T* g = gy + ((b * C2 + c2) * OH) * OW;
            for (i64 ih = 0; ih < H1; ++ih) {
              const i64 oh = ih * stride + kh - pad;
              if (oh < 0 || oh >= OH) continue;
              const T* in_row = in + ih * W1;
              const T* g_row = g + oh * OW;
              for (i64 iw = 0; iw < W1; ++iw) {
                const i64 ow = iw * stride + kw - pad;
                if (ow < 0 || ow >= OW) continue;
                acc += in_row[iw] * g_row[ow];
              }
            }
          }
          wk[kh * KW + kw] += acc;
        }
      }
    }
  }
}

// Per-channel bias gradient: gb[c] += sum over (b, h, w) of g[b][c][h][w].
template <typename T>
void channel_bias_grad(const T* g, T* gb, i64 B, i64 C, i64 H, i64 W) {
#pragma omp parallel for
  for (i64 c = 0; c < C; ++c) {
    T acc = 0;
    for (i64 b = 0; b < B; ++b) {
      const T* p = g + ((b * C + c) * H) * W;
      for (i64 i = 0; i < H * W; ++i) acc += p[i];
    }
    gb[c] += acc;
  }
}

// y = x W^T + b for x (B, IN), w (OUT, IN), b (OUT).
template <typename T>
void linear_forward(const T* x, const T* w, const T* bias, T* y, i64 B, i64 IN,
                    i64 OUT) {
#pragma omp parallel for collapse(2)
  for (i64 b = 0; b < B; ++b) {
    for (i64 o = 0; o < OUT; ++o) {
      const T* xr = x + b * IN;
      const T* wr = w + o * IN;
      T acc = bias ? bias[o] : T(0);
      for (i64 i = 0; i < IN; ++i) acc += xr[i] * wr[i];
      y[b * OUT + o] = acc;
    }
  }
}

// gx += gy W ; gw += gy^T x ; gb += column sums of gy.
template <typename T>
void linear_input_grad(const T* gy, const T* w, T* gx, i64 B, i64 IN, i64 OUT) {
#pragma omp parallel for collapse(2)
  for (i64 b = 0; b < B; ++b) {
    for (i64 i = 0; i < IN; ++i) {
      const T* gr = gy + b * OUT;
      T acc = 0;
      for (i64 o = 0; o < OUT; ++o) acc += gr[o] * w[o * IN + i];
      gx[b * IN + i] += acc;
    }
  }
}

template <typename T>
void linear_weight_grad(const T* x, const T* gy, T* gw, T* gb, i64 B, i64 IN,
                        i64 OUT) {
#pragma omp parallel for
  for (i64 o = 0; o < OUT; ++o) {
    T* wr = gw + o * IN;
    for (i64 b = 0; b < B; ++b) {
      const T g = gy[b * OUT + o];
      const T* xr = x + b * IN;
      for (i64 i = 0; i < IN; ++i) wr[i] += g * xr[i];
    }
    if (gb) {
      T acc = 0;
      for (i64 b = 0; b < B; ++b) acc += gy[b * OUT + o];
      gb[o] += acc;
    }
  }
}

// Deterministic full reduction: fixed-shape pairwise tree over 256-element
// chunks. Independent of thread count (chunks are combined serially).
template <typename T>
T reduce_sum(const T* p, i64 n) {
  constexpr i64 kChunk = 256;
  if (n <= kChunk) {
    if (n <= 8) {
      T acc = 0;
      for (i64 i = 0; i < n; ++i) acc += p[i];
      return acc;
    }
    const i64 half = n / 2;
    return reduce_sum(p, half) + reduce_sum(p + half, n - half);
  }
  const i64 nchunks = (n + kChunk - 1) / kChunk;
  std::vector<T> partial(static_cast<std::size_t>(nchunks));
#pragma omp parallel for
  for (i64 c = 0; c < nchunks; ++c) {
    const i64 lo = c * kChunk;
    const i64 hi = lo + kChunk < n ? lo + kChunk : n;
    partial[static_cast<std::size_t>(c)] = reduce_sum(p + lo, hi - lo);
  }
  return reduce_sum(partial.data(), nchunks);
}

// 2x2 average pooling with stride 2; trailing odd row/column dropped.
template <typename T>
void avg_pool_2x2(const T* x, T* y, i64 B, i64 C, i64 H, i64 W) {
  const i64 OH = H / 2, OW = W / 2;
#pragma omp parallel for collapse(2)
  for (i64 b = 0; b < B; ++b) {
    for (i64 c = 0; c < C; ++c) {
      const T* in = x + ((b * C + c) * H) * W;
      T* out = y + ((b * C + c) * OH) * OW;
      for (i64 oh = 0; oh < OH; ++oh) {
        for (i64 ow = 0; ow < OW; ++ow) {
          const T* p = in + (2 * oh) * W + 2 * ow;
          out[oh * OW + ow] = (p[0] + p[1] + p[W] + p[W + 1]) * T(0.25);
        }
      }
    }
  }
}

}  // namespace sg::kernels
