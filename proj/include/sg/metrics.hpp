#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sg/tensor.hpp"

namespace sg {

// Structural-similarity settings. The window is Gaussian; when an image is
// smaller than the requested side, the largest odd side that still fits is
// used instead (never below 3).
struct SsimConfig {
  std::int64_t window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;  // L; pixel data here lives in [0,1]
  std::int64_t scales = 5;     // upper bound for ms_ssim
};

// Mean SSIM index between two (3,h,w) images over all fully covered window
// positions and channels. C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

// Multi-scale SSIM with the standard per-scale weights (.0448, .2856, .3001,
// .2363, .1333) and 2x2 average-pool downsampling. The scale count shrinks
// (weights renormalized) until the smallest scale still fits the window; a
// single scale degenerates to plain ssim.
double ms_ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

// Mean and unbiased covariance (divisor N-1, symmetrized) of N feature rows.
struct GaussianStats {
  std::vector<double> mean;  // (d)
  std::vector<double> cov;   // (d*d) row-major
  std::int64_t count = 0;

  std::int64_t dim() const { return static_cast<std::int64_t>(mean.size()); }
};

GaussianStats gaussian_stats(const Tensor& features);  // (N,d), N >= 2

// Fréchet distance between two Gaussians:
// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
// Matrix roots use symmetric eigendecomposition; eigenvalues below 1e-7 of
// the largest are treated as 0. A result below -1e-6 raises NumericError,
// small negatives above that are clamped to 0.
double frechet_distance(const GaussianStats& s1, const GaussianStats& s2);

// Feature map plugged into the Fréchet metric.
//   raw_pool:  adaptive 8x8 average pool, d = 192
//   rand_proj: fixed seeded random projection through tanh, d = 256
//   external:  rows read from a raw tensor file (must match the image count)
struct Embedder {
  enum class Kind { RawPool, RandProj, External };
  Kind kind = Kind::RawPool;
  std::uint64_t seed = 0;  // rand_proj only
  std::string path;        // external only

  // "raw_pool" | "rand_proj:SEED" | "external:PATH"
  static Embedder parse(const std::string& text);
  std::string describe() const;
};

Tensor embed(const Tensor& images, const Embedder& e);  // (N,3,h,w) -> (N,d) f64

}  // namespace sg
