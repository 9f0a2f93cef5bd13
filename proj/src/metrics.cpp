#include "sg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Dense>

#include "sg/data.hpp"
#include "sg/error.hpp"
#include "sg/kernels.hpp"
#include "sg/random.hpp"

namespace sg {

using i64 = std::int64_t;

namespace {

i64 effective_window(const SsimConfig& cfg, i64 h, i64 w) {
  i64 side = std::min(cfg.window, std::min(h, w));
  if (side % 2 == 0) --side;
  if (side < 3) {
    throw ArgumentError("ssim: image " + std::to_string(h) + "x" +
                        std::to_string(w) + " is smaller than the minimum 3x3 window");
  }
  return side;
}

std::vector<double> gaussian_window(i64 side, double sigma) {
  std::vector<double> w1(static_cast<std::size_t>(side));
  const double c = static_cast<double>(side - 1) / 2.0;
  for (i64 i = 0; i < side; ++i) {
    const double d = static_cast<double>(i) - c;
    w1[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  std::vector<double> w2(static_cast<std::size_t>(side * side));
  double total = 0.0;
  for (i64 i = 0; i < side; ++i) {
    for (i64 j = 0; j < side; ++j) {
      const double v = w1[static_cast<std::size_t>(i)] * w1[static_cast<std::size_t>(j)];
      w2[static_cast<std::size_t>(i * side + j)] = v;
      total += v;
    }
  }
  for (double& v : w2) v /= total;
  return w2;
}

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || a.extent(0) != 3) {
    throw ShapeError("ssim: expected (3,h,w) images, got " + shape_str(a.shape()));
  }
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Mean SSIM and mean contrast-structure term over all valid positions, on
// channel-major double buffers.
struct SsimTerms {
  double ssim = 0.0;
  double cs = 0.0;
};

SsimTerms ssim_terms(const std::vector<double>& a, const std::vector<double>& b,
                     i64 h, i64 w, const SsimConfig& cfg) {
  const i64 side = effective_window(cfg, h, w);
  const std::vector<double> win = gaussian_window(side, cfg.sigma);
  const double L = cfg.dynamic_range;
  const double C1 = (0.01 * L) * (0.01 * L);
  const double C2 = (0.03 * L) * (0.03 * L);

  const i64 oh = h - side + 1;
  const i64 ow = w - side + 1;
  const i64 n = 3 * oh * ow;
  std::vector<double> ssim_map(static_cast<std::size_t>(n));
  std::vector<double> cs_map(static_cast<std::size_t>(n));

#pragma omp parallel for collapse(2)
  for (i64 c = 0; c < 3; ++c) {
    for (i64 y = 0; y < oh; ++y) {
      const double* pa = a.data() + (c * h) * w;
      const double* pb = b.data() + (c * h) * w;
      for (i64 x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (i64 i = 0; i < side; ++i) {
          const double* ra = pa + (y + i) * w + x;
          const double* rb = pb + (y + i) * w + x;
          const double* rw = win.data() + i * side;
          for (i64 j = 0; j < side; ++j) {
            const double va = ra[j], vb = rb[j], wt = rw[j];
            ma += wt * va;
            mb += wt * vb;
            aa += wt * va * va;
            bb += wt * vb * vb;
            ab += wt * va * vb;
          }
        }
        const double va = aa - ma * ma;
        const double vb = bb - mb * mb;
        const double vab = ab - ma * mb;
        const double cs = (2.0 * vab + C2) / (va + vb + C2);
        const double lum = (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1);
        const i64 at = (c * oh + y) * ow + x;
        ssim_map[static_cast<std::size_t>(at)] = lum * cs;
        cs_map[static_cast<std::size_t>(at)] = cs;
      }
    }
  }

  SsimTerms t;
  t.ssim = kernels::reduce_sum(ssim_map.data(), n) / static_cast<double>(n);
  t.cs = kernels::reduce_sum(cs_map.data(), n) / static_cast<double>(n);
  return t;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  check_pair(a, b);
  return ssim_terms(a.to_vector(), b.to_vector(), a.extent(1), a.extent(2), cfg)
      .ssim;
}

double ms_ssim(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  check_pair(a, b);
  const i64 h = a.extent(1);
  const i64 w = a.extent(2);
  const i64 side = effective_window(cfg, h, w);

  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  i64 scales = std::min<i64>(cfg.scales, 5);
  if (scales < 1) throw ArgumentError("ms_ssim: scale count must be >= 1");
  while (scales > 1 && (std::min(h, w) >> (scales - 1)) < side) --scales;
  if (scales == 1) return ssim(a, b, cfg);

  double wsum = 0.0;
  for (i64 s = 0; s < scales; ++s) wsum += kWeights[s];

  std::vector<double> va = a.to_vector();
  std::vector<double> vb = b.to_vector();
  i64 ch = h, cw = w;
  double result = 1.0;
  for (i64 s = 0; s < scales; ++s) {
    const SsimTerms t = ssim_terms(va, vb, ch, cw, cfg);
    const double base = std::max(s + 1 == scales ? t.ssim : t.cs, 0.0);
    result *= std::pow(base, kWeights[s] / wsum);
    if (s + 1 == scales) break;
    const i64 nh = ch / 2, nw = cw / 2;
    std::vector<double> na(static_cast<std::size_t>(3 * nh * nw));
    std::vector<double> nb(na.size());
    kernels::avg_pool_2x2(va.data(), na.data(), 1, 3, ch, cw);
    kernels::avg_pool_2x2(vb.data(), nb.data(), 1, 3, ch, cw);
    va = std::move(na);
    vb = std::move(nb);
    ch = nh;
    cw = nw;
  }
  return result;
}

GaussianStats gaussian_stats(const Tensor& features) {
  if (features.rank() != 2) {
    throw ShapeError("gaussian_stats: expected (N,d) features, got " +
                     shape_str(features.shape()));
  }
  const i64 n = features.extent(0);
  const i64 d = features.extent(1);
  if (n < 2) throw ArgumentError("gaussian_stats: need at least 2 rows");

  const std::vector<double> x = features.to_vector();
  GaussianStats s;
  s.count = n;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  s.cov.assign(static_cast<std::size_t>(d * d), 0.0);

  // column means via the deterministic reducer over strided copies
  std::vector<double> col(static_cast<std::size_t>(n));
  for (i64 j = 0; j < d; ++j) {
    for (i64 i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = x[i * d + j];
    s.mean[static_cast<std::size_t>(j)] =
        kernels::reduce_sum(col.data(), n) / static_cast<double>(n);
  }

  std::vector<double> prod(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic) firstprivate(prod)
  for (i64 j = 0; j < d; ++j) {
    for (i64 k = j; k < d; ++k) {
      for (i64 i = 0; i < n; ++i) {
        prod[static_cast<std::size_t>(i)] =
            (x[i * d + j] - s.mean[static_cast<std::size_t>(j)]) *
            (x[i * d + k] - s.mean[static_cast<std::size_t>(k)]);
      }
      const double v = kernels::reduce_sum(prod.data(), n) / static_cast<double>(n - 1);
      s.cov[static_cast<std::size_t>(j * d + k)] = v;
      s.cov[static_cast<std::size_t>(k * d + j)] = v;
    }
  }
  return s;
}

namespace {

// V diag(f(lambda)) V^T with eigenvalues below the relative floor zeroed.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) {
    throw NumericError("frechet_distance: eigendecomposition failed");
  }
  Eigen::VectorXd lam = es.eigenvalues();
  const double floor = 1e-7 * std::max(0.0, lam.maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    lam[i] = lam[i] > floor ? std::sqrt(lam[i]) : 0.0;
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& s1, const GaussianStats& s2) {
  const i64 d = s1.dim();
  if (d != s2.dim() || d == 0) {
    throw ShapeError("frechet_distance: dimension mismatch (" + std::to_string(d) +
                     " vs " + std::to_string(s2.dim()) + ")");
  }

  Eigen::Map<const Eigen::MatrixXd> a(s1.cov.data(), d, d);
  Eigen::Map<const Eigen::MatrixXd> b(s2.cov.data(), d, d);

  double mu = 0.0;
  for (i64 i = 0; i < d; ++i) {
    const double diff = s1.mean[static_cast<std::size_t>(i)] -
                        s2.mean[static_cast<std::size_t>(i)];
    mu += diff * diff;
  }

  const Eigen::MatrixXd ra = psd_sqrt(a);
  Eigen::MatrixXd inner = ra * b * ra;
  inner = 0.5 * (inner + inner.transpose().eval());
  const Eigen::MatrixXd rm = psd_sqrt(inner);

  const double dist = mu + a.trace() + b.trace() - 2.0 * rm.trace();
  if (dist < -1e-6) {
    throw NumericError("frechet_distance: negative distance " +
                       std::to_string(dist));
  }
  return std::max(dist, 0.0);
}

Embedder Embedder::parse(const std::string& text) {
  Embedder e;
  if (text == "raw_pool") {
    e.kind = Kind::RawPool;
    return e;
  }
  if (text.rfind("rand_proj", 0) == 0) {
    e.kind = Kind::RandProj;
    if (text.size() > 9) {
      if (text[9] != ':') throw ConfigError("embedder: bad spec \"" + text + "\"");
      try {
        e.seed = std::stoull(text.substr(10));
      } catch (const std::exception&) {
        throw ConfigError("embedder: bad rand_proj seed in \"" + text + "\"");
      }
    }
    return e;
  }
  if (text.rfind("external:", 0) == 0) {
    e.kind = Kind::External;
    e.path = text.substr(9);
    if (e.path.empty()) throw ConfigError("embedder: external needs a file path");
    return e;
  }
  throw ConfigError("embedder: unknown spec \"" + text +
                    "\" (want raw_pool, rand_proj:SEED or external:PATH)");
}

std::string Embedder::describe() const {
  switch (kind) {
    case Kind::RawPool:
      return "raw_pool";
    case Kind::RandProj:
      return "rand_proj:" + std::to_string(seed);
    case Kind::External:
      return "external:" + path;
  }
  return "?";
}

namespace {

Tensor embed_raw_pool(const Tensor& images) {
  const i64 n = images.extent(0);
  const i64 h = images.extent(2);
  const i64 w = images.extent(3);
  if (h < 8 || w < 8) {
    throw ArgumentError("embed: raw_pool needs extents >= 8, got " +
                        shape_str(images.shape()));
  }
  Tensor out = Tensor::zeros({n, 3 * 8 * 8}, DType::F64);
  double* dst = out.impl()->ptr<double>();
  const std::vector<double> src = images.to_vector();

#pragma omp parallel for
  for (i64 img = 0; img < n; ++img) {
    for (i64 c = 0; c < 3; ++c) {
      const double* plane = src.data() + ((img * 3 + c) * h) * w;
      for (i64 by = 0; by < 8; ++by) {
        const i64 y0 = by * h / 8, y1 = (by + 1) * h / 8;
        for (i64 bx = 0; bx < 8; ++bx) {
          const i64 x0 = bx * w / 8, x1 = (bx + 1) * w / 8;
          double acc = 0.0;
          for (i64 y = y0; y < y1; ++y) {
            for (i64 x = x0; x < x1; ++x) acc += plane[y * w + x];
          }
          dst[(img * 192) + (c * 8 + by) * 8 + bx] =
              acc / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return out;
}

Tensor embed_rand_proj(const Tensor& images, std::uint64_t seed) {
  const i64 n = images.extent(0);
  const i64 flat = images.numel() / n;
  const i64 d = 256;

  // fixed projection, entries uniform with variance 1/flat
  const double bound = std::sqrt(3.0 / static_cast<double>(flat));
  std::vector<double> proj(static_cast<std::size_t>(d * flat));
  const std::uint64_t key = seed_combine(seed, 0x70726f6a);  // "proj"
#pragma omp parallel for
  for (i64 i = 0; i < d * flat; ++i) {
    proj[static_cast<std::size_t>(i)] =
        (2.0 * counter_rand_unit(key, static_cast<std::uint64_t>(i)) - 1.0) * bound;
  }

  Tensor out = Tensor::zeros({n, d}, DType::F64);
  double* dst = out.impl()->ptr<double>();
  const std::vector<double> src = images.to_vector();
#pragma omp parallel for
  for (i64 img = 0; img < n; ++img) {
    const double* x = src.data() + img * flat;
    for (i64 k = 0; k < d; ++k) {
      const double* row = proj.data() + k * flat;
      double acc = 0.0;
      for (i64 j = 0; j < flat; ++j) acc += row[j] * x[j];
      dst[img * d + k] = std::tanh(acc);
    }
  }
  return out;
}

}  // namespace

Tensor embed(const Tensor& images, const Embedder& e) {
  if (images.rank() != 4 || images.extent(1) != 3) {
    throw ShapeError("embed: expected (N,3,h,w) images, got " +
                     shape_str(images.shape()));
  }
  switch (e.kind) {
    case Embedder::Kind::RawPool:
      return embed_raw_pool(images);
    case Embedder::Kind::RandProj:
      return embed_rand_proj(images, e.seed);
    case Embedder::Kind::External: {
      Tensor f = read_tensor_file(e.path);
      if (f.rank() != 2 || f.extent(0) != images.extent(0)) {
        throw FormatError("embed: external features \"" + e.path + "\" have shape " +
                          shape_str(f.shape()) + ", want (" +
                          std::to_string(images.extent(0)) + ",d)");
      }
      return f;
    }
  }
  throw ArgumentError("embed: unknown embedder kind");
}

}  // namespace sg
