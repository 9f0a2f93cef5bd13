#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <vector>

#include "sg/kernels.hpp"
#include "sg/layers.hpp"
#include "sg/reference.hpp"
#include "sg/tensor.hpp"

using namespace sg;
using i64 = std::int64_t;

namespace {

Conv2dParams conv_with(Tensor w, Tensor b, i64 stride, i64 pad) {
  Conv2dParams p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

ConvT2dParams convt_with(Tensor w, Tensor b, i64 stride, i64 pad) {
  ConvT2dParams p;
  p.weight = std::move(w);
  p.bias = std::move(b);
  p.stride = stride;
  p.padding = pad;
  return p;
}

double inner_product_overlap(const Tensor& a, const Tensor& b) {
  // sum over the index range both tensors cover (leading corner alignment)
  double acc = 0;
  for (i64 n = 0; n < std::min(a.extent(0), b.extent(0)); ++n)
    for (i64 c = 0; c < std::min(a.extent(1), b.extent(1)); ++c)
      for (i64 h = 0; h < std::min(a.extent(2), b.extent(2)); ++h)
        for (i64 w = 0; w < std::min(a.extent(3), b.extent(3)); ++w)
          acc += a.at({n, c, h, w}) * b.at({n, c, h, w});
  return acc;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor x = Tensor::uniform({2, 1, 4, 4}, -1, 1, 5);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, conv_with(w, b, 1, 0));
  CHECK(y.same_bits(x));
}

TEST_CASE("conv2d 2x2 all-ones sums the input") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, conv_with(w, b, 1, 0));
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 10.0);
}

TEST_CASE("conv2d shape errors") {
  Tensor x = Tensor::uniform({1, 2, 4, 4}, -1, 1, 6);
  Conv2dParams p = make_conv2d(3, 1, 3, 1, 0, 7);
  CHECK_THROWS_AS(conv2d(x, p), ShapeError);
  Conv2dParams big = make_conv2d(2, 1, 5, 1, 0, 8);
  CHECK_THROWS_AS(conv2d(x, big), ShapeError);  // no valid output position
}

TEST_CASE("conv2d matches the naive oracle across the shape matrix") {
  int cases = 0;
  for (i64 B : {1, 2})
    for (i64 Cin : {1, 3})
      for (i64 Cout : {1, 2})
        for (i64 H : {3, 6})
          for (i64 W : {4, 6})
            for (i64 k : {1, 2, 3})
              for (i64 s : {1, 2})
                for (i64 pad : {0, 1}) {
                  const i64 OH = kernels::conv_out_extent(H, k, s, pad);
                  const i64 OW = kernels::conv_out_extent(W, k, s, pad);
                  if (OH < 1 || OW < 1) continue;
                  const std::uint64_t seed = 1000 + cases;
                  Tensor x = Tensor::uniform({B, Cin, H, W}, -1, 1, seed);
                  Tensor w = Tensor::uniform({Cout, Cin, k, k}, -1, 1, seed + 1);
                  Tensor b = Tensor::uniform({Cout}, -1, 1, seed + 2);
                  Tensor y = conv2d(x, conv_with(w, b, s, pad));
                  std::vector<float> expect(
                      static_cast<std::size_t>(B * Cout * OH * OW));
                  reference::conv2d_naive<float>(
                      x.data<float>().data(), w.data<float>().data(),
                      b.data<float>().data(), expect.data(), B, Cin, H, W, Cout, k, k,
                      s, pad, OH, OW);
                  double max_diff = 0;
                  for (i64 i = 0; i < y.numel(); ++i) {
                    max_diff = std::max(
                        max_diff,
                        std::abs(y.at_flat(i) -
                                 static_cast<double>(
                                     expect[static_cast<std::size_t>(i)])));
                  }
                  CHECK(max_diff < 1e-5);
                  ++cases;
                }
  CHECK(cases > 300);
}

TEST_CASE("conv_transpose2d identity kernel") {
  Tensor x = Tensor::uniform({1, 1, 2, 2}, -1, 1, 9);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv_transpose2d(x, convt_with(w, b, 1, 0));
  CHECK(y.same_bits(x));
}

TEST_CASE("conv_transpose2d scatters a single element across the kernel") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv_transpose2d(x, convt_with(w, b, 1, 0));
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (i64 i = 0; i < 9; ++i) CHECK(y.at_flat(i) == 1.0);
}

TEST_CASE("conv_transpose2d matches the scatter oracle") {
  int cases = 0;
  for (i64 B : {1, 2})
    for (i64 C1 : {1, 3})
      for (i64 C2 : {1, 2})
        for (i64 H : {2, 4})
          for (i64 k : {2, 3, 4})
            for (i64 s : {1, 2})
              for (i64 pad : {0, 1}) {
                const i64 OH = kernels::convt_out_extent(H, k, s, pad);
                if (OH < 1) continue;
                const std::uint64_t seed = 4000 + cases;
                Tensor x = Tensor::uniform({B, C1, H, H}, -1, 1, seed);
                Tensor w = Tensor::uniform({C1, C2, k, k}, -1, 1, seed + 1);
                Tensor b = Tensor::uniform({C2}, -1, 1, seed + 2);
                Tensor y = conv_transpose2d(x, convt_with(w, b, s, pad));
                CHECK(y.shape() == Shape{B, C2, OH, OH});
                std::vector<float> expect(static_cast<std::size_t>(B * C2 * OH * OH));
                reference::convt2d_naive<float>(
                    x.data<float>().data(), w.data<float>().data(),
                    b.data<float>().data(), expect.data(), B, C1, H, H, C2, k, k, s,
                    pad, OH, OH);
                double max_diff = 0;
                for (i64 i = 0; i < y.numel(); ++i) {
                  max_diff = std::max(
                      max_diff, std::abs(y.at_flat(i) -
                                         static_cast<double>(
                                             expect[static_cast<std::size_t>(i)])));
                }
                CHECK(max_diff < 1e-5);
                ++cases;
              }
  CHECK(cases > 100);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  struct Geometry {
    i64 B, Cin, Cout, H, W, k, s, pad;
  };
  // geometries where (in + 2*pad - k) divides evenly by the stride, so the
  // transposed output extent reproduces the convolution input extent
  const Geometry geoms[5] = {
      {2, 3, 2, 6, 6, 3, 1, 1}, {1, 2, 4, 6, 8, 4, 2, 1}, {2, 1, 1, 7, 7, 3, 2, 0},
      {1, 3, 3, 8, 8, 2, 2, 0}, {2, 2, 5, 7, 5, 3, 2, 1}};
  for (int trial = 0; trial < 5; ++trial) {
    const Geometry g = geoms[trial];
    const std::uint64_t seed = 7000 + 10 * trial;
    Tensor x = Tensor::uniform({g.B, g.Cin, g.H, g.W}, -1, 1, seed);
    Tensor w = Tensor::uniform({g.Cout, g.Cin, g.k, g.k}, -1, 1, seed + 1);
    Tensor zero_out = Tensor::zeros({g.Cout});
    Tensor zero_in = Tensor::zeros({g.Cin});
    Tensor cx = conv2d(x, conv_with(w, zero_out, g.s, g.pad));
    Tensor y = Tensor::uniform(cx.shape(), -1, 1, seed + 2);
    // same weight array read with (in_ch, out_ch) roles swapped
    Tensor ty = conv_transpose2d(y, convt_with(w, zero_in, g.s, g.pad));
    CHECK(ty.shape() == x.shape());
    const double lhs = inner_product_overlap(cx, y);
    const double rhs = inner_product_overlap(x, ty);
    const double rel = std::abs(lhs - rhs) / std::max(1e-12, std::abs(lhs));
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("linear identity and hand example") {
  Tensor x = Tensor::from_data({1, 2}, std::vector<float>{1, 2});
  LinearParams ident;
  ident.weight = Tensor::from_data({2, 2}, std::vector<float>{1, 0, 0, 1});
  ident.bias = Tensor::zeros({2});
  CHECK(linear(x, ident).same_bits(x));

  LinearParams p;
  p.weight = Tensor::from_data({2, 2}, std::vector<float>{1, 1, 0, 1});
  p.bias = Tensor::from_data({2}, std::vector<float>{0, 1});
  Tensor y = linear(x, p);
  CHECK(y.at({0, 0}) == 3.0);
  CHECK(y.at({0, 1}) == 3.0);

  CHECK_THROWS_AS(linear(Tensor::zeros({1, 3}), p), ShapeError);
}

TEST_CASE("linear matches the naive oracle") {
  for (int trial = 0; trial < 3; ++trial) {
    const std::uint64_t seed = 8000 + 10 * trial;
    const i64 B = 3, IN = 17, OUT = 9;
    Tensor x = Tensor::uniform({B, IN}, -1, 1, seed);
    LinearParams p;
    p.weight = Tensor::uniform({OUT, IN}, -1, 1, seed + 1);
    p.bias = Tensor::uniform({OUT}, -1, 1, seed + 2);
    Tensor y = linear(x, p);
    std::vector<float> expect(static_cast<std::size_t>(B * OUT));
    reference::linear_naive<float>(x.data<float>().data(), p.weight.data<float>().data(),
                                   p.bias.data<float>().data(), expect.data(), B, IN,
                                   OUT);
    for (i64 i = 0; i < y.numel(); ++i) {
      CHECK(std::abs(y.at_flat(i) -
                     static_cast<double>(expect[static_cast<std::size_t>(i)])) < 1e-5);
    }
  }
}

TEST_CASE("batchnorm2d normalizes per channel in train mode") {
  Tensor x = Tensor::uniform({4, 3, 5, 5}, -2, 3, 11);
  BatchNorm2dParams p = make_batchnorm2d(3);
  Tensor y = batchnorm2d(x, p, true);
  const i64 n = 4 * 5 * 5;
  for (i64 c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (i64 b = 0; b < 4; ++b)
      for (i64 h = 0; h < 5; ++h)
        for (i64 w = 0; w < 5; ++w) {
          const double v = y.at({b, c, h, w});
          s += v;
          s2 += v * v;
        }
    const double m = s / n;
    const double var = s2 / n - m * m;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm2d constant channel collapses to beta") {
  Tensor x = Tensor::full({2, 1, 3, 3}, 7.5);
  BatchNorm2dParams p = make_batchnorm2d(1);
  p.beta = Tensor::full({1}, 0.25);
  Tensor y = batchnorm2d(x, p, true);
  for (i64 i = 0; i < y.numel(); ++i) {
    CHECK(y.at_flat(i) == doctest::Approx(0.25).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm2d rejects single-element normalization sets") {
  Tensor x = Tensor::full({1, 2, 1, 1}, 1.0);
  BatchNorm2dParams p = make_batchnorm2d(2);
  CHECK_THROWS_AS(batchnorm2d(x, p, true), ArgumentError);
  CHECK_NOTHROW(batchnorm2d(x, p, false));
}

TEST_CASE("batchnorm2d eval is a pure function of running stats") {
  BatchNorm2dParams p = make_batchnorm2d(2);
  Tensor warm = Tensor::uniform({4, 2, 4, 4}, -1, 2, 12);
  (void)batchnorm2d(warm, p, true);
  Tensor rm = p.running_mean.clone();
  Tensor rv = p.running_var.clone();
  Tensor x = Tensor::uniform({2, 2, 4, 4}, -1, 1, 13);
  Tensor y1 = batchnorm2d(x, p, false);
  Tensor y2 = batchnorm2d(x, p, false);
  CHECK(y1.same_bits(y2));
  CHECK(p.running_mean.same_bits(rm));  // eval never touches the stats
  CHECK(p.running_var.same_bits(rv));
}

TEST_CASE("batchnorm2d running stats follow the momentum update") {
  BatchNorm2dParams p = make_batchnorm2d(1);
  Tensor x = Tensor::from_data({1, 1, 2, 2}, std::vector<float>{0, 2, 4, 6});
  (void)batchnorm2d(x, p, true);
  // batch mean 3, biased var 5, unbiased var 20/3
  CHECK(p.running_mean.item() == doctest::Approx(0.9 * 0.0 + 0.1 * 3.0));
  CHECK(p.running_var.item() == doctest::Approx(0.9 * 1.0 + 0.1 * 20.0 / 3.0));
}

TEST_CASE("init: bounds, zero bias, determinism") {
  // weights are uniform over +-sqrt(3/fan_in), biases start at zero
  Conv2dParams c = make_conv2d(4, 8, 3, 1, 1, 77);
  const double conv_bound = std::sqrt(3.0 / 36.0);
  for (i64 i = 0; i < c.weight.numel(); ++i) {
    CHECK(std::abs(c.weight.at_flat(i)) < conv_bound);
  }
  for (i64 i = 0; i < c.bias.numel(); ++i) CHECK(c.bias.at_flat(i) == 0.0);

  Conv2dParams c2 = make_conv2d(4, 8, 3, 1, 1, 77);
  CHECK(c.weight.same_bits(c2.weight));
  Conv2dParams c3 = make_conv2d(4, 8, 3, 1, 1, 78);
  CHECK(!c.weight.same_bits(c3.weight));

  LinearParams l = make_linear(16, 4, 5);
  const double lin_bound = std::sqrt(3.0 / 16.0);
  for (i64 i = 0; i < l.weight.numel(); ++i) {
    CHECK(std::abs(l.weight.at_flat(i)) < lin_bound);
  }

  BatchNorm2dParams bn = make_batchnorm2d(3);
  for (i64 i = 0; i < 3; ++i) {
    CHECK(bn.gamma.at_flat(i) == 1.0);
    CHECK(bn.beta.at_flat(i) == 0.0);
    CHECK(bn.running_mean.at_flat(i) == 0.0);
    CHECK(bn.running_var.at_flat(i) == 1.0);
  }
}

TEST_CASE("layer gradchecks in f64") {
  const DType dt = DType::F64;

  SUBCASE("conv2d wrt input, weight, bias") {
    Conv2dParams p = make_conv2d(2, 3, 3, 2, 1, 21, dt);
    Tensor x0 = Tensor::uniform({2, 2, 5, 5}, -1, 1, 22, dt);
    CHECK(gradcheck([&](const Tensor& t) { return sum(mul(conv2d(t, p), conv2d(t, p))); },
                    x0) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                Conv2dParams q = p;
                q.weight = t;
                Tensor y = conv2d(x0, q);
                return sum(mul(y, y));
              },
              p.weight.clone()) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                Conv2dParams q = p;
                q.bias = t;
                Tensor y = conv2d(x0, q);
                return sum(mul(y, y));
              },
              p.bias.clone()) < 1e-5);
  }

  SUBCASE("conv_transpose2d wrt input, weight, bias") {
    ConvT2dParams p = make_conv_transpose2d(3, 2, 4, 2, 1, 31, dt);
    Tensor x0 = Tensor::uniform({2, 3, 3, 3}, -1, 1, 32, dt);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                Tensor y = conv_transpose2d(t, p);
                return sum(mul(y, y));
              },
              x0) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                ConvT2dParams q = p;
                q.weight = t;
                Tensor y = conv_transpose2d(x0, q);
                return sum(mul(y, y));
              },
              p.weight.clone()) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                ConvT2dParams q = p;
                q.bias = t;
                Tensor y = conv_transpose2d(x0, q);
                return sum(mul(y, y));
              },
              p.bias.clone()) < 1e-5);
  }

  SUBCASE("batchnorm2d wrt input, gamma, beta") {
    Tensor x0 = Tensor::uniform({2, 2, 3, 3}, -1, 2, 41, dt);
    // weight the output with a fixed random tensor: unweighted means of the
    // normalized output are constant by construction, which would make the
    // finite-difference probe compare rounding noise against rounding noise
    Tensor r = Tensor::uniform(x0.shape(), -1, 1, 99, dt);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
                Tensor y = batchnorm2d(t, p, true);
                return mean(mul(add(mul(y, y), y), r));
              },
              x0) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
                p.gamma = t;
                Tensor y = batchnorm2d(x0, p, true);
                return mean(mul(y, y));
              },
              Tensor::uniform({2}, 0.5, 1.5, 42, dt)) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
                p.beta = t;
                Tensor y = batchnorm2d(x0, p, true);
                return mean(mul(y, y));
              },
              Tensor::uniform({2}, -0.5, 0.5, 43, dt)) < 1e-5);
    // eval mode: gradient flows through the affine transform
    CHECK(gradcheck(
              [&](const Tensor& t) {
                BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
                Tensor y = batchnorm2d(t, p, false);
                return mean(mul(y, y));
              },
              x0) < 1e-5);
  }

  SUBCASE("linear wrt input, weight, bias") {
    LinearParams p = make_linear(6, 4, 51, dt);
    Tensor x0 = Tensor::uniform({3, 6}, -1, 1, 52, dt);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                Tensor y = linear(t, p);
                return sum(mul(y, y));
              },
              x0) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                LinearParams q = p;
                q.weight = t;
                Tensor y = linear(x0, q);
                return sum(mul(y, y));
              },
              p.weight.clone()) < 1e-5);
    CHECK(gradcheck(
              [&](const Tensor& t) {
                LinearParams q = p;
                q.bias = t;
                Tensor y = linear(x0, q);
                return sum(mul(y, y));
              },
              p.bias.clone()) < 1e-5);
  }
}
