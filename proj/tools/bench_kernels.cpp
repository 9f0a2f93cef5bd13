#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sg/layers.hpp"
#include "sg/reference.hpp"
#include "sg/tensor.hpp"

// Times the OpenMP kernels against the serial reference loops on
// training-sized shapes and reports the largest elementwise disagreement.

using namespace sg;
using i64 = std::int64_t;

namespace {

int g_reps = 5;

template <typename F>
double time_ms(F&& f) {
  f();  // warmup
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < g_reps; ++r) f();
  const std::chrono::duration<double, std::milli> dt =
      std::chrono::steady_clock::now() - t0;
  return dt.count() / g_reps;
}

double max_abs_diff(const Tensor& got, const std::vector<float>& want) {
  double worst = 0.0;
  for (i64 i = 0; i < got.numel(); ++i)
    worst = std::max(worst, std::abs(got.at_flat(i) -
                                     static_cast<double>(
                                         want[static_cast<std::size_t>(i)])));
  return worst;
}

void row(const std::string& op, const std::string& shape, double opt_ms,
         double ref_ms, double diff) {
  std::printf("%-16s %-34s %9.3f ms %9.3f ms %7.1fx   %.3g\n", op.c_str(),
              shape.c_str(), opt_ms, ref_ms, ref_ms / opt_ms, diff);
}

void bench_conv2d(i64 B, i64 Cin, i64 Cout, i64 H, i64 W, i64 k, i64 s, i64 pad) {
  Tensor x = Tensor::uniform({B, Cin, H, W}, -1, 1, 1);
  Conv2dParams p;
  p.weight = Tensor::uniform({Cout, Cin, k, k}, -1, 1, 2);
  p.bias = Tensor::uniform({Cout}, -1, 1, 3);
  p.stride = s;
  p.padding = pad;

  Tensor y;
  const double opt = time_ms([&] { y = conv2d(x, p); });

  std::vector<float> want(static_cast<std::size_t>(y.numel()));
  const double ref = time_ms([&] {
    reference::conv2d_naive<float>(x.data<float>().data(),
                                   p.weight.data<float>().data(),
                                   p.bias.data<float>().data(), want.data(), B,
                                   Cin, H, W, Cout, k, k, s, pad, y.extent(2),
                                   y.extent(3));
  });

  char shape[96];
  std::snprintf(shape, sizeof shape, "%lldx%lldx%lldx%lld k%lld s%lld -> %lld",
                static_cast<long long>(B), static_cast<long long>(Cin),
                static_cast<long long>(H), static_cast<long long>(W),
                static_cast<long long>(k), static_cast<long long>(s),
                static_cast<long long>(Cout));
  row("conv2d", shape, opt, ref, max_abs_diff(y, want));
}

void bench_convt2d(i64 B, i64 C1, i64 C2, i64 H, i64 k, i64 s, i64 pad) {
  Tensor x = Tensor::uniform({B, C1, H, H}, -1, 1, 4);
  ConvT2dParams p;
  p.weight = Tensor::uniform({C1, C2, k, k}, -1, 1, 5);
  p.bias = Tensor::uniform({C2}, -1, 1, 6);
  p.stride = s;
  p.padding = pad;

  Tensor y;
  const double opt = time_ms([&] { y = conv_transpose2d(x, p); });

  std::vector<float> want(static_cast<std::size_t>(y.numel()));
  const double ref = time_ms([&] {
    reference::convt2d_naive<float>(x.data<float>().data(),
                                    p.weight.data<float>().data(),
                                    p.bias.data<float>().data(), want.data(), B,
                                    C1, H, H, C2, k, k, s, pad, y.extent(2),
                                    y.extent(3));
  });

  char shape[96];
  std::snprintf(shape, sizeof shape, "%lldx%lldx%lldx%lld k%lld s%lld -> %lld",
                static_cast<long long>(B), static_cast<long long>(C1),
                static_cast<long long>(H), static_cast<long long>(H),
                static_cast<long long>(k), static_cast<long long>(s),
                static_cast<long long>(C2));
  row("conv_transpose2d", shape, opt, ref, max_abs_diff(y, want));
}

void bench_linear(i64 B, i64 IN, i64 OUT) {
  Tensor x = Tensor::uniform({B, IN}, -1, 1, 7);
  LinearParams p;
  p.weight = Tensor::uniform({OUT, IN}, -1, 1, 8);
  p.bias = Tensor::uniform({OUT}, -1, 1, 9);

  Tensor y;
  const double opt = time_ms([&] { y = linear(x, p); });

  std::vector<float> want(static_cast<std::size_t>(B * OUT));
  const double ref = time_ms([&] {
    reference::linear_naive<float>(x.data<float>().data(),
                                   p.weight.data<float>().data(),
                                   p.bias.data<float>().data(), want.data(), B,
                                   IN, OUT);
  });

  char shape[96];
  std::snprintf(shape, sizeof shape, "%lldx%lld . %lldx%lld",
                static_cast<long long>(B), static_cast<long long>(IN),
                static_cast<long long>(OUT), static_cast<long long>(IN));
  row("linear", shape, opt, ref, max_abs_diff(y, want));
}

void bench_roll(i64 B, i64 C, i64 H, i64 W) {
  Tensor x = Tensor::uniform({B, C, H, W}, -1, 1, 10);

  Tensor y;
  const double opt = time_ms([&] { y = roll(x, 5, 3); });

  std::vector<float> want(static_cast<std::size_t>(x.numel()));
  const i64 shape_arr[4] = {B, C, H, W};
  const double ref = time_ms([&] {
    reference::roll_naive<float>(x.data<float>().data(), want.data(), shape_arr,
                                 4, 5, 3);
  });

  char shape[96];
  std::snprintf(shape, sizeof shape, "%lldx%lldx%lldx%lld shift 5 axis 3",
                static_cast<long long>(B), static_cast<long long>(C),
                static_cast<long long>(H), static_cast<long long>(W));
  row("roll", shape, opt, ref, max_abs_diff(y, want));
}

void bench_sum(i64 n) {
  Tensor x = Tensor::uniform({n}, -1, 1, 11);

  Tensor y;
  const double opt = time_ms([&] { y = sum(x); });

  float want = 0;
  const double ref =
      time_ms([&] { want = reference::sum_naive<float>(x.data<float>().data(), n); });

  char shape[96];
  std::snprintf(shape, sizeof shape, "%lld elements", static_cast<long long>(n));
  // the two paths reduce in different orders; report the relative gap
  const double diff =
      std::abs(y.item() - static_cast<double>(want)) / std::abs(y.item());
  row("sum", shape, opt, ref, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel timing: OpenMP path vs serial reference"};
  app.add_option("--reps", g_reps, "timed repetitions per case")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::printf("%-16s %-34s %12s %12s %9s   %s\n", "op", "shape", "optimized",
              "reference", "speedup", "max|diff|");

  bench_conv2d(16, 8, 16, 32, 32, 3, 1, 1);
  bench_conv2d(16, 8, 16, 32, 32, 3, 2, 1);
  bench_conv2d(16, 16, 32, 16, 16, 3, 2, 1);
  bench_convt2d(16, 16, 8, 16, 4, 2, 1);
  bench_convt2d(16, 32, 16, 8, 4, 2, 1);
  bench_linear(64, 4096, 256);
  bench_roll(16, 16, 64, 64);
  bench_sum(1 << 24);
  return 0;
}
