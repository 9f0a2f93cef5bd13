#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sg/data.hpp"
#include "sg/metrics.hpp"
#include "sg/model.hpp"
#include "sg/tensor.hpp"

namespace sg {

// Mean over all elements of (pred - target)^2. Differentiable.
Tensor mse(const Tensor& pred, const Tensor& target);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Positional first/second-moment buffers for a fixed parameter list. The
// step count t drives the bias correction and moves by exactly 1 per call.
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static AdamState init(std::span<const Tensor> params, AdamConfig cfg = {});

  // m buffers then v buffers, the layout stored in checkpoints.
  std::vector<Tensor> flatten() const;
};

// In-place update: t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
// theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads,
               AdamState& state);

struct TrainConfig {
  std::int64_t epochs = 48;
  std::int64_t max_iterations = 0;  // > 0 caps the total iteration count
  std::int64_t batch_size = 16;
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::int64_t metric_interval = 100;     // iterations between metric rows
  std::int64_t eval_sample_count = 4096;  // must not exceed the eval set size
  std::int64_t checkpoint_interval = 0;   // 0 = final checkpoint only
  Embedder embedder;                       // feature map for the frechet column

  void validate() const;  // throws ConfigError
};

struct TrainResult {
  double first_mse = 0.0;          // batch loss at iteration 1
  double final_running_mse = 0.0;  // mean batch loss over the last 50 iterations
  std::int64_t iterations = 0;
  std::int64_t epochs_completed = 0;
  std::string csv;              // full log, also written to csv_path when given
  std::string last_checkpoint;  // most recent successfully written checkpoint
};

// Eval-mode reconstructions of images[lo, lo+count), forwarded in batch_size
// chunks. images is (N, 3, h, w) f32; the result is (count, 3, h, w) in the
// model's dtype.
Tensor reconstruct_images(SimpleGrowthModel& model, const Tensor& images,
                          std::int64_t lo, std::int64_t count,
                          std::int64_t batch_size);

// Reconstruction quality over the first `count` images of a set. All fields
// are NaN when the set cannot support them (empty set; frechet additionally
// needs count >= 2).
struct EvalMetrics {
  double mse = std::numeric_limits<double>::quiet_NaN();
  double ssim = std::numeric_limits<double>::quiet_NaN();
  double ms_ssim = std::numeric_limits<double>::quiet_NaN();
  double frechet = std::numeric_limits<double>::quiet_NaN();
};

EvalMetrics evaluate_reconstructions(SimpleGrowthModel& model,
                                     const Cifar10Dataset& eval_set,
                                     std::int64_t count, std::int64_t batch_size,
                                     const Embedder& embedder);

// The training loop: per iteration draw a shuffled batch, forward in train
// mode with a noise seed derived from (seed, epoch, iteration), backprop the
// MSE, apply one Adam step. Every metric_interval iterations the first
// eval_sample_count images of eval_set are reconstructed in eval mode and a
// CSV row `iteration,epoch,mse,ssim,ms_ssim,frechet` is appended (metric
// columns hold the literal NaN when the eval set cannot support them). Fully
// deterministic for a fixed cfg.seed.
TrainResult train_loop(SimpleGrowthModel& model, const Cifar10Dataset& train_set,
                       const Cifar10Dataset& eval_set, const TrainConfig& cfg,
                       const std::string& csv_path = "",
                       const std::string& checkpoint_prefix = "");

}  // namespace sg
