#include "sg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>

#include "sg/error.hpp"
#include "sg/kernels.hpp"
#include "sg/random.hpp"

namespace sg {

using i64 = std::int64_t;

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape() || pred.dtype() != target.dtype()) {
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  Tensor d = sub(pred, target);
  return mean(mul(d, d));
}

AdamState AdamState::init(std::span<const Tensor> params, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor& p : params) {
    s.m.push_back(Tensor::zeros(p.shape(), p.dtype()));
    s.v.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
  return s;
}

std::vector<Tensor> AdamState::flatten() const {
  std::vector<Tensor> out;
  out.reserve(m.size() + v.size());
  for (const Tensor& t : m) out.push_back(t);
  for (const Tensor& t : v) out.push_back(t);
  return out;
}

namespace {

template <typename T>
void adam_step_typed(Tensor& p, const Tensor& g, Tensor& m, Tensor& v,
                     const AdamConfig& cfg, i64 t) {
  T* pp = p.impl()->ptr<T>();
  const T* gp = g.data<T>().data();
  T* mp = m.impl()->ptr<T>();
  T* vp = v.impl()->ptr<T>();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const i64 n = p.numel();
#pragma omp parallel for
  for (i64 i = 0; i < n; ++i) {
    const double gi = static_cast<double>(gp[i]);
    const double mi = cfg.beta1 * static_cast<double>(mp[i]) + (1.0 - cfg.beta1) * gi;
    const double vi =
        cfg.beta2 * static_cast<double>(vp[i]) + (1.0 - cfg.beta2) * gi * gi;
    mp[i] = static_cast<T>(mi);
    vp[i] = static_cast<T>(vi);
    const double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
    pp[i] = static_cast<T>(static_cast<double>(pp[i]) - update);
  }
}

}  // namespace

void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads,
               AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ArgumentError("adam_step: " + std::to_string(params.size()) +
                        " parameters vs " + std::to_string(grads.size()) +
                        " gradients vs " + std::to_string(state.m.size()) +
                        " state slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() ||
        params[i].dtype() != grads[i].dtype()) {
      throw ArgumentError("adam_step: parameter " + std::to_string(i) +
                          " and its gradient disagree on shape or dtype");
    }
    if (params[i].shape() != state.m[i].shape() ||
        params[i].dtype() != state.m[i].dtype()) {
      throw ArgumentError("adam_step: state slot " + std::to_string(i) +
                          " was initialized for a different parameter list");
    }
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (p.dtype() == DType::F32) {
      adam_step_typed<float>(p, grads[i], state.m[i], state.v[i], state.cfg,
                             state.t);
    } else {
      adam_step_typed<double>(p, grads[i], state.m[i], state.v[i], state.cfg,
                              state.t);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (max_iterations < 0) throw ConfigError("train: max_iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (lr <= 0) throw ConfigError("train: lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ConfigError("train: betas must lie in [0,1)");
  }
  if (metric_interval < 1) throw ConfigError("train: metric_interval must be >= 1");
  if (eval_sample_count < 1) {
    throw ConfigError("train: eval_sample_count must be >= 1");
  }
  if (checkpoint_interval < 0) {
    throw ConfigError("train: checkpoint_interval must be >= 0");
  }
}

namespace {

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

Tensor image_at(const Tensor& batch, i64 i) {
  const i64 per = batch.numel() / batch.extent(0);
  const Shape s{batch.extent(1), batch.extent(2), batch.extent(3)};
  if (batch.dtype() == DType::F32) {
    return Tensor::from_data(s, batch.data<float>().subspan(
                                    static_cast<std::size_t>(i * per),
                                    static_cast<std::size_t>(per)));
  }
  return Tensor::from_data(s, batch.data<double>().subspan(
                                  static_cast<std::size_t>(i * per),
                                  static_cast<std::size_t>(per)));
}

}  // namespace

Tensor reconstruct_images(SimpleGrowthModel& model, const Tensor& images,
                          i64 lo, i64 count, i64 batch_size) {
  if (images.rank() != 4) {
    throw ShapeError("reconstruct_images: expected (N,3,h,w), got " +
                     shape_str(images.shape()));
  }
  if (lo < 0 || count < 1 || lo + count > images.extent(0)) {
    throw ArgumentError("reconstruct_images: range [" + std::to_string(lo) +
                        ", " + std::to_string(lo + count) + ") outside the " +
                        std::to_string(images.extent(0)) + " images");
  }
  if (batch_size < 1) throw ArgumentError("reconstruct_images: batch_size < 1");
  const i64 h = images.extent(2), w = images.extent(3);
  const i64 hw = 3 * h * w;
  const DType dt = model.config().dtype;
  Tensor recon = Tensor::zeros({count, 3, h, w}, dt);
  for (i64 off = 0; off < count; off += batch_size) {
    const i64 b = std::min(batch_size, count - off);
    Tensor chunk = Tensor::zeros({b, 3, h, w});
    std::memcpy(chunk.impl()->ptr<float>(),
                images.data<float>().data() + (lo + off) * hw,
                static_cast<std::size_t>(b * hw) * sizeof(float));
    Tensor in = chunk.dtype() == dt ? chunk : chunk.to(dt);
    Tensor rec = model.forward(in);
    std::memcpy(recon.impl()->data.data() +
                    static_cast<std::size_t>(off * hw) * dtype_size(dt),
                rec.impl()->data.data(), rec.impl()->data.size());
  }
  return recon;
}

EvalMetrics evaluate_reconstructions(SimpleGrowthModel& model,
                                     const Cifar10Dataset& eval_set,
                                     i64 count, i64 batch_size,
                                     const Embedder& embedder) {
  EvalMetrics out;
  const i64 n = std::min<i64>(count, eval_set.size());
  if (n < 1) return out;

  const i64 hw = 3 * 32 * 32;
  Tensor recon = reconstruct_images(model, eval_set.images, 0, n, batch_size);

  std::vector<double> per_image_mse(static_cast<std::size_t>(n));
  std::vector<double> per_image_ssim(static_cast<std::size_t>(n));
  std::vector<double> per_image_msssim(static_cast<std::size_t>(n));

  for (i64 i = 0; i < n; ++i) {
    Tensor orig = image_at(eval_set.images, i);
    Tensor rec = image_at(recon, i);
    const std::vector<double> vo = orig.to_vector();
    const std::vector<double> vr = rec.to_vector();
    std::vector<double> sq(vo.size());
    for (std::size_t k = 0; k < vo.size(); ++k) {
      const double d = vr[k] - vo[k];
      sq[k] = d * d;
    }
    per_image_mse[static_cast<std::size_t>(i)] =
        kernels::reduce_sum(sq.data(), static_cast<i64>(sq.size())) /
        static_cast<double>(sq.size());
    Tensor rec_f32 = rec.dtype() == DType::F32 ? rec : rec.to(DType::F32);
    Tensor orig_f32 = orig;
    per_image_ssim[static_cast<std::size_t>(i)] = ssim(orig_f32, rec_f32);
    per_image_msssim[static_cast<std::size_t>(i)] = ms_ssim(orig_f32, rec_f32);
  }
  out.mse = kernels::reduce_sum(per_image_mse.data(), n) / static_cast<double>(n);
  out.ssim = kernels::reduce_sum(per_image_ssim.data(), n) / static_cast<double>(n);
  out.ms_ssim =
      kernels::reduce_sum(per_image_msssim.data(), n) / static_cast<double>(n);

  if (n >= 2) {
    Tensor originals = Tensor::zeros({n, 3, 32, 32});
    std::memcpy(originals.impl()->ptr<float>(), eval_set.images.data<float>().data(),
                static_cast<std::size_t>(n * hw) * sizeof(float));
    Tensor recon_f32 = recon.dtype() == DType::F32 ? recon : recon.to(DType::F32);
    GaussianStats s1 = gaussian_stats(embed(originals, embedder));
    GaussianStats s2 = gaussian_stats(embed(recon_f32, embedder));
    out.frechet = frechet_distance(s1, s2);
  }
  return out;
}

TrainResult train_loop(SimpleGrowthModel& model, const Cifar10Dataset& train_set,
                       const Cifar10Dataset& eval_set, const TrainConfig& cfg,
                       const std::string& csv_path,
                       const std::string& checkpoint_prefix) {
  cfg.validate();
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");
  if (eval_set.size() > 0 && cfg.eval_sample_count > eval_set.size()) {
    throw ConfigError("train: eval_sample_count " +
                      std::to_string(cfg.eval_sample_count) + " exceeds the " +
                      std::to_string(eval_set.size()) + " eval images");
  }

  auto named = model.named_parameters();
  std::vector<Tensor> params;
  params.reserve(named.size());
  for (auto& [name, t] : named) params.push_back(t);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.beta1 = cfg.beta1;
  acfg.beta2 = cfg.beta2;
  AdamState state = AdamState::init(params, acfg);

  BatchIterator batches(train_set, cfg.batch_size, cfg.seed);
  const i64 per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  i64 total = cfg.epochs * per_epoch;
  if (cfg.max_iterations > 0) total = std::min(total, cfg.max_iterations);

  TrainResult result;
  result.csv = "iteration,epoch,mse,ssim,ms_ssim,frechet\n";
  std::deque<double> window;
  const DType dt = model.config().dtype;

  const auto save = [&](i64 step, const std::string& path) {
    try {
      model.save_checkpoint(path, step, state.flatten());
      result.last_checkpoint = path;
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + "; last good checkpoint: " +
                    (result.last_checkpoint.empty() ? "(none)"
                                                    : result.last_checkpoint));
    }
  };

  for (i64 iter = 1; iter <= total; ++iter) {
    Tensor batch = batches.next();
    const i64 epoch = batches.epoch();
    Tensor in = batch.dtype() == dt ? batch : batch.to(dt);
    const std::uint64_t noise_seed =
        seed_combine(cfg.seed, static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(iter));

    double batch_mse = 0.0;
    {
      GradGraph graph;
      Tensor loss = mse(model.forward(in, true, noise_seed), in);
      batch_mse = loss.item();
      graph.backward(loss);
    }

    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) grads.push_back(p.grad());
    adam_step(params, grads, state);

    if (iter == 1) result.first_mse = batch_mse;
    window.push_back(batch_mse);
    if (window.size() > 50) window.pop_front();

    if (iter % cfg.metric_interval == 0) {
      EvalMetrics em = evaluate_reconstructions(
          model, eval_set, cfg.eval_sample_count, cfg.batch_size, cfg.embedder);
      result.csv += std::to_string(iter) + "," + std::to_string(epoch) + "," +
                    fmt_metric(em.mse) + "," + fmt_metric(em.ssim) + "," +
                    fmt_metric(em.ms_ssim) + "," + fmt_metric(em.frechet) + "\n";
    }
    if (!checkpoint_prefix.empty() && cfg.checkpoint_interval > 0 &&
        iter % cfg.checkpoint_interval == 0) {
      save(iter, checkpoint_prefix + ".iter" + std::to_string(iter) + ".ckpt");
    }
    result.iterations = iter;
    result.epochs_completed = epoch;
  }

  double acc = 0.0;
  for (double v : window) acc += v;
  result.final_running_mse = window.empty() ? 0.0 : acc / static_cast<double>(window.size());

  if (!checkpoint_prefix.empty()) {
    save(result.iterations, checkpoint_prefix + ".final.ckpt");
  }
  if (!csv_path.empty()) {
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw IoError("cannot open \"" + csv_path + "\" for writing");
    f << result.csv;
    if (!f) throw IoError("short write to \"" + csv_path + "\"");
  }
  return result;
}

}  // namespace sg
