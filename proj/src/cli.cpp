#include "sg/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

#include "sg/config.hpp"
#include "sg/data.hpp"
#include "sg/error.hpp"
#include "sg/growth.hpp"
#include "sg/layers.hpp"
#include "sg/metrics.hpp"
#include "sg/model.hpp"
#include "sg/train.hpp"

namespace sg::cli {

namespace {

using i64 = std::int64_t;

std::string fmt9(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Nearest-square layout: 16 tiles -> 4 columns, 8 -> 3, 2 -> 2.
i64 grid_cols(i64 n) {
  i64 c = static_cast<i64>(std::ceil(std::sqrt(static_cast<double>(n))));
  return c < 1 ? 1 : c;
}

SimpleGrowthModel load_model_or_throw(const std::string& path) {
  return SimpleGrowthModel::load_checkpoint(path);
}

Cifar10Dataset load_data_or_throw(const std::vector<std::string>& paths) {
  return load_cifar10_bin(paths);
}

// (count, 3, h, w) f32 copy of images[lo, lo+count).
Tensor slice_images(const Tensor& images, i64 lo, i64 count) {
  const i64 h = images.extent(2), w = images.extent(3);
  const i64 hw = 3 * h * w;
  Tensor out = Tensor::zeros({count, 3, h, w});
  std::memcpy(out.impl()->ptr<float>(), images.data<float>().data() + lo * hw,
              static_cast<std::size_t>(count * hw) * sizeof(float));
  return out;
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::ostream& log) {
  RunConfig cfg;
  try {
    cfg = RunConfig::load(config_path);
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kConfigFailure;
  }

  // the echo is itself a valid config file reproducing this run exactly
  const std::string echo = cfg.serialize();
  log << "# effective configuration\n" << echo << "\n";

  Cifar10Dataset train_set, eval_set;
  try {
    if (cfg.train_data.empty()) {
      throw ArgumentError("train: no train_data paths configured");
    }
    train_set = load_data_or_throw(cfg.train_data);
    if (!cfg.eval_data.empty()) eval_set = load_data_or_throw(cfg.eval_data);
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  log << "train_images=" << train_set.size() << "\n";
  log << "eval_images=" << eval_set.size() << "\n";

  try {
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream f(out_dir + "/effective.cfg", std::ios::trunc);
      if (!f) throw IoError("cannot open \"" + out_dir + "/effective.cfg\"");
      f << echo;
    }
    SimpleGrowthModel model(cfg.model, cfg.train.seed);
    TrainResult r = train_loop(model, train_set, eval_set, cfg.train,
                               out_dir + "/train_log.csv", out_dir + "/model");
    log << "iterations=" << r.iterations << "\n";
    log << "epochs_completed=" << r.epochs_completed << "\n";
    log << "first_mse=" << fmt9(r.first_mse) << "\n";
    log << "final_running_mse=" << fmt9(r.final_running_mse) << "\n";
    log << "csv=" << out_dir << "/train_log.csv\n";
    log << "checkpoint=" << r.last_checkpoint << "\n";
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  return kOk;
}

int cmd_reconstruct(const std::string& checkpoint_path,
                    const std::vector<std::string>& data_paths, i64 count,
                    const std::string& out_ppm, std::ostream& log) {
  std::optional<SimpleGrowthModel> model;
  try {
    model.emplace(load_model_or_throw(checkpoint_path));
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kCheckpointFailure;
  }
  try {
    Cifar10Dataset ds = load_data_or_throw(data_paths);
    if (count < 1 || count > ds.size()) {
      throw ArgumentError("reconstruct: count " + std::to_string(count) +
                          " outside the " + std::to_string(ds.size()) +
                          " available images");
    }
    Tensor originals = slice_images(ds.images, 0, count);
    Tensor recon = reconstruct_images(*model, ds.images, 0, count, 16);
    Tensor recon_f32 = recon.dtype() == DType::F32 ? recon : recon.to(DType::F32);

    // original beside its reconstruction: 2 columns, count rows
    const i64 h = originals.extent(2), w = originals.extent(3);
    const i64 hw = 3 * h * w;
    Tensor tiles = Tensor::zeros({2 * count, 3, h, w});
    float* tp = tiles.impl()->ptr<float>();
    const float* op = originals.data<float>().data();
    const float* rp = recon_f32.data<float>().data();
    for (i64 i = 0; i < count; ++i) {
      std::memcpy(tp + (2 * i) * hw, op + i * hw,
                  static_cast<std::size_t>(hw) * sizeof(float));
      std::memcpy(tp + (2 * i + 1) * hw, rp + i * hw,
                  static_cast<std::size_t>(hw) * sizeof(float));
    }
    write_ppm_grid(tiles, 2, out_ppm);
    log << "wrote " << out_ppm << " (" << 2 * w << "x" << count * h << ")\n";
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  return kOk;
}

int cmd_interpolate(const std::string& checkpoint_path,
                    const std::vector<std::string>& data_paths, i64 index1,
                    i64 index2, i64 steps, const std::string& out_ppm,
                    std::ostream& log) {
  std::optional<SimpleGrowthModel> model;
  try {
    model.emplace(load_model_or_throw(checkpoint_path));
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kCheckpointFailure;
  }
  try {
    Cifar10Dataset ds = load_data_or_throw(data_paths);
    for (i64 idx : {index1, index2}) {
      if (idx < 0 || idx >= ds.size()) {
        throw ArgumentError("interpolate: index " + std::to_string(idx) +
                            " outside the " + std::to_string(ds.size()) +
                            " available images");
      }
    }
    Tensor z1 = model->encode(slice_images(ds.images, index1, 1).to(
        model->config().dtype));
    Tensor z2 = model->encode(slice_images(ds.images, index2, 1).to(
        model->config().dtype));
    std::vector<Tensor> zs = interpolate(z1, z2, steps);
    Tensor zbatch = concat(std::span<const Tensor>(zs.data(), zs.size()), 0);
    Tensor tiles = model->decode(zbatch);
    Tensor tiles_f32 =
        tiles.dtype() == DType::F32 ? tiles : tiles.to(DType::F32);
    write_ppm_grid(tiles_f32, grid_cols(steps), out_ppm);
    log << "wrote " << out_ppm << " (" << steps << " tiles, "
        << grid_cols(steps) << " columns)\n";
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  return kOk;
}

int cmd_sample(const std::string& checkpoint_path, i64 count,
               std::uint64_t seed, const std::string& out_ppm,
               std::ostream& log) {
  std::optional<SimpleGrowthModel> model;
  try {
    model.emplace(load_model_or_throw(checkpoint_path));
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kCheckpointFailure;
  }
  try {
    Tensor z = model->sample_uniform_latents(count, seed);
    Tensor tiles = model->decode(z);
    Tensor tiles_f32 =
        tiles.dtype() == DType::F32 ? tiles : tiles.to(DType::F32);
    write_ppm_grid(tiles_f32, grid_cols(count), out_ppm);
    log << "wrote " << out_ppm << " (" << count << " tiles, "
        << grid_cols(count) << " columns)\n";
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  return kOk;
}

int cmd_eval(const std::string& checkpoint_path,
             const std::vector<std::string>& data_paths, i64 count,
             const std::string& embedder_spec, std::ostream& log) {
  std::optional<SimpleGrowthModel> model;
  try {
    model.emplace(load_model_or_throw(checkpoint_path));
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kCheckpointFailure;
  }
  Embedder embedder;
  try {
    embedder = Embedder::parse(embedder_spec);
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kMetricFailure;
  }
  Cifar10Dataset ds;
  try {
    ds = load_data_or_throw(data_paths);
    if (count < 1 || count > ds.size()) {
      throw ArgumentError("eval: count " + std::to_string(count) +
                          " outside the " + std::to_string(ds.size()) +
                          " available images");
    }
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kDataFailure;
  }
  try {
    EvalMetrics m = evaluate_reconstructions(*model, ds, count, 16, embedder);
    log << "count=" << count << " mse=" << fmt9(m.mse) << " ssim="
        << fmt9(m.ssim) << " ms_ssim=" << fmt9(m.ms_ssim) << " frechet="
        << fmt9(m.frechet) << "\n";
  } catch (const Error& e) {
    log << "error: " << e.what() << "\n";
    return kMetricFailure;
  }
  return kOk;
}

// ---- gradcheck suite ----------------------------------------------------

namespace {

// Fixture op with a deliberately wrong derivative: forward doubles the
// input, backward claims the factor was 1.9. The suite must flag it.
Tensor scale2x_wrong_backward(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const auto xs = x.data<double>();
  double* op = out.impl()->ptr<double>();
  for (i64 i = 0; i < x.numel(); ++i) op[i] = 2.0 * xs[i];
  auto xi = x.impl();
  auto oi = out.impl();
  detail::finish_op("scale2x", std::span<const Tensor>(&x, 1), out, [xi, oi]() {
    if (!(xi->requires_grad || xi->tracked)) return;
    xi->ensure_grad();
    const double* go = oi->grad_ptr<double>();
    double* gx = xi->grad_ptr<double>();
    for (i64 i = 0; i < static_cast<i64>(oi->numel()); ++i) {
      gx[i] += 1.9 * go[i];
    }
  });
  return out;
}

struct CheckItem {
  std::string name;
  double threshold;
  std::function<double()> run;  // max relative error
};

std::vector<CheckItem> build_suite(bool corrupt_backward) {
  const DType dt = DType::F64;
  const double kLin = 1e-10;  // linear ops: central differences are exact
  const double kNl = 1e-5;
  std::vector<CheckItem> suite;

  // fixed random projections make every functional's gradient non-uniform
  const auto proj = [dt](const Shape& s, std::uint64_t seed) {
    return Tensor::uniform(s, -1, 1, seed, dt);
  };

  suite.push_back({"add", kLin, [=] {
    Tensor x = Tensor::uniform({2, 3, 4, 4}, -1, 1, 11, dt);
    Tensor c = proj(x.shape(), 12), w = proj(x.shape(), 13);
    return gradcheck([&](const Tensor& t) { return sum(mul(add(t, c), w)); },
                     x, 1e-3);
  }});
  suite.push_back({"sub", kLin, [=] {
    Tensor x = Tensor::uniform({2, 3, 4, 4}, -1, 1, 14, dt);
    Tensor c = proj(x.shape(), 15), w = proj(x.shape(), 16);
    return gradcheck([&](const Tensor& t) { return sum(mul(sub(c, t), w)); },
                     x, 1e-3);
  }});
  suite.push_back({"scale", kLin, [=] {
    Tensor x = Tensor::uniform({3, 5}, -1, 1, 17, dt);
    Tensor w = proj(x.shape(), 18);
    return gradcheck(
        [&](const Tensor& t) { return sum(mul(mul(t, 3.7), w)); }, x, 1e-3);
  }});
  suite.push_back({"mean", kLin, [=] {
    Tensor x = Tensor::uniform({4, 7}, -1, 1, 19, dt);
    return gradcheck([&](const Tensor& t) { return mean(t); }, x, 1e-3);
  }});
  suite.push_back({"reshape", kLin, [=] {
    Tensor x = Tensor::uniform({2, 3, 4}, -1, 1, 20, dt);
    Tensor w = proj({6, 4}, 21);
    return gradcheck(
        [&](const Tensor& t) { return sum(mul(t.reshape({6, 4}), w)); }, x,
        1e-3);
  }});
  suite.push_back({"roll", kLin, [=] {
    Tensor x = Tensor::uniform({2, 2, 4, 4}, -1, 1, 22, dt);
    Tensor w = proj(x.shape(), 23);
    return gradcheck(
        [&](const Tensor& t) {
          return sum(mul(roll(roll(t, 1, 2), -2, 3), w));
        },
        x, 1e-3);
  }});
  suite.push_back({"concat_slice", kLin, [=] {
    Tensor x = Tensor::uniform({2, 3, 4, 4}, -1, 1, 24, dt);
    Tensor c = Tensor::uniform({2, 2, 4, 4}, -1, 1, 25, dt);
    Tensor w = proj({2, 3, 4, 4}, 26);
    return gradcheck(
        [&](const Tensor& t) {
          return sum(mul(slice_channels(concat({t, c}, 1), 2, 5), w));
        },
        x, 1e-3);
  }});
  suite.push_back({"assign_channels", kLin, [=] {
    Tensor x = Tensor::uniform({2, 4, 3, 3}, -1, 1, 27, dt);
    Tensor v = Tensor::uniform({2, 2, 3, 3}, -1, 1, 28, dt);
    Tensor w = proj(x.shape(), 29);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(assign_channels(t, 1, 3, v), w)); },
        x, 1e-3);
    const double ev = gradcheck(
        [&](const Tensor& t) { return sum(mul(assign_channels(x, 1, 3, t), w)); },
        v, 1e-3);
    return std::max(ex, ev);
  }});
  suite.push_back({"linear", kLin, [=] {
    LinearParams p = make_linear(6, 4, 30, dt);
    Tensor x = Tensor::uniform({3, 6}, -1, 1, 31, dt);
    Tensor w = proj({3, 4}, 32);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(linear(t, p), w)); }, x, 1e-3);
    const double ew = gradcheck(
        [&](const Tensor& t) {
          LinearParams q = p;
          q.weight = t;
          return sum(mul(linear(x, q), w));
        },
        p.weight.clone(), 1e-3);
    const double eb = gradcheck(
        [&](const Tensor& t) {
          LinearParams q = p;
          q.bias = t;
          return sum(mul(linear(x, q), w));
        },
        p.bias.clone(), 1e-3);
    return std::max({ex, ew, eb});
  }});
  suite.push_back({"conv2d", kLin, [=] {
    Conv2dParams p = make_conv2d(2, 3, 3, 2, 1, 33, dt);
    Tensor x = Tensor::uniform({2, 2, 5, 5}, -1, 1, 34, dt);
    Tensor w = proj({2, 3, 3, 3}, 35);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(conv2d(t, p), w)); }, x, 1e-3);
    const double ew = gradcheck(
        [&](const Tensor& t) {
          Conv2dParams q = p;
          q.weight = t;
          return sum(mul(conv2d(x, q), w));
        },
        p.weight.clone(), 1e-3);
    const double eb = gradcheck(
        [&](const Tensor& t) {
          Conv2dParams q = p;
          q.bias = t;
          return sum(mul(conv2d(x, q), w));
        },
        p.bias.clone(), 1e-3);
    return std::max({ex, ew, eb});
  }});
  suite.push_back({"conv_transpose2d", kLin, [=] {
    ConvT2dParams p = make_conv_transpose2d(3, 2, 4, 2, 1, 36, dt);
    Tensor x = Tensor::uniform({2, 3, 3, 3}, -1, 1, 37, dt);
    Tensor w = proj({2, 2, 6, 6}, 38);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(conv_transpose2d(t, p), w)); },
        x, 1e-3);
    const double ew = gradcheck(
        [&](const Tensor& t) {
          ConvT2dParams q = p;
          q.weight = t;
          return sum(mul(conv_transpose2d(x, q), w));
        },
        p.weight.clone(), 1e-3);
    const double eb = gradcheck(
        [&](const Tensor& t) {
          ConvT2dParams q = p;
          q.bias = t;
          return sum(mul(conv_transpose2d(x, q), w));
        },
        p.bias.clone(), 1e-3);
    return std::max({ex, ew, eb});
  }});
  suite.push_back({"compenv", kLin, [=] {
    const Topology topo = Topology::eight_neighborhood();
    Conv2dParams p = make_conv2d(3, 1, 3, 1, 1, 39, dt);
    Tensor x = Tensor::uniform({2, 3, 5, 5}, -1, 1, 40, dt);
    Tensor w = proj({2, 8, 5, 5}, 41);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(compenv(t, topo, p), w)); }, x,
        1e-3);
    const double ew = gradcheck(
        [&](const Tensor& t) {
          Conv2dParams q = p;
          q.weight = t;
          return sum(mul(compenv(x, topo, q), w));
        },
        p.weight.clone(), 1e-3);
    return std::max(ex, ew);
  }});

  suite.push_back({"sigmoid", kNl, [=] {
    Tensor x = Tensor::uniform({3, 4, 4}, -2, 2, 42, dt);
    Tensor w = proj(x.shape(), 43);
    return gradcheck([&](const Tensor& t) { return sum(mul(sigmoid(t), w)); },
                     x);
  }});
  suite.push_back({"tanh", kNl, [=] {
    Tensor x = Tensor::uniform({3, 4, 4}, -2, 2, 44, dt);
    Tensor w = proj(x.shape(), 45);
    return gradcheck([&](const Tensor& t) { return sum(mul(tanh(t), w)); }, x);
  }});
  suite.push_back({"mul", kNl, [=] {
    Tensor x = Tensor::uniform({3, 4, 4}, -1, 1, 46, dt);
    Tensor w = proj(x.shape(), 47);
    return gradcheck([&](const Tensor& t) { return sum(mul(mul(t, t), w)); },
                     x);
  }});
  suite.push_back({"batchnorm2d", kNl, [=] {
    Tensor x = Tensor::uniform({2, 2, 3, 3}, -1, 2, 48, dt);
    Tensor w = proj(x.shape(), 49);
    const double ex = gradcheck(
        [&](const Tensor& t) {
          BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
          return sum(mul(batchnorm2d(t, p, true), w));
        },
        x);
    const double eg = gradcheck(
        [&](const Tensor& t) {
          BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
          p.gamma = t;
          return sum(mul(batchnorm2d(x, p, true), w));
        },
        Tensor::uniform({2}, 0.5, 1.5, 50, dt));
    const double eb = gradcheck(
        [&](const Tensor& t) {
          BatchNorm2dParams p = make_batchnorm2d(2, 0.1, 1e-5, dt);
          p.beta = t;
          return sum(mul(batchnorm2d(x, p, true), w));
        },
        Tensor::uniform({2}, -0.5, 0.5, 51, dt));
    return std::max({ex, eg, eb});
  }});
  suite.push_back({"convf", kNl, [=] {
    ConvFParams p = make_convf(3, 4, 52, dt);
    Tensor x = Tensor::uniform({2, 3, 5, 5}, -1, 1, 53, dt);
    Tensor w = proj({2, 4, 5, 5}, 54);
    const double ex = gradcheck(
        [&](const Tensor& t) { return sum(mul(convf_forward(t, p), w)); }, x);
    const double ew = gradcheck(
        [&](const Tensor& t) {
          ConvFParams q = p;
          q.expand.weight = t;
          return sum(mul(convf_forward(x, q), w));
        },
        p.expand.weight.clone());
    return std::max(ex, ew);
  }});
  suite.push_back({"growth_merge", kNl, [=] {
    GrowthBlockParams p = make_growth_block(
        GrowthMode::Merge, 3, 4, 2, Topology::eight_neighborhood(), true, 55,
        dt);
    Tensor x = Tensor::uniform({2, 3, 6, 6}, -1, 1, 56, dt);
    Tensor w = proj({2, 4, 3, 3}, 57);
    return gradcheck(
        [&](const Tensor& t) {
          return sum(mul(pattern_block_forward(t, p, true), w));
        },
        x);
  }});
  suite.push_back({"growth_div", kNl, [=] {
    GrowthBlockParams p = make_growth_block(
        GrowthMode::Div, 4, 3, 2, Topology::eight_neighborhood(), true, 58,
        dt);
    Tensor x = Tensor::uniform({2, 4, 3, 3}, -1, 1, 59, dt);
    Tensor w = proj({2, 3, 6, 6}, 60);
    return gradcheck(
        [&](const Tensor& t) {
          return sum(mul(pattern_block_forward(t, p, true), w));
        },
        x);
  }});

  suite.push_back({"simplegrowth_mse", 1e-4, [=] {
    SimpleGrowthConfig cfg;
    cfg.input_size = 8;
    cfg.channels = {3, 4, 6};
    cfg.latent_dim = 5;
    cfg.dtype = dt;
    SimpleGrowthModel model(cfg, 61);
    Tensor x = Tensor::uniform({2, 3, 8, 8}, 0.05, 0.95, 62, dt);
    return gradcheck(
        [&](const Tensor& t) { return mse(model.forward(t, true, 63), t); },
        x);
  }});

  if (corrupt_backward) {
    suite.push_back({"scale2x", kLin, [=] {
      Tensor x = Tensor::uniform({3, 4}, -1, 1, 64, dt);
      Tensor w = proj(x.shape(), 65);
      return gradcheck(
          [&](const Tensor& t) {
            return sum(mul(scale2x_wrong_backward(t), w));
          },
          x, 1e-3);
    }});
  }
  return suite;
}

}  // namespace

int cmd_gradcheck(std::ostream& log, bool corrupt_backward) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  for (CheckItem& item : build_suite(corrupt_backward)) {
    const double err = item.run();
    const bool ok = err < item.threshold;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", err);
    log << "gradcheck " << item.name << " max_rel_err=" << buf
        << " threshold=" << fmt9(item.threshold)
        << (ok ? " ok" : " FAIL") << "\n";
    if (!ok) failed.push_back(item.name);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  char sbuf[32];
  std::snprintf(sbuf, sizeof(sbuf), "%.2f", seconds);
  if (!failed.empty()) {
    log << "gradcheck FAILED (" << sbuf << " s):";
    for (const std::string& name : failed) log << " " << name;
    log << "\n";
    return kVerifyFailure;
  }
  log << "gradcheck passed (" << sbuf << " s)\n";
  return kOk;
}

}  // namespace sg::cli
