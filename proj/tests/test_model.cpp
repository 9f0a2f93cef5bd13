#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "sg/model.hpp"
#include "sg/random.hpp"

using namespace sg;
using i64 = std::int64_t;

namespace {

SimpleGrowthConfig tiny_config(DType dt = DType::F32) {
  SimpleGrowthConfig cfg;
  cfg.input_size = 8;
  cfg.channels = {3, 4, 6};
  cfg.latent_dim = 8;
  cfg.dtype = dt;
  return cfg;
}

Tensor test_images(i64 b, i64 s, std::uint64_t seed, DType dt = DType::F32) {
  return Tensor::uniform({b, 3, s, s}, 0.05, 0.95, seed, dt);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(f));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("config factories and invariant checks") {
  SimpleGrowthConfig c10 = SimpleGrowthConfig::cifar10();
  CHECK(c10.input_size == 32);
  CHECK(c10.channels == std::vector<i64>{3, 16, 32, 64});
  CHECK(c10.latent_dim == 240);
  CHECK(c10.levels() == 3);
  CHECK(c10.bottleneck_extent() == 4);
  CHECK_NOTHROW(c10.validate());

  SimpleGrowthConfig ca = SimpleGrowthConfig::celeba64();
  CHECK(ca.input_size == 64);
  CHECK(ca.channels == std::vector<i64>{3, 16, 16, 32, 64});
  CHECK(ca.levels() == 4);
  CHECK(ca.bottleneck_extent() == 4);
  CHECK_NOTHROW(ca.validate());

  SimpleGrowthConfig bad = tiny_config();
  bad.channels[0] = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.input_size = 10;  // not divisible by 2^levels
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.channels = {3, 4, 6, 8};  // extent would reach 1 at the bottleneck
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.latent_dim = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.dtype_channels = 5;  // wider than the narrowest level
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.noise_radius = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config text round-trip") {
  SimpleGrowthConfig cfg = tiny_config(DType::F64);
  cfg.noise_radius = 0.25;
  cfg.convf_per_level = 2;
  cfg.bn_enabled = false;
  const std::string text = cfg.serialize();
  SimpleGrowthConfig back = SimpleGrowthConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.channels == cfg.channels);
  CHECK(back.noise_radius == cfg.noise_radius);
  CHECK(back.bn_enabled == false);
  CHECK(back.dtype == DType::F64);

  CHECK_THROWS_AS(SimpleGrowthConfig::parse("input_size=32\nbogus_key=1\n"),
                  ConfigError);
  CHECK_THROWS_AS(SimpleGrowthConfig::parse("input_size=abc\n"), ConfigError);
  CHECK_THROWS_AS(SimpleGrowthConfig::parse("no equals sign"), ConfigError);
  // the unknown-key message points at the offending line
  try {
    SimpleGrowthConfig::parse("input_size=32\nlatent_dim=8\nwat=1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("encode determinism, range and noise bound") {
  SimpleGrowthModel model(tiny_config(), 11);
  Tensor x = test_images(2, 8, 21);

  Tensor z_a = model.encode(x);
  Tensor z_b = model.encode(x);
  CHECK(z_a.shape() == Shape{2, 8});
  CHECK(z_a.same_bits(z_b));

  // pre-noise coordinates sit strictly inside the tanh range
  for (double v : z_a.to_vector()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }

  // train mode stays within noise_radius of the pre-noise encoding. Batchnorm
  // is disabled here so a noise-free train pass is reachable via the eval
  // path (otherwise batch statistics shift the comparison point).
  SimpleGrowthConfig plain = tiny_config();
  plain.bn_enabled = false;
  SimpleGrowthModel flat_model(plain, 11);
  Tensor z0 = flat_model.encode(x);
  Tensor z_train = flat_model.encode(x, true, 99);
  auto za = z0.to_vector();
  auto zt = z_train.to_vector();
  double max_dev = 0.0;
  for (std::size_t i = 0; i < za.size(); ++i) {
    max_dev = std::max(max_dev, std::abs(zt[i] - za[i]));
  }
  CHECK(max_dev <= 0.1);
  CHECK(max_dev > 0.0);

  // a different noise seed draws different noise
  Tensor z_train2 = flat_model.encode(x, true, 100);
  CHECK_FALSE(z_train.same_bits(z_train2));

  CHECK_THROWS_AS(model.encode(Tensor::zeros({2, 3, 8, 4})), ShapeError);
  CHECK_THROWS_AS(model.encode(Tensor::zeros({2, 1, 8, 8})), ShapeError);
  CHECK_THROWS_AS(model.encode(Tensor::zeros({2, 3, 8, 8}, DType::F64)),
                  ShapeError);
}

TEST_CASE("decode shape, output range and determinism") {
  SimpleGrowthModel model(tiny_config(), 3);
  Tensor z = model.sample_uniform_latents(4, 17);

  Tensor xa = model.decode(z);
  Tensor xb = model.decode(z);
  CHECK(xa.shape() == Shape{4, 3, 8, 8});
  CHECK(xa.same_bits(xb));
  for (double v : xa.to_vector()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  CHECK_THROWS_AS(model.decode(Tensor::zeros({4, 9})), ShapeError);
  CHECK_THROWS_AS(model.decode(Tensor::zeros({8})), ShapeError);
}

TEST_CASE("forward shape round-trip for both standard configs") {
  {
    SimpleGrowthModel model(SimpleGrowthConfig::cifar10(), 5);
    Tensor x = test_images(1, 32, 41);
    Tensor y = model.forward(x);
    CHECK(y.shape() == Shape{1, 3, 32, 32});
    CHECK(y.same_bits(model.forward(x)));
  }
  {
    SimpleGrowthModel model(SimpleGrowthConfig::celeba64(), 5);
    Tensor x = test_images(1, 64, 42);
    Tensor y = model.forward(x);
    CHECK(y.shape() == Shape{1, 3, 64, 64});
  }
}

TEST_CASE("train-mode forward depends on the noise seed, eval does not") {
  SimpleGrowthModel model(tiny_config(), 19);
  Tensor x = test_images(2, 8, 55);
  Tensor t1 = model.forward(x, true, 1);
  Tensor t2 = model.forward(x, true, 2);
  CHECK_FALSE(t1.same_bits(t2));
  Tensor e1 = model.forward(x, false, 1);
  Tensor e2 = model.forward(x, false, 2);
  CHECK(e1.same_bits(e2));
}

TEST_CASE("reconstruction loss gradient matches finite differences") {
  SimpleGrowthModel model(tiny_config(DType::F64), 7);
  Tensor x = test_images(2, 8, 77, DType::F64);
  auto f = [&](const Tensor& in) {
    Tensor d = sub(model.forward(in, true, 1234), in);
    return mean(mul(d, d));
  };
  const double rel = gradcheck(f, x, 1e-5);
  CHECK(rel < 1e-4);
}

TEST_CASE("latent interpolation follows the linear schedule") {
  Tensor z1 = Tensor::uniform({1, 8}, -1.0, 1.0, 1);
  Tensor z2 = Tensor::uniform({1, 8}, -1.0, 1.0, 2);

  auto path = interpolate(z1, z2, 16);
  REQUIRE(path.size() == 16);
  CHECK(path[0].same_bits(z1));

  auto v1 = z1.to_vector();
  auto v2 = z2.to_vector();
  for (i64 k = 0; k < 16; ++k) {
    auto vk = path[static_cast<std::size_t>(k)].to_vector();
    for (std::size_t i = 0; i < v1.size(); ++i) {
      const double expect =
          v1[i] + static_cast<double>(k) * (v2[i] - v1[i]) / 16.0;
      CHECK(vk[i] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
  // the path stops one step short of z2
  auto last = path[15].to_vector();
  bool all_equal = true;
  for (std::size_t i = 0; i < v2.size(); ++i) {
    if (last[i] != v2[i]) all_equal = false;
  }
  CHECK_FALSE(all_equal);

  auto flat = interpolate(z1, z1, 5);
  for (const Tensor& z : flat) {
    auto v = z.to_vector();
    for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v[i] == v1[i]);
  }

  CHECK_THROWS_AS(interpolate(z1, z2, 1), ArgumentError);
  CHECK_THROWS_AS(interpolate(z1, Tensor::zeros({1, 9}), 4), ShapeError);
}

TEST_CASE("uniform latent sampling: range, determinism, mean") {
  SimpleGrowthModel model(tiny_config(), 23);
  Tensor a = model.sample_uniform_latents(10000, 31);
  Tensor b = model.sample_uniform_latents(10000, 31);
  CHECK(a.shape() == Shape{10000, 8});
  CHECK(a.same_bits(b));
  CHECK_FALSE(a.same_bits(model.sample_uniform_latents(10000, 32)));

  double acc = 0.0;
  auto v = a.to_vector();
  for (double x : v) {
    CHECK(x >= -1.0);
    CHECK(x < 1.0);
    acc += x;
  }
  CHECK(std::abs(acc / static_cast<double>(v.size())) < 0.05);

  CHECK_THROWS_AS(model.sample_uniform_latents(0, 1), ArgumentError);
}

TEST_CASE("checkpoint round-trip preserves the forward map bit-for-bit") {
  const std::string path = "ckpt_roundtrip.bin";
  SimpleGrowthModel model(tiny_config(), 29);
  Tensor x = test_images(3, 8, 61);

  // push the batchnorm running stats away from their init so buffer
  // persistence actually matters
  (void)model.forward(x, true, 5);
  (void)model.forward(x, true, 6);

  std::vector<Tensor> opt;
  opt.push_back(Tensor::uniform({4, 3, 4, 4}, -1.0, 1.0, 71));
  opt.push_back(Tensor::uniform({6}, -1.0, 1.0, 72));
  model.save_checkpoint(path, 1234, opt);

  i64 step = -1;
  std::vector<Tensor> opt_back;
  SimpleGrowthModel loaded = SimpleGrowthModel::load_checkpoint(path, &step, &opt_back);
  CHECK(step == 1234);
  REQUIRE(opt_back.size() == 2);
  CHECK(opt_back[0].same_bits(opt[0]));
  CHECK(opt_back[1].same_bits(opt[1]));
  CHECK(loaded.config().serialize() == model.config().serialize());

  CHECK(loaded.forward(x).same_bits(model.forward(x)));

  auto pa = model.named_parameters();
  auto pb = loaded.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.same_bits(pb[i].second));
  }
  auto ba = model.named_buffers();
  auto bb = loaded.named_buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].second.same_bits(bb[i].second));
  }

  // a checkpoint without an optimizer section loads with an empty one
  model.save_checkpoint(path, 7);
  std::vector<Tensor> none{Tensor::zeros({1})};
  (void)SimpleGrowthModel::load_checkpoint(path, &step, &none);
  CHECK(step == 7);
  CHECK(none.empty());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint entry census for the tiny architecture") {
  // per merge/div block: compenv w+b, change w+b, cell w+b, born w+b = 8,
  // plus gamma+beta when batchnorm is attached; per convf: 4 tensors.
  // tiny config {3,4,6}: enc0 10+4, enc1 10+4, fc 2+2, dec1 4+10, dec0 4+8
  const std::size_t expected_params = (10 + 4) + (10 + 4) + 4 + (4 + 10) + (4 + 8);
  // running mean/var for the three blocks that carry batchnorm
  const std::size_t expected_buffers = 6;

  SimpleGrowthModel model(tiny_config(), 31);
  CHECK(model.named_parameters().size() == expected_params);
  CHECK(model.named_buffers().size() == expected_buffers);

  const std::string path = "ckpt_census.bin";
  model.save_checkpoint(path, 0);
  const std::string bytes = read_file(path);
  REQUIRE(bytes.size() > 12);
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) {
    count |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + i]))
             << (8 * i);
  }
  CHECK(count == 1 + expected_params + expected_buffers);
  std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoints are rejected with a format error") {
  const std::string path = "ckpt_corrupt.bin";
  SimpleGrowthModel model(tiny_config(), 37);
  model.save_checkpoint(path, 42);
  const std::string good = read_file(path);

  for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(7),
                          std::size_t(11), std::size_t(20), good.size() / 2,
                          good.size() - 1}) {
    write_file(path, good.substr(0, cut));
    CHECK_THROWS_AS(SimpleGrowthModel::load_checkpoint(path), FormatError);
  }

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_file(path, bad_magic);
  CHECK_THROWS_AS(SimpleGrowthModel::load_checkpoint(path), FormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  write_file(path, bad_version);
  CHECK_THROWS_AS(SimpleGrowthModel::load_checkpoint(path), FormatError);

  CHECK_THROWS_AS(SimpleGrowthModel::load_checkpoint("does_not_exist.bin"),
                  IoError);
  std::remove(path.c_str());
}
