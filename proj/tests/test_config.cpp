#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "sg/config.hpp"
#include "sg/error.hpp"

using namespace sg;

TEST_CASE("defaults survive an empty config and a comment-only config") {
  RunConfig a = RunConfig::parse("");
  CHECK(a.model.latent_dim == 240);
  CHECK(a.model.channels == std::vector<std::int64_t>{3, 16, 32, 64});
  CHECK(a.train.epochs == 48);
  CHECK(a.train.batch_size == 16);
  CHECK(a.train.lr == 0.001);
  CHECK(a.train.beta1 == 0.5);
  CHECK(a.train.beta2 == 0.999);
  CHECK(a.train_data.empty());
  CHECK(a.eval_data.empty());

  RunConfig b = RunConfig::parse("# just a comment\n\n   # another\n");
  CHECK(b.serialize() == a.serialize());
}

TEST_CASE("overrides, comments, and whitespace") {
  const std::string text =
      "# smoke run\n"
      "channels=3,8,16\n"
      "latent_dim = 32   # inline comment\n"
      "epochs=2\n"
      "max_iterations=300\n"
      "lr=0.002\n"
      "betas=0.9,0.99\n"
      "seed=77\n"
      "embedder=rand_proj:5\n"
      "train_data = a.bin , b.bin\n"
      "eval_data=c.bin\n";
  RunConfig cfg = RunConfig::parse(text);
  CHECK(cfg.model.channels == std::vector<std::int64_t>{3, 8, 16});
  CHECK(cfg.model.latent_dim == 32);
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.train.max_iterations == 300);
  CHECK(cfg.train.lr == 0.002);
  CHECK(cfg.train.beta1 == 0.9);
  CHECK(cfg.train.beta2 == 0.99);
  CHECK(cfg.train.seed == 77);
  CHECK(cfg.train.embedder.describe() == "rand_proj:5");
  REQUIRE(cfg.train_data.size() == 2);
  CHECK(cfg.train_data[0] == "a.bin");
  CHECK(cfg.train_data[1] == "b.bin");
  REQUIRE(cfg.eval_data.size() == 1);
  CHECK(cfg.eval_data[0] == "c.bin");
}

TEST_CASE("echo round-trips every effective value") {
  RunConfig cfg = RunConfig::parse(
      "channels=3,8,16\nlatent_dim=32\nnoise_radius=0.05\nepochs=3\n"
      "betas=0.5,0.999\nseed=9\ntrain_data=x.bin\n");
  const std::string echo = cfg.serialize();
  RunConfig back = RunConfig::parse(echo);
  CHECK(back.serialize() == echo);
  CHECK(back.model.noise_radius == cfg.model.noise_radius);
  CHECK(back.train.seed == cfg.train.seed);
  CHECK(back.train_data == cfg.train_data);

  // the echo names every knob, overridden or not
  for (const char* key :
       {"input_size=", "channels=", "latent_dim=", "dtype_channels=",
        "topology=", "noise_radius=", "convf_per_level=", "bn_enabled=",
        "bn_momentum=", "bn_eps=", "dtype=", "epochs=", "max_iterations=",
        "batch_size=", "lr=", "betas=", "seed=", "metric_interval=",
        "eval_sample_count=", "checkpoint_interval=", "embedder=",
        "train_data=", "eval_data="}) {
    CAPTURE(key);
    CHECK(echo.find(key) != std::string::npos);
  }
}

TEST_CASE("rejections carry the line number") {
  CHECK_THROWS_WITH_AS(RunConfig::parse("epochs=2\nwat=1\n"),
                       "config line 2: unknown key \"wat\"", ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::parse("# c\n\nlr=fast\n"),
                       "config line 3: bad value for \"lr\": \"fast\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::parse("betas=0.5\n"),
                       "config line 1: bad value for \"betas\": \"0.5\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::parse("embedder=conv_net\n"),
                       "config line 1: bad value for \"embedder\": \"conv_net\"",
                       ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::parse("epochs 2\n"),
                       "config line 1: expected key=value, got \"epochs 2\"",
                       ConfigError);
  // structural validation still runs after parsing
  CHECK_THROWS_AS(RunConfig::parse("channels=4,8\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("batch_size=0\n"), ConfigError);
}

TEST_CASE("load reads a file and reports missing ones") {
  const std::string path = "run_config_test.cfg";
  {
    std::ofstream f(path, std::ios::trunc);
    f << "latent_dim=32\nchannels=3,8,16\nseed=5\n";
  }
  RunConfig cfg = RunConfig::load(path);
  CHECK(cfg.model.latent_dim == 32);
  CHECK(cfg.train.seed == 5);
  std::remove(path.c_str());

  CHECK_THROWS_AS(RunConfig::load("no_such_config.cfg"), IoError);
}
