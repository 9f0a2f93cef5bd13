#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"SimpleGrowth: growth-block convolutional autoencoder"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint_path, embedder_spec = "raw_pool";
  std::vector<std::string> data_paths;
  std::vector<std::int64_t> indices;
  std::int64_t count = 16;
  std::uint64_t seed = 0;
  bool corrupt_backward = false;

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--out", out_path, "output directory")->required();

  CLI::App* reconstruct =
      app.add_subcommand("reconstruct", "original/reconstruction pair grid");
  reconstruct->add_option("--checkpoint", checkpoint_path)->required();
  reconstruct->add_option("--data", data_paths, "CIFAR batch files")->required();
  reconstruct->add_option("--count", count, "images to reconstruct");
  reconstruct->add_option("--out", out_path, "output PPM")->required();

  CLI::App* interpolate =
      app.add_subcommand("interpolate", "latent interpolation grid");
  interpolate->add_option("--checkpoint", checkpoint_path)->required();
  interpolate->add_option("--data", data_paths, "CIFAR batch files")->required();
  interpolate->add_option("--indices", indices, "two image indices A,B")
      ->required()
      ->delimiter(',')
      ->expected(2);
  interpolate->add_option("--count", count, "interpolation steps");
  interpolate->add_option("--out", out_path, "output PPM")->required();

  CLI::App* sample = app.add_subcommand("sample", "decode uniform latents");
  sample->add_option("--checkpoint", checkpoint_path)->required();
  sample->add_option("--count", count, "latents to decode");
  sample->add_option("--seed", seed, "latent RNG seed");
  sample->add_option("--out", out_path, "output PPM")->required();

  CLI::App* eval = app.add_subcommand("eval", "reconstruction quality metrics");
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--data", data_paths, "CIFAR batch files")->required();
  eval->add_option("--count", count, "images to evaluate");
  eval->add_option("--embedder", embedder_spec,
                   "raw_pool | rand_proj:SEED | external:PATH");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "verify every backward rule");
  gradcheck->add_flag("--corrupt-backward", corrupt_backward,
                      "inject a wrong derivative to prove detection");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : sg::cli::kConfigFailure;
  }

  if (train->parsed()) {
    return sg::cli::cmd_train(config_path, out_path, std::cout);
  }
  if (reconstruct->parsed()) {
    return sg::cli::cmd_reconstruct(checkpoint_path, data_paths, count,
                                    out_path, std::cout);
  }
  if (interpolate->parsed()) {
    return sg::cli::cmd_interpolate(checkpoint_path, data_paths, indices[0],
                                    indices[1], count, out_path, std::cout);
  }
  if (sample->parsed()) {
    return sg::cli::cmd_sample(checkpoint_path, count, seed, out_path,
                               std::cout);
  }
  if (eval->parsed()) {
    return sg::cli::cmd_eval(checkpoint_path, data_paths, count, embedder_spec,
                             std::cout);
  }
  return sg::cli::cmd_gradcheck(std::cout, corrupt_backward);
}
