#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sg/growth.hpp"
#include "sg/layers.hpp"
#include "sg/tensor.hpp"

namespace sg {

// Architecture description. `channels` lists the per-level widths from image
// to bottleneck, e.g. {3, 16, 32, 64} builds three merge levels 3->16->32->64
// and a mirrored decoder 64->32->16->3. The spatial extent halves per level,
// so input_size must be divisible by 2^(levels) with at least 2 left over.
struct SimpleGrowthConfig {
  std::int64_t input_size = 32;
  std::vector<std::int64_t> channels = {3, 16, 32, 64};
  std::int64_t latent_dim = 240;
  std::int64_t dtype_channels = 3;
  Topology topology = Topology::eight_neighborhood();
  double noise_radius = 0.1;
  std::int64_t convf_per_level = 1;
  bool bn_enabled = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  DType dtype = DType::F32;

  static SimpleGrowthConfig cifar10();  // 32x32, {3,16,32,64}
  static SimpleGrowthConfig celeba64(); // 64x64, {3,16,16,32,64}: one extra level

  std::int64_t levels() const {
    return static_cast<std::int64_t>(channels.size()) - 1;
  }
  std::int64_t bottleneck_extent() const { return input_size >> levels(); }
  std::int64_t bottleneck_channels() const { return channels.back(); }

  void validate() const;  // throws ConfigError
  std::string serialize() const;
  static SimpleGrowthConfig parse(const std::string& text);
};

// Applies one serialized key=value pair to cfg and returns true, or returns
// false when the key is not an architecture key (so callers can embed these
// keys in a larger file). Bad values throw std::invalid_argument or
// std::out_of_range for the caller to wrap with its own position info.
bool apply_config_key(SimpleGrowthConfig& cfg, const std::string& key,
                      const std::string& value);

// Convolutional autoencoder built from growth blocks: encoder merge stack ->
// flatten -> linear -> tanh (-> uniform noise in train mode), decoder linear
// -> reshape -> ConvF + div stack. The final div block emits exactly 3
// channels, so its sigmoid clamp is the output activation and reconstructions
// lie in (0,1).
class SimpleGrowthModel {
 public:
  SimpleGrowthModel(SimpleGrowthConfig cfg, std::uint64_t seed);

  // (B, 3, S, S) -> (B, latent_dim). Train mode adds uniform noise from
  // [-noise_radius, noise_radius) drawn from noise_seed after the tanh.
  Tensor encode(const Tensor& x, bool training = false,
                std::uint64_t noise_seed = 0);
  // (B, latent_dim) -> (B, 3, S, S), strictly inside (0,1). Deterministic.
  Tensor decode(const Tensor& z, bool training = false);
  Tensor forward(const Tensor& x, bool training = false,
                 std::uint64_t noise_seed = 0);

  // `count` latent rows, coordinates uniform on [-1, 1).
  Tensor sample_uniform_latents(std::int64_t count, std::uint64_t seed) const;

  // Learnable tensors in a fixed deterministic order (optimizer state is
  // aligned positionally with this list).
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  // Non-learnable state (batchnorm running stats).
  std::vector<std::pair<std::string, Tensor>> named_buffers() const;

  void save_checkpoint(const std::string& path, std::int64_t step,
                       std::span<const Tensor> optimizer_state = {}) const;
  // Rebuilds the model from the config echo stored in the file. step /
  // optimizer_state are filled when non-null (optimizer_state stays empty if
  // the file carries none).
  static SimpleGrowthModel load_checkpoint(const std::string& path,
                                           std::int64_t* step = nullptr,
                                           std::vector<Tensor>* optimizer_state =
                                               nullptr);

  const SimpleGrowthConfig& config() const { return cfg_; }

 private:
  SimpleGrowthConfig cfg_;
  std::vector<GrowthBlockParams> enc_blocks_;
  std::vector<std::vector<ConvFParams>> enc_convf_;
  LinearParams enc_fc_;
  LinearParams dec_fc_;
  std::vector<std::vector<ConvFParams>> dec_convf_;  // by level, 0 = output level
  std::vector<GrowthBlockParams> dec_blocks_;        // by level, 0 = final div
};

// z1 + k*(z2 - z1)/n for k = 0..n-1; index 0 is z1 bit-for-bit. The sequence
// stops one step short of z2.
std::vector<Tensor> interpolate(const Tensor& z1, const Tensor& z2,
                                std::int64_t n = 16);

}  // namespace sg
