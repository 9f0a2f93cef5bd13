#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sg/tensor.hpp"

namespace sg {

// CIFAR-10 batch files hold back-to-back 3073-byte records: one label byte
// followed by 3072 channel-major pixel bytes (1024 red, 1024 green, 1024
// blue, each row-major 32x32).
struct Cifar10Dataset {
  Tensor images;  // (N, 3, 32, 32) f32, pixels byte/255
  std::vector<std::uint8_t> labels;

  std::int64_t size() const { return images.defined() ? images.extent(0) : 0; }
};

// Parses one or more batch files into a single dataset. A file whose length
// is not a multiple of 3073 or that contains a label above 9 is rejected.
Cifar10Dataset load_cifar10_bin(const std::vector<std::string>& paths);

// Seeded epoch iterator. Each epoch visits every record exactly once, in a
// fresh Fisher-Yates order drawn from (seed, epoch); the final short batch is
// emitted rather than dropped.
class BatchIterator {
 public:
  BatchIterator(const Cifar10Dataset& dataset, std::int64_t batch_size,
                std::uint64_t seed);

  Tensor next();  // (b, 3, 32, 32) with b <= batch_size

  // Epoch (0-based) and dataset indices of the batch returned by the most
  // recent next(); epoch of the upcoming batch before any call.
  std::int64_t epoch() const { return epoch_; }
  const std::vector<std::int64_t>& last_indices() const { return last_; }

 private:
  void reshuffle();

  const Cifar10Dataset* dataset_;
  std::int64_t batch_size_;
  std::uint64_t seed_;
  std::int64_t epoch_ = 0;
  std::int64_t cursor_ = 0;
  std::vector<std::int64_t> order_;
  std::vector<std::int64_t> last_;
};

// Tiles images (N, 3, h, w) with values in [0,1] into a cols-wide grid and
// writes it as binary PPM (P6, maxval 255). Bytes are floor(v*255 + 0.5)
// clamped to [0,255]; grid cells past the last image stay black.
void write_ppm_grid(const Tensor& images, std::int64_t cols,
                    const std::string& path);

// Raw tensor files hold exactly one entry in the checkpoint encoding (name
// length, name, dtype tag, rank, extents, payload). They are the import path
// for datasets that have no dedicated loader.
void write_tensor_file(const std::string& path, const Tensor& t);
Tensor read_tensor_file(const std::string& path);

}  // namespace sg
