#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sg/random.hpp"

// Synthetic CIFAR-format batch file, labels cycling 0..9. Each image is a
// per-image brightness plus per-channel tint plus a low-frequency sinusoid,
// mimicking the statistics that matter for photographs: most of the variance
// sits in a shared DC component, with moderate texture on top. Returns the
// raw bytes written.
inline std::vector<unsigned char> write_synthetic_cifar(const std::string& path,
                                                        std::int64_t n,
                                                        std::uint64_t seed) {
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(n) * 3073);
  for (std::int64_t r = 0; r < n; ++r) {
    bytes.push_back(static_cast<unsigned char>(r % 10));
    const std::uint64_t rkey =
        sg::seed_combine(seed, static_cast<std::uint64_t>(r), 3);
    const double bright = 0.15 + 0.55 * sg::counter_rand_unit(rkey, 0);
    for (std::int64_t c = 0; c < 3; ++c) {
      const std::uint64_t key = sg::seed_combine(seed, static_cast<std::uint64_t>(r),
                                                 static_cast<std::uint64_t>(c));
      const double fx = 1.0 + 3.0 * sg::counter_rand_unit(key, 0);
      const double fy = 1.0 + 3.0 * sg::counter_rand_unit(key, 1);
      const double phase = 6.283185307179586 * sg::counter_rand_unit(key, 2);
      const double base = bright + 0.16 * (sg::counter_rand_unit(key, 3) - 0.5);
      for (std::int64_t y = 0; y < 32; ++y) {
        for (std::int64_t x = 0; x < 32; ++x) {
          const double t = 6.283185307179586 * (fx * x + fy * y) / 32.0 + phase;
          const double v = base + 0.10 * std::sin(t);
          const double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
          bytes.push_back(static_cast<unsigned char>(clamped * 255.0 + 0.5));
        }
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  return bytes;
}
