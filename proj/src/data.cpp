#include "sg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sg/error.hpp"
#include "sg/random.hpp"
#include "sg/wire.hpp"

namespace sg {

using i64 = std::int64_t;

namespace {

constexpr i64 kRecordBytes = 3073;
constexpr i64 kPixelBytes = 3072;

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open \"" + path + "\" for reading");
  return std::vector<char>((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

Cifar10Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ArgumentError("load_cifar10_bin: no input files");

  std::vector<std::vector<char>> files;
  i64 total = 0;
  for (const std::string& path : paths) {
    std::vector<char> bytes = slurp(path);
    const i64 n = static_cast<i64>(bytes.size());
    if (n == 0 || n % kRecordBytes != 0) {
      throw FormatError("\"" + path + "\": length " + std::to_string(n) +
                        " is not a positive multiple of " +
                        std::to_string(kRecordBytes));
    }
    total += n / kRecordBytes;
    files.push_back(std::move(bytes));
  }

  Cifar10Dataset ds;
  ds.images = Tensor::zeros({total, 3, 32, 32});
  ds.labels.reserve(static_cast<std::size_t>(total));
  float* out = ds.images.impl()->ptr<float>();

  i64 rec = 0;
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    const unsigned char* bytes =
        reinterpret_cast<const unsigned char*>(files[fi].data());
    const i64 records = static_cast<i64>(files[fi].size()) / kRecordBytes;
    for (i64 r = 0; r < records; ++r, ++rec) {
      const unsigned char* p = bytes + r * kRecordBytes;
      if (p[0] > 9) {
        throw FormatError("\"" + paths[fi] + "\": record " + std::to_string(r) +
                          " has label " + std::to_string(p[0]));
      }
      ds.labels.push_back(p[0]);
      float* dst = out + rec * kPixelBytes;
      for (i64 i = 0; i < kPixelBytes; ++i) {
        dst[i] = static_cast<float>(p[1 + i]) / 255.0f;
      }
    }
  }
  return ds;
}

BatchIterator::BatchIterator(const Cifar10Dataset& dataset, i64 batch_size,
                             std::uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(seed) {
  if (dataset.size() == 0) throw ArgumentError("batches: dataset is empty");
  if (batch_size < 1) throw ArgumentError("batches: batch_size must be >= 1");
  order_.resize(static_cast<std::size_t>(dataset.size()));
  reshuffle();
}

void BatchIterator::reshuffle() {
  const i64 n = static_cast<i64>(order_.size());
  for (i64 i = 0; i < n; ++i) order_[static_cast<std::size_t>(i)] = i;
  const std::uint64_t epoch_seed =
      seed_combine(seed_, static_cast<std::uint64_t>(epoch_));
  for (i64 i = n - 1; i > 0; --i) {
    const i64 j = static_cast<i64>(
        counter_rand_u64(epoch_seed, static_cast<std::uint64_t>(i)) %
        static_cast<std::uint64_t>(i + 1));
    std::swap(order_[static_cast<std::size_t>(i)],
              order_[static_cast<std::size_t>(j)]);
  }
}

Tensor BatchIterator::next() {
  const i64 n = dataset_->size();
  if (cursor_ == n) {
    cursor_ = 0;
    ++epoch_;
    reshuffle();
  }
  const i64 b = std::min(batch_size_, n - cursor_);
  last_.assign(order_.begin() + cursor_, order_.begin() + cursor_ + b);
  cursor_ += b;

  Tensor batch = Tensor::zeros({b, 3, 32, 32});
  float* dst = batch.impl()->ptr<float>();
  const float* src = dataset_->images.data<float>().data();
  const i64 stride = 3 * 32 * 32;
  for (i64 k = 0; k < b; ++k) {
    std::memcpy(dst + k * stride, src + last_[static_cast<std::size_t>(k)] * stride,
                static_cast<std::size_t>(stride) * sizeof(float));
  }
  return batch;
}

void write_ppm_grid(const Tensor& images, i64 cols, const std::string& path) {
  if (images.rank() != 4 || images.extent(1) != 3) {
    throw ShapeError("write_ppm_grid: expected (N,3,h,w), got " +
                     shape_str(images.shape()));
  }
  const i64 n = images.extent(0);
  if (n < 1 || cols < 1) {
    throw ArgumentError("write_ppm_grid: need at least one image and one column");
  }
  const i64 h = images.extent(2);
  const i64 w = images.extent(3);
  const i64 rows = (n + cols - 1) / cols;
  const i64 W = cols * w;
  const i64 H = rows * h;

  std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  std::vector<unsigned char> pixels(static_cast<std::size_t>(W * H * 3), 0);

  const std::vector<double> v = images.to_vector();
  for (i64 img = 0; img < n; ++img) {
    const i64 cell_y = (img / cols) * h;
    const i64 cell_x = (img % cols) * w;
    for (i64 c = 0; c < 3; ++c) {
      for (i64 y = 0; y < h; ++y) {
        for (i64 x = 0; x < w; ++x) {
          const double val = v[static_cast<std::size_t>(((img * 3 + c) * h + y) * w + x)];
          double b = std::floor(val * 255.0 + 0.5);
          b = std::min(255.0, std::max(0.0, b));
          pixels[static_cast<std::size_t>(((cell_y + y) * W + cell_x + x) * 3 + c)] =
              static_cast<unsigned char>(b);
        }
      }
    }
  }
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open \"" + path + "\" for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to \"" + path + "\"");
}

void write_tensor_file(const std::string& path, const Tensor& t) {
  std::string out;
  wire::append_tensor_entry(out, "tensor", t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open \"" + path + "\" for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to \"" + path + "\"");
}

Tensor read_tensor_file(const std::string& path) {
  wire::Reader r(slurp(path));
  wire::Entry e = wire::read_entry(r);
  if (!r.at_end()) {
    throw FormatError("trailing bytes after the tensor entry", r.offset());
  }
  return wire::entry_to_tensor(e);
}

}  // namespace sg
