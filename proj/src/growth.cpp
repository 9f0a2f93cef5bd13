#include "sg/growth.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#include "sg/random.hpp"

namespace sg {

using i64 = std::int64_t;

Topology Topology::eight_neighborhood() {
  Topology t;
  t.offsets = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  return t;
}

Topology Topology::parse(const std::string& text) {
  Topology t;
  std::size_t pos = 0;
  const auto skip_ws = [&] {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  };
  const auto parse_int = [&]() -> i64 {
    skip_ws();
    const std::size_t start = pos;
    if (pos < text.size() && (text[pos] == '-' || text[pos] == '+')) ++pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos])))
      ++pos;
    if (pos == start || (pos - start == 1 && !std::isdigit(static_cast<unsigned char>(
                                                 text[start])))) {
      throw ConfigError("topology: expected integer at position " +
                        std::to_string(start) + " in \"" + text + "\"");
    }
    return std::strtoll(text.c_str() + start, nullptr, 10);
  };
  const auto expect = [&](char c) {
    skip_ws();
    if (pos >= text.size() || text[pos] != c) {
      throw ConfigError(std::string("topology: expected '") + c + "' at position " +
                        std::to_string(pos) + " in \"" + text + "\"");
    }
    ++pos;
  };

  while (true) {
    expect('(');
    const i64 a = parse_int();
    expect(',');
    const i64 b = parse_int();
    expect(')');
    t.offsets.push_back({a, b});
    skip_ws();
    if (pos >= text.size()) break;
    expect(';');
  }
  validate_topology(t);
  return t;
}

std::string Topology::serialize() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (i) os << ";";
    os << "(" << offsets[i][0] << "," << offsets[i][1] << ")";
  }
  return os.str();
}

void validate_topology(const Topology& topo) {
  if (topo.offsets.empty()) {
    throw ConfigError("topology: needs at least one offset row");
  }
  std::set<std::array<i64, 2>> seen;
  for (const auto& row : topo.offsets) {
    if (!seen.insert(row).second) {
      throw ConfigError("topology: duplicate offset (" + std::to_string(row[0]) + "," +
                        std::to_string(row[1]) + ")");
    }
  }
}

namespace {

void check_conv_geometry(const char* what, const Conv2dParams& p, i64 in_ch,
                         i64 out_ch, i64 k, i64 stride, i64 pad) {
  if (!p.weight.defined() || p.weight.rank() != 4 || !p.bias.defined()) {
    throw ConfigError(std::string(what) + ": missing parameters");
  }
  if (p.weight.extent(0) != out_ch || p.weight.extent(1) != in_ch ||
      p.weight.extent(2) != k || p.weight.extent(3) != k || p.stride != stride ||
      p.padding != pad || p.bias.extent(0) != out_ch) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(in_ch) +
                      "->" + std::to_string(out_ch) + " " + std::to_string(k) + "x" +
                      std::to_string(k) + " stride " + std::to_string(stride) +
                      " pad " + std::to_string(pad) + ", got weight " +
                      shape_str(p.weight.shape()) + " stride " +
                      std::to_string(p.stride) + " pad " + std::to_string(p.padding));
  }
}

void check_tconv_geometry(const char* what, const ConvT2dParams& p, i64 in_ch,
                          i64 out_ch, i64 k, i64 stride, i64 pad) {
  if (!p.weight.defined() || p.weight.rank() != 4 || !p.bias.defined()) {
    throw ConfigError(std::string(what) + ": missing parameters");
  }
  if (p.weight.extent(0) != in_ch || p.weight.extent(1) != out_ch ||
      p.weight.extent(2) != k || p.weight.extent(3) != k || p.stride != stride ||
      p.padding != pad || p.bias.extent(0) != out_ch) {
    throw ConfigError(std::string(what) + ": expected transposed " +
                      std::to_string(in_ch) + "->" + std::to_string(out_ch) + " " +
                      std::to_string(k) + "x" + std::to_string(k) + " stride " +
                      std::to_string(stride) + " pad " + std::to_string(pad) +
                      ", got weight " + shape_str(p.weight.shape()) + " stride " +
                      std::to_string(p.stride) + " pad " + std::to_string(p.padding));
  }
}

}  // namespace

void validate_growth_block(const GrowthBlockParams& p) {
  validate_topology(p.topology);
  if (p.in_channels < 1 || p.out_channels < 3) {
    throw ConfigError("growth block: needs in_channels >= 1 and out_channels >= 3 "
                      "(the sigmoid clamp targets channels 0..3)");
  }
  if (p.dtype_channels < 1 || p.dtype_channels > p.in_channels) {
    throw ConfigError("growth block: dtype_channels must lie in [1, in_channels]");
  }
  const i64 nj = p.topology.size();
  check_conv_geometry("growth block compenv_conv", p.compenv_conv, p.in_channels, 1,
                      3, 1, 1);
  check_conv_geometry("growth block born_conv", p.born_conv, p.out_channels,
                      p.out_channels, 3, 1, 1);
  if (p.mode == GrowthMode::Merge) {
    check_conv_geometry("growth block change_det", p.change_det_conv,
                        p.dtype_channels + nj, p.out_channels, 4, 2, 1);
    check_conv_geometry("growth block cell", p.cell_conv, p.in_channels,
                        p.out_channels, 4, 2, 1);
  } else {
    check_tconv_geometry("growth block change_det", p.change_det_tconv,
                         p.dtype_channels + nj, p.out_channels, 4, 2, 1);
    check_tconv_geometry("growth block cell", p.cell_tconv, p.in_channels,
                         p.out_channels, 4, 2, 1);
  }
  if (p.bn && p.bn->gamma.extent(0) != p.out_channels) {
    throw ConfigError("growth block: batchnorm width does not match out_channels");
  }
}

GrowthBlockParams make_growth_block(GrowthMode mode, i64 in_channels, i64 out_channels,
                                    i64 dtype_channels, const Topology& topology,
                                    bool with_bn, std::uint64_t seed, DType dtype,
                                    double bn_momentum, double bn_eps) {
  GrowthBlockParams p;
  p.mode = mode;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  p.dtype_channels = dtype_channels;
  p.topology = topology;
  const i64 nj = topology.size();
  p.compenv_conv = make_conv2d(in_channels, 1, 3, 1, 1, seed_combine(seed, 0), dtype);
  if (mode == GrowthMode::Merge) {
    p.change_det_conv = make_conv2d(dtype_channels + nj, out_channels, 4, 2, 1,
                                    seed_combine(seed, 1), dtype);
    p.cell_conv =
        make_conv2d(in_channels, out_channels, 4, 2, 1, seed_combine(seed, 2), dtype);
  } else {
    p.change_det_tconv = make_conv_transpose2d(dtype_channels + nj, out_channels, 4,
                                               2, 1, seed_combine(seed, 1), dtype);
    p.cell_tconv = make_conv_transpose2d(in_channels, out_channels, 4, 2, 1,
                                         seed_combine(seed, 2), dtype);
  }
  p.born_conv =
      make_conv2d(out_channels, out_channels, 3, 1, 1, seed_combine(seed, 3), dtype);
  if (with_bn) {
    p.bn = make_batchnorm2d(out_channels, bn_momentum, bn_eps, dtype);
  }
  validate_growth_block(p);
  return p;
}

Tensor compenv(const Tensor& x, const Topology& topo, const Conv2dParams& conv) {
  validate_topology(topo);
  if (x.rank() != 4) throw ShapeError("compenv: expects NCHW input");
  const i64 H = x.extent(2), W = x.extent(3);
  if (conv.weight.extent(0) != 1) {
    throw ConfigError("compenv: convolution must produce a single channel");
  }
  if (conv.weight.extent(1) != x.extent(1)) {
    throw ConfigError("compenv: convolution input channels do not match x");
  }
  // size preservation: out extent (n + 2p - k)/s + 1 == n
  const i64 k = conv.weight.extent(2);
  if (conv.stride != 1 || conv.weight.extent(3) != k || 2 * conv.padding - k + 1 != 0) {
    throw ConfigError("compenv: convolution must preserve the spatial extents");
  }
  for (const auto& row : topo.offsets) {
    if (std::abs(row[0]) >= W || std::abs(row[1]) >= H) {
      throw ConfigError("compenv: topology offset (" + std::to_string(row[0]) + "," +
                        std::to_string(row[1]) + ") exceeds feature map extents " +
                        std::to_string(H) + "x" + std::to_string(W));
    }
  }

  std::vector<Tensor> channels;
  channels.reserve(topo.offsets.size());
  for (const auto& row : topo.offsets) {
    Tensor temp = roll(x, row[0], 3);
    temp = roll(temp, -row[1], 2);
    channels.push_back(conv2d(temp, conv));
  }
  return concat(std::span<const Tensor>(channels.data(), channels.size()), 1);
}

Tensor growth(const Tensor& x, const Tensor& env, GrowthBlockParams& p,
              bool training) {
  validate_growth_block(p);
  if (x.rank() != 4 || env.rank() != 4) throw ShapeError("growth: expects NCHW inputs");
  if (x.extent(1) != p.in_channels) {
    throw ShapeError("growth: input has " + std::to_string(x.extent(1)) +
                     " channels, block expects " + std::to_string(p.in_channels));
  }
  if (env.extent(0) != x.extent(0) || env.extent(2) != x.extent(2) ||
      env.extent(3) != x.extent(3)) {
    throw ShapeError("growth: environment shape " + shape_str(env.shape()) +
                     " does not spatially match input " + shape_str(x.shape()));
  }
  if (env.extent(1) != p.topology.size()) {
    throw ShapeError("growth: environment has " + std::to_string(env.extent(1)) +
                     " channels, topology has " + std::to_string(p.topology.size()) +
                     " rows");
  }
  if (p.mode == GrowthMode::Merge && (x.extent(2) % 2 != 0 || x.extent(3) % 2 != 0)) {
    throw ShapeError("growth: merge mode needs even spatial extents, got " +
                     shape_str(x.shape()));
  }

  Tensor type_and_env = concat({slice_channels(x, 0, p.dtype_channels), env}, 1);
  Tensor change = p.mode == GrowthMode::Merge
                      ? sigmoid(conv2d(type_and_env, p.change_det_conv))
                      : sigmoid(conv_transpose2d(type_and_env, p.change_det_tconv));
  Tensor cell_out = p.mode == GrowthMode::Merge ? conv2d(x, p.cell_conv)
                                                : conv_transpose2d(x, p.cell_tconv);
  if (p.bn) cell_out = batchnorm2d(cell_out, *p.bn, training);
  Tensor born = conv2d(cell_out, p.born_conv);
  Tensor y = add(mul(cell_out, sub(1.0, change)), mul(change, born));
  return assign_channels(y, 0, 3, sigmoid(slice_channels(y, 0, 3)));
}

Tensor pattern_block_forward(const Tensor& x, GrowthBlockParams& p, bool training) {
  Tensor env = compenv(x, p.topology, p.compenv_conv);
  return growth(x, env, p, training);
}

void validate_convf(const ConvFParams& p) {
  if (!p.expand.weight.defined() || !p.reduce.weight.defined()) {
    throw ConfigError("convf: missing parameters");
  }
  const i64 in_ch = p.expand.weight.extent(0);
  const i64 out_ch = p.expand.weight.extent(1);
  check_tconv_geometry("convf expand", p.expand, in_ch, out_ch, 3, 1, 0);
  check_conv_geometry("convf reduce", p.reduce, out_ch, out_ch, 3, 1, 0);
}

ConvFParams make_convf(i64 in_channels, i64 out_channels, std::uint64_t seed,
                       DType dtype) {
  ConvFParams p;
  p.expand = make_conv_transpose2d(in_channels, out_channels, 3, 1, 0,
                                   seed_combine(seed, 0), dtype);
  p.reduce =
      make_conv2d(out_channels, out_channels, 3, 1, 0, seed_combine(seed, 1), dtype);
  validate_convf(p);
  return p;
}

Tensor convf_forward(const Tensor& x, const ConvFParams& p) {
  validate_convf(p);
  return tanh(conv2d(tanh(conv_transpose2d(x, p.expand)), p.reduce));
}

}  // namespace sg
