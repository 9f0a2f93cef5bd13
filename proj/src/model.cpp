#include "sg/model.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sg/random.hpp"
#include "sg/wire.hpp"

namespace sg {

using i64 = std::int64_t;

SimpleGrowthConfig SimpleGrowthConfig::cifar10() { return SimpleGrowthConfig{}; }

SimpleGrowthConfig SimpleGrowthConfig::celeba64() {
  SimpleGrowthConfig cfg;
  cfg.input_size = 64;
  cfg.channels = {3, 16, 16, 32, 64};
  return cfg;
}

void SimpleGrowthConfig::validate() const {
  if (channels.size() < 2) {
    throw ConfigError("config: needs at least one encoder level");
  }
  if (channels.front() != 3) {
    throw ConfigError("config: first channel width must be 3 (RGB images)");
  }
  for (i64 c : channels) {
    if (c < 3) {
      throw ConfigError("config: every level width must be >= 3 "
                        "(growth blocks clamp channels 0..3)");
    }
  }
  const i64 L = levels();
  if (input_size < 4 || input_size % (i64(1) << L) != 0) {
    throw ConfigError("config: input_size " + std::to_string(input_size) +
                      " is not divisible by 2^" + std::to_string(L));
  }
  if (bottleneck_extent() < 2) {
    throw ConfigError("config: bottleneck extent " +
                      std::to_string(bottleneck_extent()) + " is below 2");
  }
  if (latent_dim < 1) throw ConfigError("config: latent_dim must be positive");
  if (dtype_channels < 1) {
    throw ConfigError("config: dtype_channels must be positive");
  }
  for (i64 c : channels) {
    if (dtype_channels > c) {
      throw ConfigError("config: dtype_channels " + std::to_string(dtype_channels) +
                        " exceeds level width " + std::to_string(c));
    }
  }
  if (noise_radius < 0) throw ConfigError("config: noise_radius must be >= 0");
  if (convf_per_level < 0) {
    throw ConfigError("config: convf_per_level must be >= 0");
  }
  if (bn_eps <= 0 || bn_momentum < 0 || bn_momentum > 1) {
    throw ConfigError("config: invalid batchnorm hyperparameters");
  }
  validate_topology(topology);
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string SimpleGrowthConfig::serialize() const {
  std::ostringstream os;
  os << "input_size=" << input_size << "\n";
  os << "channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (i) os << ",";
    os << channels[i];
  }
  os << "\n";
  os << "latent_dim=" << latent_dim << "\n";
  os << "dtype_channels=" << dtype_channels << "\n";
  os << "topology=" << topology.serialize() << "\n";
  os << "noise_radius=" << format_double(noise_radius) << "\n";
  os << "convf_per_level=" << convf_per_level << "\n";
  os << "bn_enabled=" << (bn_enabled ? "true" : "false") << "\n";
  os << "bn_momentum=" << format_double(bn_momentum) << "\n";
  os << "bn_eps=" << format_double(bn_eps) << "\n";
  os << "dtype=" << dtype_name(dtype) << "\n";
  return os.str();
}

bool apply_config_key(SimpleGrowthConfig& cfg, const std::string& key,
                      const std::string& value) {
  if (key == "input_size") {
    cfg.input_size = std::stoll(value);
  } else if (key == "channels") {
    cfg.channels.clear();
    std::istringstream vs(value);
    std::string item;
    while (std::getline(vs, item, ',')) cfg.channels.push_back(std::stoll(item));
  } else if (key == "latent_dim") {
    cfg.latent_dim = std::stoll(value);
  } else if (key == "dtype_channels") {
    cfg.dtype_channels = std::stoll(value);
  } else if (key == "topology") {
    cfg.topology = Topology::parse(value);
  } else if (key == "noise_radius") {
    cfg.noise_radius = std::stod(value);
  } else if (key == "convf_per_level") {
    cfg.convf_per_level = std::stoll(value);
  } else if (key == "bn_enabled") {
    if (value != "true" && value != "false") throw std::invalid_argument(value);
    cfg.bn_enabled = value == "true";
  } else if (key == "bn_momentum") {
    cfg.bn_momentum = std::stod(value);
  } else if (key == "bn_eps") {
    cfg.bn_eps = std::stod(value);
  } else if (key == "dtype") {
    if (value == "f32") {
      cfg.dtype = DType::F32;
    } else if (value == "f64") {
      cfg.dtype = DType::F64;
    } else {
      throw std::invalid_argument(value);
    }
  } else {
    return false;
  }
  return true;
}

SimpleGrowthConfig SimpleGrowthConfig::parse(const std::string& text) {
  SimpleGrowthConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value, got \"" + line + "\"");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (!apply_config_key(cfg, key, value)) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": unknown key \"" + key + "\"");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": bad value for \"" + key + "\": \"" + value + "\"");
    } catch (const std::out_of_range&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": value out of range for \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

// ---- model assembly ---------------------------------------------------------

SimpleGrowthModel::SimpleGrowthModel(SimpleGrowthConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const i64 L = cfg_.levels();
  const DType dt = cfg_.dtype;

  for (i64 i = 0; i < L; ++i) {
    enc_blocks_.push_back(make_growth_block(
        GrowthMode::Merge, cfg_.channels[static_cast<std::size_t>(i)],
        cfg_.channels[static_cast<std::size_t>(i + 1)], cfg_.dtype_channels,
        cfg_.topology, cfg_.bn_enabled, seed_combine(seed, 100 + i), dt,
        cfg_.bn_momentum, cfg_.bn_eps));
    std::vector<ConvFParams> fs;
    for (i64 j = 0; j < cfg_.convf_per_level; ++j) {
      fs.push_back(make_convf(cfg_.channels[static_cast<std::size_t>(i + 1)],
                              cfg_.channels[static_cast<std::size_t>(i + 1)],
                              seed_combine(seed, 200 + i, j), dt));
    }
    enc_convf_.push_back(std::move(fs));
  }

  const i64 flat = cfg_.bottleneck_channels() * cfg_.bottleneck_extent() *
                   cfg_.bottleneck_extent();
  enc_fc_ = make_linear(flat, cfg_.latent_dim, seed_combine(seed, 300), dt);
  dec_fc_ = make_linear(cfg_.latent_dim, flat, seed_combine(seed, 301), dt);

  dec_blocks_.resize(static_cast<std::size_t>(L));
  dec_convf_.resize(static_cast<std::size_t>(L));
  for (i64 i = L - 1; i >= 0; --i) {
    std::vector<ConvFParams> fs;
    for (i64 j = 0; j < cfg_.convf_per_level; ++j) {
      fs.push_back(make_convf(cfg_.channels[static_cast<std::size_t>(i + 1)],
                              cfg_.channels[static_cast<std::size_t>(i + 1)],
                              seed_combine(seed, 400 + i, j), dt));
    }
    dec_convf_[static_cast<std::size_t>(i)] = std::move(fs);
    // no batchnorm on the final level: its sigmoid clamp is the output
    const bool bn_here = cfg_.bn_enabled && i != 0;
    dec_blocks_[static_cast<std::size_t>(i)] = make_growth_block(
        GrowthMode::Div, cfg_.channels[static_cast<std::size_t>(i + 1)],
        cfg_.channels[static_cast<std::size_t>(i)], cfg_.dtype_channels,
        cfg_.topology, bn_here, seed_combine(seed, 500 + i), dt, cfg_.bn_momentum,
        cfg_.bn_eps);
  }
}

Tensor SimpleGrowthModel::encode(const Tensor& x, bool training,
                                 std::uint64_t noise_seed) {
  if (x.rank() != 4 || x.extent(1) != cfg_.channels.front() ||
      x.extent(2) != cfg_.input_size || x.extent(3) != cfg_.input_size) {
    throw ShapeError("encode: expected (B," + std::to_string(cfg_.channels.front()) +
                     "," + std::to_string(cfg_.input_size) + "," +
                     std::to_string(cfg_.input_size) + "), got " +
                     shape_str(x.shape()));
  }
  if (x.dtype() != cfg_.dtype) throw ShapeError("encode: dtype mismatch");
  Tensor h = x;
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    h = pattern_block_forward(h, enc_blocks_[i], training);
    for (ConvFParams& f : enc_convf_[i]) h = convf_forward(h, f);
  }
  const i64 B = h.extent(0);
  Tensor z0 = tanh(linear(h.reshape({B, h.numel() / B}), enc_fc_));
  if (!training || cfg_.noise_radius == 0) return z0;
  Tensor noise = Tensor::uniform(z0.shape(), -cfg_.noise_radius, cfg_.noise_radius,
                                 noise_seed, cfg_.dtype);
  return add(z0, noise);
}

Tensor SimpleGrowthModel::decode(const Tensor& z, bool training) {
  if (z.rank() != 2 || z.extent(1) != cfg_.latent_dim) {
    throw ShapeError("decode: expected (B," + std::to_string(cfg_.latent_dim) +
                     "), got " + shape_str(z.shape()));
  }
  if (z.dtype() != cfg_.dtype) throw ShapeError("decode: dtype mismatch");
  const i64 B = z.extent(0);
  const i64 sb = cfg_.bottleneck_extent();
  Tensor h = linear(z, dec_fc_).reshape({B, cfg_.bottleneck_channels(), sb, sb});
  for (i64 i = cfg_.levels() - 1; i >= 0; --i) {
    for (ConvFParams& f : dec_convf_[static_cast<std::size_t>(i)]) {
      h = convf_forward(h, f);
    }
    h = pattern_block_forward(h, dec_blocks_[static_cast<std::size_t>(i)], training);
  }
  return h;
}

Tensor SimpleGrowthModel::forward(const Tensor& x, bool training,
                                  std::uint64_t noise_seed) {
  return decode(encode(x, training, noise_seed), training);
}

Tensor SimpleGrowthModel::sample_uniform_latents(i64 count,
                                                 std::uint64_t seed) const {
  if (count < 1) {
    throw ArgumentError("sample_uniform_latents: count must be positive");
  }
  return Tensor::uniform({count, cfg_.latent_dim}, -1.0, 1.0, seed, cfg_.dtype);
}

std::vector<Tensor> interpolate(const Tensor& z1, const Tensor& z2, i64 n) {
  if (n < 2) throw ArgumentError("interpolate: needs at least 2 steps");
  if (z1.shape() != z2.shape() || z1.dtype() != z2.dtype()) {
    throw ShapeError("interpolate: latent shape/dtype mismatch");
  }
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  out.push_back(z1.clone());
  Tensor diff = sub(z2, z1);
  for (i64 k = 1; k < n; ++k) {
    out.push_back(add(z1, mul(diff, static_cast<double>(k) / static_cast<double>(n))));
  }
  return out;
}

// ---- parameter enumeration ----------------------------------------------------

namespace {

void collect_block(const std::string& prefix, const GrowthBlockParams& p,
                   std::vector<std::pair<std::string, Tensor>>& params) {
  params.emplace_back(prefix + ".compenv.weight", p.compenv_conv.weight);
  params.emplace_back(prefix + ".compenv.bias", p.compenv_conv.bias);
  if (p.mode == GrowthMode::Merge) {
    params.emplace_back(prefix + ".change.weight", p.change_det_conv.weight);
    params.emplace_back(prefix + ".change.bias", p.change_det_conv.bias);
    params.emplace_back(prefix + ".cell.weight", p.cell_conv.weight);
    params.emplace_back(prefix + ".cell.bias", p.cell_conv.bias);
  } else {
    params.emplace_back(prefix + ".change.weight", p.change_det_tconv.weight);
    params.emplace_back(prefix + ".change.bias", p.change_det_tconv.bias);
    params.emplace_back(prefix + ".cell.weight", p.cell_tconv.weight);
    params.emplace_back(prefix + ".cell.bias", p.cell_tconv.bias);
  }
  params.emplace_back(prefix + ".born.weight", p.born_conv.weight);
  params.emplace_back(prefix + ".born.bias", p.born_conv.bias);
  if (p.bn) {
    params.emplace_back(prefix + ".bn.gamma", p.bn->gamma);
    params.emplace_back(prefix + ".bn.beta", p.bn->beta);
  }
}

void collect_convf(const std::string& prefix, const std::vector<ConvFParams>& fs,
                   std::vector<std::pair<std::string, Tensor>>& params) {
  for (std::size_t j = 0; j < fs.size(); ++j) {
    const std::string base = prefix + ".convf" + std::to_string(j);
    params.emplace_back(base + ".expand.weight", fs[j].expand.weight);
    params.emplace_back(base + ".expand.bias", fs[j].expand.bias);
    params.emplace_back(base + ".reduce.weight", fs[j].reduce.weight);
    params.emplace_back(base + ".reduce.bias", fs[j].reduce.bias);
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> SimpleGrowthModel::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> params;
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    const std::string prefix = "enc" + std::to_string(i);
    collect_block(prefix, enc_blocks_[i], params);
    collect_convf(prefix, enc_convf_[i], params);
  }
  params.emplace_back("enc_fc.weight", enc_fc_.weight);
  params.emplace_back("enc_fc.bias", enc_fc_.bias);
  params.emplace_back("dec_fc.weight", dec_fc_.weight);
  params.emplace_back("dec_fc.bias", dec_fc_.bias);
  for (i64 i = cfg_.levels() - 1; i >= 0; --i) {
    const std::string prefix = "dec" + std::to_string(i);
    collect_convf(prefix, dec_convf_[static_cast<std::size_t>(i)], params);
    collect_block(prefix, dec_blocks_[static_cast<std::size_t>(i)], params);
  }
  return params;
}

std::vector<std::pair<std::string, Tensor>> SimpleGrowthModel::named_buffers() const {
  std::vector<std::pair<std::string, Tensor>> buffers;
  const auto add_bn = [&](const std::string& prefix, const GrowthBlockParams& p) {
    if (p.bn) {
      buffers.emplace_back(prefix + ".bn.running_mean", p.bn->running_mean);
      buffers.emplace_back(prefix + ".bn.running_var", p.bn->running_var);
    }
  };
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
    add_bn("enc" + std::to_string(i), enc_blocks_[i]);
  }
  for (i64 i = cfg_.levels() - 1; i >= 0; --i) {
    add_bn("dec" + std::to_string(i), dec_blocks_[static_cast<std::size_t>(i)]);
  }
  return buffers;
}

// ---- checkpoint IO --------------------------------------------------------------

namespace {

using wire::append_tensor_entry;
using wire::append_text_entry;
using wire::entry_to_tensor;
using wire::put_u32;
using wire::read_entry;
using wire::Reader;

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void load_into_tensor(const wire::Entry& e, Tensor& t) {
  const std::uint8_t expect_tag =
      t.dtype() == DType::F32 ? wire::kTagF32 : wire::kTagF64;
  if (e.tag != expect_tag) {
    throw FormatError("checkpoint entry \"" + e.name + "\": dtype tag " +
                      std::to_string(e.tag) + " does not match model dtype");
  }
  if (e.shape != t.shape()) {
    throw FormatError("checkpoint entry \"" + e.name + "\": shape " +
                      shape_str(e.shape) + " does not match model shape " +
                      shape_str(t.shape()));
  }
  std::memcpy(t.impl()->data.data(), e.payload.data(), e.payload.size());
}

}  // namespace

void SimpleGrowthModel::save_checkpoint(const std::string& path, i64 step,
                                        std::span<const Tensor> optimizer_state)
    const {
  const auto params = named_parameters();
  const auto buffers = named_buffers();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(1 + params.size() + buffers.size()));
  append_text_entry(out, "__config__", cfg_.serialize());
  for (const auto& [name, t] : params) append_tensor_entry(out, name, t);
  for (const auto& [name, t] : buffers) append_tensor_entry(out, name, t);
  put_u32(out, static_cast<std::uint32_t>(step));
  if (!optimizer_state.empty()) {
    put_u32(out, static_cast<std::uint32_t>(optimizer_state.size()));
    for (std::size_t i = 0; i < optimizer_state.size(); ++i) {
      append_tensor_entry(out, "opt" + std::to_string(i), optimizer_state[i]);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open \"" + path + "\" for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to \"" + path + "\"");
}

SimpleGrowthModel SimpleGrowthModel::load_checkpoint(
    const std::string& path, i64* step, std::vector<Tensor>* optimizer_state) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open \"" + path + "\" for reading");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)),
                        std::istreambuf_iterator<char>());
  Reader r(std::move(buf));

  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file (bad magic)", 0);
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32("entry count");
  if (count < 1) throw FormatError("checkpoint has no entries", 8);

  wire::Entry config_entry = read_entry(r);
  if (config_entry.name != "__config__" || config_entry.tag != wire::kTagU8) {
    throw FormatError("first checkpoint entry must be the config echo", 12);
  }
  SimpleGrowthConfig cfg = SimpleGrowthConfig::parse(config_entry.payload);
  SimpleGrowthModel model(cfg, 0);

  auto params = model.named_parameters();
  auto buffers = model.named_buffers();
  if (count != 1 + params.size() + buffers.size()) {
    throw FormatError("checkpoint entry count " + std::to_string(count) +
                      " does not match the " +
                      std::to_string(1 + params.size() + buffers.size()) +
                      " entries implied by its config");
  }
  for (auto& [name, t] : params) {
    wire::Entry e = read_entry(r);
    if (e.name != name) {
      throw FormatError("checkpoint entry \"" + e.name + "\" where \"" + name +
                        "\" was expected");
    }
    load_into_tensor(e, t);
  }
  for (auto& [name, t] : buffers) {
    wire::Entry e = read_entry(r);
    if (e.name != name) {
      throw FormatError("checkpoint entry \"" + e.name + "\" where \"" + name +
                        "\" was expected");
    }
    load_into_tensor(e, t);
  }

  const std::uint32_t step_u32 = r.u32("step counter");
  if (step) *step = static_cast<i64>(step_u32);

  if (optimizer_state) optimizer_state->clear();
  if (!r.at_end()) {
    const std::uint32_t opt_count = r.u32("optimizer entry count");
    std::vector<Tensor> opt;
    opt.reserve(opt_count);
    for (std::uint32_t i = 0; i < opt_count; ++i) {
      opt.push_back(entry_to_tensor(read_entry(r)));
    }
    if (!r.at_end()) {
      throw FormatError("trailing bytes after optimizer section", r.offset());
    }
    if (optimizer_state) *optimizer_state = std::move(opt);
  }
  return model;
}

}  // namespace sg
