#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sg/layers.hpp"
#include "sg/tensor.hpp"

namespace sg {

// Set of spatial offsets defining which neighbors feed the environment
// computation. Row k shifts the map right by offsets[k][0] and down by
// offsets[k][1] before the shared environment convolution is applied.
struct Topology {
  std::vector<std::array<std::int64_t, 2>> offsets;

  std::int64_t size() const { return static_cast<std::int64_t>(offsets.size()); }

  // The 8-neighborhood: (1,0) (-1,0) (0,1) (0,-1) (1,1) (1,-1) (-1,1) (-1,-1).
  static Topology eight_neighborhood();

  // Text form used in config files: "(1,0);(-1,0);...".
  static Topology parse(const std::string& text);
  std::string serialize() const;
};

// Rows must be distinct and there must be at least one.
void validate_topology(const Topology& topo);

enum class GrowthMode { Merge, Div };

// One propagation block. Merge mode halves the spatial extents with strided
// convolutions, div mode doubles them with transposed ones; the gate
// (change_det) and the cell update always produce matching shapes.
// Depending on mode, exactly one of change_det / cell pair of fields is used.
struct GrowthBlockParams {
  GrowthMode mode = GrowthMode::Merge;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t dtype_channels = 3;  // leading "type" channels fed to the gate
  Topology topology;

  Conv2dParams compenv_conv;  // in_channels -> 1, 3x3 stride 1 pad 1
  Conv2dParams change_det_conv;     // merge: (dtype+Nj) -> out, 4x4 stride 2 pad 1
  ConvT2dParams change_det_tconv;   // div variant
  Conv2dParams cell_conv;           // merge: in -> out, 4x4 stride 2 pad 1
  ConvT2dParams cell_tconv;         // div variant
  Conv2dParams born_conv;  // out -> out, 3x3 stride 1 pad 1
  std::optional<BatchNorm2dParams> bn;  // applied to the cell output when present
};

// Validates channel wiring, kernel geometry and topology; throws ConfigError.
void validate_growth_block(const GrowthBlockParams& p);

GrowthBlockParams make_growth_block(GrowthMode mode, std::int64_t in_channels,
                                    std::int64_t out_channels,
                                    std::int64_t dtype_channels,
                                    const Topology& topology, bool with_bn,
                                    std::uint64_t seed, DType dtype = DType::F32,
                                    double bn_momentum = 0.1, double bn_eps = 1e-5);

// Environment tensor (B, Nj, H, W): channel k holds the shared single-output
// convolution applied to x rolled right by offsets[k][0] and up by
// offsets[k][1] (cyclic boundaries).
Tensor compenv(const Tensor& x, const Topology& topo, const Conv2dParams& conv);

// Gated update: x' = cell(x) (through BN when present), born = born_conv(x'),
// y = x'*(1-CHANGE) + CHANGE*born with CHANGE = sigmoid(change_det(concat of
// the leading dtype channels of x and ENV)), then channels 0..3 of y replaced
// by their sigmoid.
Tensor growth(const Tensor& x, const Tensor& env, GrowthBlockParams& p,
              bool training = false);

// compenv followed by growth.
Tensor pattern_block_forward(const Tensor& x, GrowthBlockParams& p,
                             bool training = false);

// Size-preserving feature mixer: transposed 3x3 conv (pad 0, grows each
// spatial extent by 2), tanh, 3x3 conv (pad 0, shrinks by 2), tanh.
struct ConvFParams {
  ConvT2dParams expand;  // in -> out, 3x3 stride 1 pad 0
  Conv2dParams reduce;   // out -> out, 3x3 stride 1 pad 0
};

void validate_convf(const ConvFParams& p);

ConvFParams make_convf(std::int64_t in_channels, std::int64_t out_channels,
                       std::uint64_t seed, DType dtype = DType::F32);

Tensor convf_forward(const Tensor& x, const ConvFParams& p);

}  // namespace sg
