#pragma once

#include <string>
#include <vector>

#include "sg/model.hpp"
#include "sg/train.hpp"

namespace sg {

// A full run described by one flat key=value file: architecture, training
// schedule, data paths. '#' starts a comment, blank lines are ignored, keys
// left out keep their defaults. Unknown keys are rejected with their line
// number. serialize() echoes every effective value, defaults included, so the
// log header of a run is itself a config file that replays it exactly.
struct RunConfig {
  SimpleGrowthConfig model;
  TrainConfig train;
  std::vector<std::string> train_data;  // CIFAR batch files, in order
  std::vector<std::string> eval_data;   // may be empty: metric columns go NaN

  std::string serialize() const;
  static RunConfig parse(const std::string& text);  // throws ConfigError
  static RunConfig load(const std::string& path);   // adds IoError on read
};

}  // namespace sg
