#include "sg/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sg/error.hpp"

namespace sg {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_paths(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream vs(value);
  std::string item;
  while (std::getline(vs, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_paths(const std::vector<std::string>& paths) {
  std::string out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (i) out += ",";
    out += paths[i];
  }
  return out;
}

// Returns false for keys that belong to the architecture block.
bool apply_run_key(RunConfig& cfg, const std::string& key,
                   const std::string& value) {
  if (key == "epochs") {
    cfg.train.epochs = std::stoll(value);
  } else if (key == "max_iterations") {
    cfg.train.max_iterations = std::stoll(value);
  } else if (key == "batch_size") {
    cfg.train.batch_size = std::stoll(value);
  } else if (key == "lr") {
    cfg.train.lr = std::stod(value);
  } else if (key == "betas") {
    const std::size_t comma = value.find(',');
    if (comma == std::string::npos) throw std::invalid_argument(value);
    cfg.train.beta1 = std::stod(value.substr(0, comma));
    cfg.train.beta2 = std::stod(value.substr(comma + 1));
  } else if (key == "seed") {
    cfg.train.seed = std::stoull(value);
  } else if (key == "metric_interval") {
    cfg.train.metric_interval = std::stoll(value);
  } else if (key == "eval_sample_count") {
    cfg.train.eval_sample_count = std::stoll(value);
  } else if (key == "checkpoint_interval") {
    cfg.train.checkpoint_interval = std::stoll(value);
  } else if (key == "embedder") {
    try {
      cfg.train.embedder = Embedder::parse(value);
    } catch (const ConfigError&) {
      throw std::invalid_argument(value);  // reported with the line number
    }
  } else if (key == "train_data") {
    cfg.train_data = split_paths(value);
  } else if (key == "eval_data") {
    cfg.eval_data = split_paths(value);
  } else {
    return false;
  }
  return true;
}

}  // namespace

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << model.serialize();
  os << "epochs=" << train.epochs << "\n";
  os << "max_iterations=" << train.max_iterations << "\n";
  os << "batch_size=" << train.batch_size << "\n";
  os << "lr=" << format_double(train.lr) << "\n";
  os << "betas=" << format_double(train.beta1) << ","
     << format_double(train.beta2) << "\n";
  os << "seed=" << train.seed << "\n";
  os << "metric_interval=" << train.metric_interval << "\n";
  os << "eval_sample_count=" << train.eval_sample_count << "\n";
  os << "checkpoint_interval=" << train.checkpoint_interval << "\n";
  os << "embedder=" << train.embedder.describe() << "\n";
  os << "train_data=" << join_paths(train_data) << "\n";
  os << "eval_data=" << join_paths(eval_data) << "\n";
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value, got \"" + line + "\"");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (!apply_run_key(cfg, key, value) &&
          !apply_config_key(cfg.model, key, value)) {
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
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config file \"" + path + "\"");
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

}  // namespace sg
