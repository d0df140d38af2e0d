#include "mdnet/config.hpp"

#include <cmath>
#include <fstream>

namespace mdnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  c.values_ = {
      // training
      {"lambda_m", "1"},
      {"lambda_d", "1"},
      {"batch_size", "16"},
      {"l0", "0.01"},
      {"epochs", "100"},
      {"b", "0.01"},
      {"weight_decay", "1e-6"},
      {"seed", "0"},
      {"reweight", "true"},
      {"max_steps", "0"},
      {"teacher_seed", "1"},
      {"skip_bad_samples", "false"},
      // detector and features
      {"fast_threshold", "0.08"},
      {"nms_radius", "3"},
      {"max_points", "1000"},
      {"filter_static", "false"},
      {"min_static_prob", "0"},
      {"match_ratio", "0.8"},
      {"mutual_check", "true"},
      // robust estimation and trajectories
      {"ransac_threshold", "1.0"},
      {"ransac_max_iters", "2000"},
      {"ransac_confidence", "0.999"},
      {"ransac_seed", "0"},
      {"max_time_diff", "0.05"},
      // paths (empty: not set)
      {"manifest", ""},
      {"teacher_checkpoint", ""},
      {"label_mapping", ""},
  };
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::load(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  load(in, path.string());
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

std::size_t Config::get_size(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s.front() == '-') {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

train::TrainConfig Config::train_config() const {
  train::TrainConfig t;
  t.lambda_m = get_double("lambda_m");
  t.lambda_d = get_double("lambda_d");
  t.batch_size = get_size("batch_size");
  t.l0 = get_double("l0");
  t.epochs = get_size("epochs");
  t.b = get_double("b");
  t.weight_decay = get_double("weight_decay");
  t.seed = get_size("seed");
  t.reweight = get_bool("reweight");
  t.max_steps = get_size("max_steps");
  return t;
}

features::DetectorConfig Config::detector_config() const {
  return {get_double("fast_threshold"), get_size("nms_radius"), get_size("max_points")};
}

features::MatchConfig Config::match_config() const {
  return {get_double("match_ratio"), get_bool("mutual_check")};
}

geometry::RansacConfig Config::ransac_config() const {
  geometry::RansacConfig r;
  r.threshold_px = get_double("ransac_threshold");
  r.max_iters = get_size("ransac_max_iters");
  r.confidence = get_double("ransac_confidence");
  r.seed = get_size("ransac_seed");
  return r;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& kv : values_) out.push_back(kv.first);
  return out;
}

}  // namespace mdnet
