#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdnet/features.hpp"
#include "mdnet/geometry.hpp"
#include "mdnet/training.hpp"

namespace mdnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` settings, one per line, '#' comments. Every key has a
/// default; an unknown key is an error.
class Config {
 public:
  static Config defaults();

  void set(const std::string& key, const std::string& value);
  void load(std::istream& in, const std::string& source);
  void load_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  train::TrainConfig train_config() const;
  features::DetectorConfig detector_config() const;
  features::MatchConfig match_config() const;
  geometry::RansacConfig ransac_config() const;

  // `key = value` lines in key order.
  std::string dump() const;
  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mdnet
