#pragma once

#include <coculture/observer.hpp>
#include <coculture/plant.hpp>
#include <coculture/rl.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace coculture::harness {

// Flat key-value configuration ("section.key = value", '#' comments).
class Config {
 public:
  Config() = default;

  static Config load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;

  // Overlay matching keys onto the given defaults.
  void apply(plant::PlantParams& p) const;
  void apply(observer::EkfConfig& c) const;
  void apply(rl::TrainConfig& c) const;

  // FNV-1a over the canonical sorted "key=value" serialization; "default"
  // for an empty config.
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace coculture::harness
