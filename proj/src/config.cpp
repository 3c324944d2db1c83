#include <coculture/config.hpp>

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace coculture::harness {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config " + path.string() + ":" +
                               std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
}

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

void Config::apply(plant::PlantParams& p) const {
  p.mu1_star = get_double("plant.mu1_star", p.mu1_star);
  p.mu2_star = get_double("plant.mu2_star", p.mu2_star);
  p.k1 = get_double("plant.k1", p.k1);
  p.k2 = get_double("plant.k2", p.k2);
  p.s_in = get_double("plant.s_in", p.s_in);
  p.tau = get_double("plant.tau", p.tau);
  p.d_min = get_double("plant.d_min", p.d_min);
  p.d_max = get_double("plant.d_max", p.d_max);
  p.x_min = get_double("plant.x_min", p.x_min);
  p.x_max = get_double("plant.x_max", p.x_max);
  p.meas_noise_var = get_double("plant.meas_noise_var", p.meas_noise_var);
}

void Config::apply(observer::EkfConfig& c) const {
  c.q = get_double("ekf.q", c.q);
  c.r = get_double("ekf.r", c.r);
  c.p0 = get_double("ekf.p0", c.p0);
}

void Config::apply(rl::TrainConfig& c) const {
  c.episodes = get_int("train.episodes", c.episodes);
  c.steps_per_episode = get_int("train.steps_per_episode", c.steps_per_episode);
  c.learning_rate = get_double("train.learning_rate", c.learning_rate);
  c.gamma = get_double("train.gamma", c.gamma);
  c.batch_size = get_int("train.batch_size", c.batch_size);
  c.target_sync_period = get_int("train.target_sync_period",
                                 c.target_sync_period);
  c.eps_start = get_double("train.eps_start", c.eps_start);
  c.eps_end = get_double("train.eps_end", c.eps_end);
  c.growth_sigma_frac = get_double("train.growth_sigma_frac",
                                   c.growth_sigma_frac);
  c.meas_noise_var = get_double("train.meas_noise_var", c.meas_noise_var);
  c.reward_width = get_double("train.reward_width", c.reward_width);
  c.penalty = get_double("train.penalty", c.penalty);
  c.reward_scale = get_double("train.reward_scale", c.reward_scale);
  c.eps_decay_fraction = get_double("train.eps_decay_fraction",
                                    c.eps_decay_fraction);
  c.warmup_transitions = get_int("train.warmup_transitions",
                                 c.warmup_transitions);
  c.grad_clip_norm = get_double("train.grad_clip_norm", c.grad_clip_norm);
  c.target_soft_tau = get_double("train.target_soft_tau", c.target_soft_tau);
  c.target_value_cap = get_double("train.target_value_cap", c.target_value_cap);
  c.validation_period = get_int("train.validation_period", c.validation_period);
  const int cap = get_int("train.replay_capacity",
                          static_cast<int>(c.replay_capacity));
  c.replay_capacity = static_cast<std::size_t>(cap);
}

std::string Config::hash() const {
  if (kv_.empty()) return "default";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [k, v] : kv_) {
    eat(k);
    eat("=");
    eat(v);
    eat("\n");
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace coculture::harness
