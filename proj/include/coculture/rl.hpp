#pragma once

#include <coculture/control.hpp>
#include <coculture/plant.hpp>
#include <coculture/rng.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace coculture::rl {

// Dense ReLU network with a linear output layer. Parameters live in one flat
// vector (per layer: row-major weights, then biases) so the optimizer and the
// weight file treat them uniformly.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::vector<int> dims);  // zero-initialized

  static QNetwork he_init(std::vector<int> dims, Rng& rng);

  std::vector<double> forward(std::span<const double> input) const;

  // Gradient of sum_j output_grad[j] * Q_j(input) w.r.t. every parameter.
  std::vector<double> backward(std::span<const double> input,
                               std::span<const double> output_grad) const;

  const std::vector<int>& dims() const { return dims_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

 private:
  std::vector<int> dims_;
  std::vector<double> params_;
};

std::vector<double> q_forward(const QNetwork& net,
                              std::span<const double> features);

// Index of the maximal value; ties break to the lowest index.
int argmax(std::span<const double> values);

// Mixing-chamber action grid: {0, 0.01, 0.02} x {0, 0.02}, (d1, d2) pairs.
inline constexpr int kMixingActions = 6;
std::pair<double, double> mixing_action(int index);

// Reservoir action grid: 17 values uniformly spaced over [0, 0.02].
inline constexpr int kReservoirActions = 17;
double reservoir_action(int index);

struct Transition {
  std::vector<double> features;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_features;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void push(Transition t);
  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }

  // Uniform sample of `count` distinct indices (partial Fisher-Yates).
  std::vector<const Transition*> sample(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> buf_;
};

enum class EnvKind { mixing, reservoir };

struct TrainConfig {
  int episodes = 200;
  int steps_per_episode = 180;
  double dt = 1.0;  // minutes
  double learning_rate = 0.001;
  double gamma = 0.95;
  int batch_size = 64;
  int target_sync_period = 100;  // hard-sync period when soft updates are off
  double target_soft_tau = 0.01;  // Polyak factor per gradient step; 0 = hard
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.5;  // share of training over which eps decays
  int warmup_transitions = 500;  // replay fill before updates begin
  double grad_clip_norm = 0.0;   // global-norm clip; 0 disables
  // Upper bound applied to bootstrapped next-state values. Both reward
  // functions are non-positive, so the true action-value never exceeds zero;
  // capping the bootstrap there blocks the usual max-operator optimism.
  double target_value_cap = 0.0;
  // Greedy validation rollouts on nominal parameters every
  // validation_period episodes; the best-scoring snapshot is returned.
  // 0 disables selection and returns the final weights.
  int validation_period = 5;
  double growth_sigma_frac = 0.15;
  double meas_noise_var = 0.001;
  double reward_width = 2.0;
  double penalty = -100.0;
  // Positive factor applied to rewards inside the TD pipeline only; greedy
  // behavior is invariant to it. Keeps Q targets at a magnitude the fixed
  // learning rate can actually fit within the training budget.
  double reward_scale = 1.0;
  std::size_t replay_capacity = 36000;
  std::vector<double> mixing_ratio_set = {0.5, 1.0, 1.5};
  double mixing_od_d = 0.7;
  double mixing_x2r_setpoint = 0.85;
  std::vector<double> reservoir_ref_set = {0.2, 0.3, 0.4, 0.5, 0.6,
                                           0.7, 0.8, 0.9, 1.0};

  void validate() const;
};

// Setpoint tracking reward: -100 tanh^2(w |e|) per species plus a -100
// penalty if either species sits below the viability bound.
double mixing_reward(double x1, double x2, double x1_d, double x2_d,
                     double x_min, double width = 2.0);

double reservoir_reward(double x2r, double x2r_d);

struct EpisodeSetup {
  plant::PlantParams params;
  control::Reference ref;
  plant::PlantState init;
};

// Domain randomization for one training episode: growth rates drawn from
// N(mu_nominal, (frac*mu_nominal)^2) truncated to stay positive and ordered,
// references drawn from the configured discrete sets, and each initial state
// variable drawn independently from the grid of setpoint split values.
EpisodeSetup randomize_episode(const plant::PlantParams& nominal, EnvKind env,
                               const TrainConfig& cfg, Rng& rng);

struct TrainResult {
  QNetwork net;
  std::vector<double> episode_returns;
};

// Per-environment training defaults (reward scaling differs between the two
// chambers; everything else is shared).
TrainConfig default_train_config(EnvKind env);

// Standard DQN: epsilon-greedy rollouts on the simplified model, uniform
// replay, TD targets from a periodically synchronized target network, Adam
// updates. Deterministic for a given (config, seed). Throws on divergence.
TrainResult train_dqn(EnvKind env, const plant::PlantParams& nominal,
                      const TrainConfig& cfg, std::uint64_t seed);

// Text weight format: "qnet 1", the layer dims, then per layer the row-major
// weights and biases at full precision.
void save_qnetwork(const QNetwork& net, const std::filesystem::path& path);
QNetwork load_qnetwork(const std::filesystem::path& path);

}  // namespace coculture::rl
