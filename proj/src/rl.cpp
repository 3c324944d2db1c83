#include <coculture/rl.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace coculture::rl {

namespace {

std::size_t param_count(const std::vector<int>& dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
  return n;
}

}  // namespace

QNetwork::QNetwork(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("QNetwork: need >= 2 dims");
  for (int d : dims_)
    if (d <= 0) throw std::invalid_argument("QNetwork: non-positive dim");
  params_.assign(param_count(dims_), 0.0);
}

QNetwork QNetwork::he_init(std::vector<int> dims, Rng& rng) {
  QNetwork net(std::move(dims));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    const int in = net.dims_[l];
    const int out = net.dims_[l + 1];
    const double sd = std::sqrt(2.0 / in);
    for (int i = 0; i < out * in; ++i)
      net.params_[off + i] = sd * rng.next_gaussian();
    off += static_cast<std::size_t>(out) * in + out;  // biases stay zero
  }
  return net;
}

std::vector<double> QNetwork::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != dims_.front())
    throw std::invalid_argument("QNetwork::forward: input size mismatch");
  std::vector<double> act(input.begin(), input.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    std::vector<double> next(out);
    for (int o = 0; o < out; ++o) {
      double v = params_[off + static_cast<std::size_t>(out) * in + o];  // bias
      const double* w = &params_[off + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) v += w[i] * act[i];
      next[o] = v;
    }
    const bool hidden = l + 2 < dims_.size();
    if (hidden)
      for (double& v : next) v = std::max(v, 0.0);
    act = std::move(next);
    off += static_cast<std::size_t>(out) * in + out;
  }
  return act;
}

std::vector<double> QNetwork::backward(std::span<const double> input,
                                       std::span<const double> output_grad) const {
  if (static_cast<int>(output_grad.size()) != dims_.back())
    throw std::invalid_argument("QNetwork::backward: grad size mismatch");

  // Forward pass keeping pre/post activations per layer.
  std::vector<std::vector<double>> acts;  // post-activation, acts[0] = input
  acts.emplace_back(input.begin(), input.end());
  std::vector<std::vector<double>> pre;  // pre-activation per affine layer
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    std::vector<double> z(out);
    for (int o = 0; o < out; ++o) {
      double v = params_[off + static_cast<std::size_t>(out) * in + o];
      const double* w = &params_[off + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) v += w[i] * acts[l][i];
      z[o] = v;
    }
    pre.push_back(z);
    const bool hidden = l + 2 < dims_.size();
    if (hidden)
      for (double& v : z) v = std::max(v, 0.0);
    acts.push_back(std::move(z));
    off += static_cast<std::size_t>(out) * in + out;
  }

  std::vector<double> grads(params_.size(), 0.0);
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = dims_.size() - 1; l-- > 0;) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    off -= static_cast<std::size_t>(out) * in + out;
    const bool hidden = l + 2 < dims_.size();
    if (hidden)
      for (int o = 0; o < out; ++o)
        if (pre[l][o] <= 0.0) delta[o] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      double* gw = &grads[off + static_cast<std::size_t>(o) * in];
      for (int i = 0; i < in; ++i) gw[i] += d * acts[l][i];
      grads[off + static_cast<std::size_t>(out) * in + o] += d;
    }
    if (l > 0) {
      std::vector<double> prev(in, 0.0);
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        const double* w = &params_[off + static_cast<std::size_t>(o) * in];
        for (int i = 0; i < in; ++i) prev[i] += d * w[i];
      }
      delta = std::move(prev);
    }
  }
  return grads;
}

std::vector<double> q_forward(const QNetwork& net,
                              std::span<const double> features) {
  for (double f : features)
    if (!std::isfinite(f))
      throw std::invalid_argument("q_forward: non-finite feature");
  return net.forward(features);
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty");
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::pair<double, double> mixing_action(int index) {
  static constexpr double kD1[] = {0.0, 0.01, 0.02};
  static constexpr double kD2[] = {0.0, 0.02};
  if (index < 0 || index >= kMixingActions)
    throw std::out_of_range("mixing_action: bad index");
  return {kD1[index / 2], kD2[index % 2]};
}

double reservoir_action(int index) {
  if (index < 0 || index >= kReservoirActions)
    throw std::out_of_range("reservoir_action: bad index");
  return 0.02 * index / (kReservoirActions - 1);
}

void ReplayBuffer::push(Transition t) {
  if (buf_.size() < capacity_) {
    buf_.push_back(std::move(t));
  } else {
    buf_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t count,
                                                    Rng& rng) const {
  if (count > buf_.size())
    throw std::invalid_argument("ReplayBuffer::sample: not enough samples");
  std::vector<std::size_t> idx(buf_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Transition*> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.next_below(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(&buf_[idx[i]]);
  }
  return out;
}

void TrainConfig::validate() const {
  if (episodes < 0 || steps_per_episode <= 0)
    throw std::invalid_argument("TrainConfig: bad episode counts");
  if (!(gamma > 0 && gamma < 1))
    throw std::invalid_argument("TrainConfig: gamma outside (0,1)");
  if (!(learning_rate > 0))
    throw std::invalid_argument("TrainConfig: bad learning rate");
  if (batch_size <= 0 || replay_capacity < static_cast<std::size_t>(batch_size))
    throw std::invalid_argument("TrainConfig: bad batch/replay sizes");
}

double mixing_reward(double x1, double x2, double x1_d, double x2_d,
                     double x_min, double width) {
  auto term = [&](double e) {
    const double th = std::tanh(width * std::fabs(e));
    return -100.0 * th * th;
  };
  double r = term(x1 - x1_d) + term(x2 - x2_d);
  if (x1 < x_min || x2 < x_min) r += -100.0;
  return r;
}

double reservoir_reward(double x2r, double x2r_d) {
  const double e = x2r - x2r_d;
  return -e * e;
}

EpisodeSetup randomize_episode(const plant::PlantParams& nominal, EnvKind env,
                               const TrainConfig& cfg, Rng& rng) {
  EpisodeSetup setup;
  setup.params = nominal;

  // Truncated Gaussian growth rates: redraw until positive and ordered.
  const double s1 = cfg.growth_sigma_frac * nominal.mu1_star;
  const double s2 = cfg.growth_sigma_frac * nominal.mu2_star;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double mu1 = nominal.mu1_star + s1 * rng.next_gaussian();
    const double mu2 = nominal.mu2_star + s2 * rng.next_gaussian();
    if (mu1 > mu2 && mu2 > 0) {
      setup.params.mu1_star = mu1;
      setup.params.mu2_star = mu2;
      break;
    }
  }

  if (env == EnvKind::mixing) {
    const auto& set = cfg.mixing_ratio_set;
    setup.ref.r_d = set[rng.next_below(set.size())];
    setup.ref.od_d = cfg.mixing_od_d;
    setup.ref.x2r_d = cfg.mixing_x2r_setpoint;
    // Each state variable starts on the split grid independently, so the
    // initial total biomass ranges well off the target.
    const double r_a = set[rng.next_below(set.size())];
    const double r_b = set[rng.next_below(set.size())];
    setup.init.x1 =
        control::desired_split({r_a, cfg.mixing_od_d, 0.8}).x1_d;
    setup.init.x2 =
        control::desired_split({r_b, cfg.mixing_od_d, 0.8}).x2_d;
    setup.init.s1 = nominal.s_in;
    setup.init.x2r = cfg.mixing_x2r_setpoint;
    setup.init.s2 = nominal.s_in;
  } else {
    const auto& set = cfg.reservoir_ref_set;
    setup.ref.x2r_d = set[rng.next_below(set.size())];
    setup.init.x2r = set[rng.next_below(set.size())];
    setup.init.s2 = nominal.s_in;
  }
  return setup;
}

namespace {

// Adam with bias correction over the flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void update(std::vector<double>& params, const std::vector<double>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1 - kBeta1) * grads[i];
      v_[i] = kBeta2 * v_[i] + (1 - kBeta2) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// Mixing-chamber training environment. The reservoir side runs the same
// loop that deployment uses (PI regulation, disturbance compensation and the
// recovery gate), so the policy experiences gate-blocked injections and
// reservoir dips rather than an idealized constant feed.
struct MixingEnv {
  explicit MixingEnv(const TrainConfig& c) : cfg(c) {}

  const TrainConfig& cfg;
  EpisodeSetup ep;
  plant::PlantState state;
  control::DesiredSplit split{};
  control::MixingErrorHistory history;
  control::PiState pi;
  control::RecoveryGate gate;

  void reset(const plant::PlantParams& nominal, Rng& rng, Rng& noise) {
    ep = randomize_episode(nominal, EnvKind::mixing, cfg, rng);
    start(noise);
  }

  void reset_fixed(const plant::PlantParams& params, double init_ratio,
                   double target_ratio, Rng& noise) {
    ep.params = params;
    ep.ref = {target_ratio, cfg.mixing_od_d, cfg.mixing_x2r_setpoint};
    const auto init_split = control::desired_split(
        {init_ratio, cfg.mixing_od_d, cfg.mixing_x2r_setpoint});
    ep.init = {};
    ep.init.x1 = init_split.x1_d;
    ep.init.x2 = init_split.x2_d;
    ep.init.s1 = params.s_in;
    ep.init.x2r = cfg.mixing_x2r_setpoint;
    ep.init.s2 = params.s_in;
    start(noise);
  }

  void start(Rng& noise) {
    state = ep.init;
    state.x2r = cfg.mixing_x2r_setpoint;
    split = control::desired_split(ep.ref);
    history.clear();
    pi = control::PiState{};
    gate = control::RecoveryGate{};
    push_errors(noise);
  }

  void push_errors(Rng& noise) {
    const double sd = std::sqrt(cfg.meas_noise_var);
    history.push(state.x1 + sd * noise.next_gaussian() - split.x1_d,
                 state.x2 + sd * noise.next_gaussian() - split.x2_d);
  }

  std::vector<double> features() const {
    const auto f = history.features();
    return {f.begin(), f.end()};
  }

  double apply(int action, Rng& noise) {
    const auto [d1, d2] = mixing_action(action);
    const double sd = std::sqrt(cfg.meas_noise_var);
    const double y2 = std::max(state.x2r + sd * noise.next_gaussian(), 0.0);
    const double d2_gated = control::recovery_gate(y2, d2, gate);
    const auto res = control::pi_reservoir(pi, y2, cfg.mixing_x2r_setpoint,
                                           cfg.dt, ep.params.d_min,
                                           ep.params.d_max);
    pi = res.state;
    const double dr = control::compensate_reservoir(
        res.d_r2, d2_gated, ep.params.d_min, ep.params.d_max);
    state = plant::step(state, {d1, d2_gated, dr}, ep.params, cfg.dt,
                        plant::Model::simplified);
    // The abundant-substrate model is only valid below x_max; keep training
    // data inside that domain instead of letting episodes grow without bound.
    state.x1 = std::min(state.x1, ep.params.x_max);
    state.x2 = std::min(state.x2, ep.params.x_max);
    state.x2r = std::min(state.x2r, ep.params.x_max);
    push_errors(noise);
    return mixing_reward(state.x1, state.x2, split.x1_d, split.x2_d,
                         ep.params.x_min, cfg.reward_width);
  }
};

struct ReservoirEnv {
  explicit ReservoirEnv(const TrainConfig& c) : cfg(c) {}

  const TrainConfig& cfg;
  EpisodeSetup ep;
  plant::PlantState state;

  void reset(const plant::PlantParams& nominal, Rng& rng, Rng&) {
    ep = randomize_episode(nominal, EnvKind::reservoir, cfg, rng);
    state = ep.init;
  }

  void reset_fixed(const plant::PlantParams& params, double init,
                   double target) {
    ep.params = params;
    ep.ref = {1.0, cfg.mixing_od_d, target};
    state = {};
    state.x2r = init;
    state.s2 = params.s_in;
  }

  std::vector<double> features_noisy(Rng& noise) const {
    const double sd = std::sqrt(cfg.meas_noise_var);
    return {state.x2r + sd * noise.next_gaussian(), ep.ref.x2r_d};
  }

  double apply(int action) {
    plant::ControlInput u{0.0, 0.0, reservoir_action(action)};
    state = plant::step(state, u, ep.params, cfg.dt,
                        plant::Model::simplified);
    return reservoir_reward(state.x2r, ep.ref.x2r_d);
  }
};

}  // namespace

TrainConfig default_train_config(EnvKind env) {
  TrainConfig cfg;
  if (env == EnvKind::mixing) cfg.reward_scale = 0.01;
  return cfg;
}

TrainResult train_dqn(EnvKind env, const plant::PlantParams& nominal,
                      const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::vector<int> dims = (env == EnvKind::mixing)
                                    ? std::vector<int>{10, 64, 64, 6}
                                    : std::vector<int>{2, 64, 64, 17};

  Rng init_rng(seed, 0);
  Rng episode_rng(seed, 1);
  Rng noise_rng(seed, 2);
  Rng explore_rng(seed, 3);
  Rng replay_rng(seed, 4);

  TrainResult result;
  result.net = QNetwork::he_init(dims, init_rng);
  if (cfg.episodes == 0) return result;

  QNetwork target = result.net;
  ReplayBuffer buffer(cfg.replay_capacity);
  Adam adam(result.net.params().size(), cfg.learning_rate);

  const int n_actions = result.net.output_size();
  const long total_steps =
      static_cast<long>(cfg.episodes) * cfg.steps_per_episode;
  const long eps_decay_steps = std::max(
      static_cast<long>(total_steps * cfg.eps_decay_fraction), 1L);
  long step_count = 0;
  long grad_steps = 0;

  MixingEnv menv(cfg);
  ReservoirEnv renv(cfg);

  // Greedy score on fixed nominal-parameter rollouts; used to pick the
  // snapshot that actually controls best rather than whatever the last
  // gradient step produced.
  MixingEnv vmenv(cfg);
  ReservoirEnv vrenv(cfg);
  auto validate = [&](const QNetwork& net) {
    double total = 0.0;
    Rng vnoise(seed, 5);  // fresh counters every call: comparable scores
    if (env == EnvKind::mixing) {
      // Transitions spanning the deployment envelope, including references
      // between the training grid points.
      static constexpr double kPairs[][2] = {
          {1.0, 0.6}, {1.0, 1.5}, {0.5, 1.0}, {1.5, 0.75}};
      for (const auto& pair : kPairs) {
        vmenv.reset_fixed(nominal, pair[0], pair[1], vnoise);
        for (int t = 0; t < 180; ++t)
          total += vmenv.apply(argmax(net.forward(vmenv.features())), vnoise);
      }
    } else {
      static constexpr double kPairs[][2] = {
          {0.8, 0.8}, {0.8, 0.65}, {0.7, 0.5}, {0.3, 0.6}};
      for (const auto& pair : kPairs) {
        vrenv.reset_fixed(nominal, pair[0], pair[1]);
        for (int t = 0; t < 180; ++t)
          total += vrenv.apply(argmax(net.forward(vrenv.features_noisy(vnoise))));
      }
    }
    return total;
  };
  QNetwork best_net = result.net;
  double best_score = -std::numeric_limits<double>::infinity();

  for (int episode = 0; episode < cfg.episodes; ++episode) {
    if (env == EnvKind::mixing)
      menv.reset(nominal, episode_rng, noise_rng);
    else
      renv.reset(nominal, episode_rng, noise_rng);

    double episode_return = 0.0;
    for (int t = 0; t < cfg.steps_per_episode; ++t) {
      const std::vector<double> features =
          (env == EnvKind::mixing) ? menv.features()
                                   : renv.features_noisy(noise_rng);

      const double frac =
          std::min(1.0, static_cast<double>(step_count) / eps_decay_steps);
      const double eps = cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
      int action;
      if (explore_rng.next_double() < eps) {
        action = static_cast<int>(explore_rng.next_below(n_actions));
      } else {
        action = argmax(result.net.forward(features));
      }

      const double reward = (env == EnvKind::mixing)
                                ? menv.apply(action, noise_rng)
                                : renv.apply(action);
      episode_return += reward;
      const std::vector<double> next_features =
          (env == EnvKind::mixing) ? menv.features()
                                   : renv.features_noisy(noise_rng);

      // Fixed-horizon regulation: episode ends are time limits, not terminal
      // states, so the TD target always bootstraps. Rewards enter the TD
      // pipeline scaled; a positive scale leaves the greedy policy unchanged
      // but keeps the regression targets within what the optimizer can reach.
      buffer.push({features, action, reward * cfg.reward_scale, next_features,
                   false});
      ++step_count;

      const std::size_t learn_start = std::max<std::size_t>(
          cfg.batch_size, static_cast<std::size_t>(cfg.warmup_transitions));
      if (buffer.size() < learn_start) continue;

      const auto batch = buffer.sample(cfg.batch_size, replay_rng);
      std::vector<double> grads(result.net.params().size(), 0.0);
      double loss = 0.0;
      for (const Transition* tr : batch) {
        const auto q_next = target.forward(tr->next_features);
        const double bootstrap =
            std::min(q_next[argmax(q_next)], cfg.target_value_cap);
        const double target_q =
            tr->reward + (tr->terminal ? 0.0 : cfg.gamma * bootstrap);
        const auto q = result.net.forward(tr->features);
        const double td = q[tr->action] - target_q;
        loss += td * td;
        std::vector<double> out_grad(n_actions, 0.0);
        out_grad[tr->action] = 2.0 * td / cfg.batch_size;
        const auto g = result.net.backward(tr->features, out_grad);
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
      }
      loss /= cfg.batch_size;
      if (!std::isfinite(loss))
        throw std::runtime_error("train_dqn: TD loss diverged at step " +
                                 std::to_string(step_count));
      if (cfg.grad_clip_norm > 0) {
        double norm_sq = 0.0;
        for (double g : grads) norm_sq += g * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip_norm) {
          const double scale = cfg.grad_clip_norm / norm;
          for (double& g : grads) g *= scale;
        }
      }
      adam.update(result.net.params(), grads);
      ++grad_steps;
      if (cfg.target_soft_tau > 0) {
        auto& tp = target.params();
        const auto& np = result.net.params();
        for (std::size_t i = 0; i < tp.size(); ++i)
          tp[i] += cfg.target_soft_tau * (np[i] - tp[i]);
      } else if (grad_steps % cfg.target_sync_period == 0) {
        target = result.net;
      }
    }
    result.episode_returns.push_back(episode_return);

    if (cfg.validation_period > 0 &&
        (episode % cfg.validation_period == cfg.validation_period - 1 ||
         episode == cfg.episodes - 1)) {
      const double score = validate(result.net);
      if (score > best_score) {
        best_score = score;
        best_net = result.net;
      }
    }
  }
  if (cfg.validation_period > 0) result.net = best_net;
  return result;
}

void save_qnetwork(const QNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "qnet 1\n";
  for (std::size_t i = 0; i < net.dims().size(); ++i)
    out << (i ? " " : "") << net.dims()[i];
  out << "\n";
  char buf[64];
  const auto& params = net.params();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < net.dims().size(); ++l) {
    const int in = net.dims()[l];
    const int out_n = net.dims()[l + 1];
    for (int o = 0; o < out_n; ++o) {
      for (int i = 0; i < in; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g",
                      params[off + static_cast<std::size_t>(o) * in + i]);
        out << (i ? " " : "") << buf;
      }
      out << "\n";
    }
    for (int o = 0; o < out_n; ++o) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    params[off + static_cast<std::size_t>(out_n) * in + o]);
      out << (o ? " " : "") << buf;
    }
    out << "\n";
    off += static_cast<std::size_t>(out_n) * in + out_n;
  }
}

QNetwork load_qnetwork(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "qnet" || version != 1)
    throw std::runtime_error("bad weight file header in " + path.string());
  std::string line;
  std::getline(in, line);  // consume end of header line
  if (!std::getline(in, line))
    throw std::runtime_error("missing dims in " + path.string());
  std::vector<int> dims;
  {
    std::stringstream ss(line);
    int d;
    while (ss >> d) dims.push_back(d);
  }
  QNetwork net(dims);
  for (double& p : net.params())
    if (!(in >> p))
      throw std::runtime_error("truncated weight file " + path.string());
  return net;
}

}  // namespace coculture::rl
