#include <coculture/control.hpp>

#include <coculture/rl.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coculture::control {

DesiredSplit desired_split(const Reference& ref) {
  if (!(ref.r_d > 0))
    throw std::invalid_argument("desired_split: r_d must be positive");
  return {ref.od_d / (1.0 + ref.r_d), ref.r_d * ref.od_d / (1.0 + ref.r_d)};
}

Region classify_region(double x1, double x2, double x1_d, double x2_d) {
  const bool above1 = x1 > x1_d;
  const bool above2 = x2 > x2_d;
  if (above2) return above1 ? Region::r2 : Region::r1;
  return above1 ? Region::r4 : Region::r3;
}

plant::ControlInput switching_law(Region region, const SwitchingGains& gains) {
  switch (region) {
    case Region::r1: return {gains.d1_plus, 0.0, 0.0};
    case Region::r2: return {gains.d1_minus, 0.0, 0.0};
    case Region::r3: return {0.0, 0.0, 0.0};
    case Region::r4: return {0.0, gains.d2_minus, 0.0};
  }
  throw std::logic_error("switching_law: bad region");
}

void MixingErrorHistory::push(double e1, double e2) {
  if (size_ == 5) {
    for (std::size_t i = 0; i + 2 < buf_.size(); ++i) buf_[i] = buf_[i + 2];
  } else {
    ++size_;
  }
  buf_[2 * (size_ - 1)] = e1;
  buf_[2 * (size_ - 1) + 1] = e2;
}

std::array<double, 10> MixingErrorHistory::features() const {
  if (size_ == 0)
    throw std::logic_error("MixingErrorHistory: no errors pushed yet");
  std::array<double, 10> out{};
  const std::size_t pad = 5 - size_;
  for (std::size_t k = 0; k < 5; ++k) {
    const std::size_t src = (k < pad) ? 0 : k - pad;
    out[2 * k] = buf_[2 * src];
    out[2 * k + 1] = buf_[2 * src + 1];
  }
  return out;
}

plant::ControlInput dqn_mixing_action(const MixingErrorHistory& history,
                                      const rl::QNetwork& net) {
  const auto f = history.features();
  const auto q = rl::q_forward(net, f);
  const auto [d1, d2] = rl::mixing_action(rl::argmax(q));
  return {d1, d2, 0.0};
}

PiResult pi_reservoir(const PiState& pi, double y2, double x2r_d, double dt,
                      double u_min, double u_max) {
  if (!(dt > 0)) throw std::invalid_argument("pi_reservoir: dt must be > 0");
  const double e = y2 - x2r_d;
  const double raw = pi.kp * e + pi.ki * pi.integral;
  const double u = std::clamp(raw, u_min, u_max);

  PiResult res;
  res.state = pi;
  // Conditional integration: hold the integral while the output is pinned to
  // a bound and the error keeps pushing into it.
  const bool windup = (raw > u_max && e > 0) || (raw < u_min && e < 0);
  if (!windup) res.state.integral += e * dt;
  res.state.u_prev = u;
  res.d_r2 = u;
  return res;
}

double mpc_reservoir(double x2r, double x2r_d, const plant::PlantParams& p,
                     int horizon, double dt) {
  if (x2r < 0) throw std::invalid_argument("mpc_reservoir: negative state");
  double best_cost = 0.0;
  int best_action = 0;
  for (int a = 0; a < rl::kReservoirActions; ++a) {
    const double u = rl::reservoir_action(a);
    // Constant action over the horizon; exact propagation of the linear
    // abundant-substrate reservoir model.
    const double growth = std::exp((p.mu2_star - u / p.tau) * dt);
    double x = x2r;
    double cost = 0.0;
    for (int k = 0; k < horizon; ++k) {
      cost += (x - x2r_d) * (x - x2r_d);
      x *= growth;
    }
    cost += (x - x2r_d) * (x - x2r_d);  // terminal term
    if (a == 0 || cost < best_cost) {
      best_cost = cost;
      best_action = a;
    }
  }
  return rl::reservoir_action(best_action);
}

double dqn_reservoir_action(double x2r, double x2r_d, const rl::QNetwork& net) {
  const double features[2] = {x2r, x2r_d};
  const auto q = rl::q_forward(net, features);
  return rl::reservoir_action(rl::argmax(q));
}

double compensate_reservoir(double d_r2, double d2, double d_min,
                            double d_max) {
  return std::clamp(d_r2 - d2, d_min, d_max);
}

double recovery_gate(double x2r, double d2_requested, RecoveryGate& gate) {
  gate.open = x2r >= gate.threshold;
  return gate.open ? d2_requested : 0.0;
}

}  // namespace coculture::control
