#pragma once

#include <coculture/plant.hpp>

#include <array>
#include <cstddef>

namespace coculture::rl {
class QNetwork;
}

namespace coculture::control {

// Setpoints: composition ratio r_d = x2/x1, total biomass, reservoir density.
struct Reference {
  double r_d = 1.0;
  double od_d = 0.7;
  double x2r_d = 0.8;
};

struct DesiredSplit {
  double x1_d = 0.0;
  double x2_d = 0.0;
};

// Per-species targets equivalent to (r_d, od_d):
// x1_d = od_d / (1 + r_d), x2_d = r_d * od_d / (1 + r_d).
DesiredSplit desired_split(const Reference& ref);

enum class Region { r1, r2, r3, r4 };

// Quadrant of (x1, x2) relative to the desired split. Ties resolve to the
// "below" side, so the setpoint itself classifies as r3.
Region classify_region(double x1, double x2, double x1_d, double x2_d);

struct SwitchingGains {
  double d1_plus = 0.02;
  double d1_minus = 0.02;
  double d2_minus = 0.02;
};

// R1 -> (D1+, 0), R2 -> (D1-, 0), R3 -> (0, 0), R4 -> (0, D2-).
plant::ControlInput switching_law(Region region, const SwitchingGains& gains);

// Rolling window of the 5 latest (x1 - x1_d, x2 - x2_d) error pairs, padded
// at the start by repeating the oldest entry. Feature order is oldest first.
class MixingErrorHistory {
 public:
  void push(double e1, double e2);
  void clear() { size_ = 0; }
  std::array<double, 10> features() const;
  bool empty() const { return size_ == 0; }

 private:
  std::array<double, 10> buf_{};
  std::size_t size_ = 0;  // number of valid pairs, <= 5
};

// Greedy action of the mixing-chamber Q-network over the 6-action grid
// {0, 0.01, 0.02} x {0, 0.02}; ties break to the lowest action index.
plant::ControlInput dqn_mixing_action(const MixingErrorHistory& history,
                                      const rl::QNetwork& net);

struct PiState {
  double kp = 2.0;
  double ki = 0.05;  // per minute
  double integral = 0.0;
  double u_prev = 0.0;
};

struct PiResult {
  double d_r2 = 0.0;
  PiState state;
};

// Discrete PI with conditional-integration anti-windup. Positive error
// (biomass above setpoint) drives positive dilution.
PiResult pi_reservoir(const PiState& pi, double y2, double x2r_d, double dt,
                      double u_min = 0.0, double u_max = 0.02);

// Receding-horizon enumeration: the 17-value action grid held constant over
// N steps of the simplified reservoir model; returns the cost-minimizing
// action (quadratic deviation per step plus a terminal term).
double mpc_reservoir(double x2r, double x2r_d, const plant::PlantParams& p,
                     int horizon = 5, double dt = 1.0);

// Greedy action of the reservoir Q-network on features (x2r, x2r_d) over the
// 17-action grid in [0, 0.02].
double dqn_reservoir_action(double x2r, double x2r_d, const rl::QNetwork& net);

// Disturbance compensation D_R = D_R2 - D_2, clamped to the actuator range.
double compensate_reservoir(double d_r2, double d2, double d_min = 0.0,
                            double d_max = 0.02);

// Latching protection for the reservoir: D2 is forced to zero while the
// reservoir density sits below the threshold and released at or above it.
struct RecoveryGate {
  double threshold = 0.8;
  bool open = true;
};

double recovery_gate(double x2r, double d2_requested, RecoveryGate& gate);

}  // namespace coculture::control
