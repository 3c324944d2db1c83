#pragma once

#include <coculture/rng.hpp>

namespace coculture::plant {

// Calibrated parameters of the two-chamber plant. Growth rates are per
// minute; pump commands are device units mapped to dilution rates by 1/tau.
struct PlantParams {
  double mu1_star = 0.021;  // max growth rate, fast strain (1/min)
  double mu2_star = 0.011;  // max growth rate, slow strain (1/min)
  double k1 = 0.1;          // Monod half-velocity constant, strain 1
  double k2 = 0.1;          // Monod half-velocity constant, strain 2
  double s_in = 10.0;       // inlet substrate concentration
  double tau = 0.215;       // actuation scaling: D_eff = command / tau
  double d_min = 0.0;       // pump command lower bound
  double d_max = 0.02;      // pump command upper bound
  double x_min = 0.2;       // minimum viable biomass (OD)
  double x_max = 1.0;       // biomass ceiling where the growth model holds
  double meas_noise_var = 0.001;  // OD measurement noise variance

  void validate() const;  // throws std::invalid_argument on violation
};

// Ground-truth state: mixing chamber (x1, x2, s1) and reservoir (x2r, s2).
struct PlantState {
  double x1 = 0.0;   // fast strain biomass, mixing chamber (OD)
  double x2 = 0.0;   // slow strain biomass, mixing chamber (OD)
  double s1 = 0.0;   // substrate, mixing chamber
  double x2r = 0.0;  // slow strain biomass, reservoir (OD)
  double s2 = 0.0;   // substrate, reservoir
};

// Pump commands in device units, each clamped to [d_min, d_max].
struct ControlInput {
  double d1 = 0.0;  // fresh media -> mixing chamber
  double d2 = 0.0;  // reservoir -> mixing chamber
  double dr = 0.0;  // fresh media -> reservoir
};

struct Measurement {
  double y1 = 0.0;  // total mixing-chamber biomass x1+x2 (+ noise)
  double y2 = 0.0;  // reservoir biomass x2r (+ noise)
  double t = 0.0;   // minutes
};

enum class Model { full, simplified };

// Monod growth law mu* s / (k + s). Throws std::domain_error for s < 0.
double monod_rate(double mu_star, double k, double s);

// Time derivatives of the five state fields under the full substrate model.
PlantState full_derivatives(const PlantState& state, const ControlInput& u,
                            const PlantParams& p);

// Abundant-substrate model: growth at mu*, substrate fields held constant.
PlantState simplified_derivatives(const PlantState& state,
                                  const ControlInput& u, const PlantParams& p);

// RK4 advance over dt minutes with internal substeps <= max_substep.
// Fields are clamped at zero after every substep. dt == 0 returns the input.
PlantState step(const PlantState& state, const ControlInput& u,
                const PlantParams& p, double dt, Model model,
                double max_substep = 0.1);

// y1 = x1 + x2 + w1, y2 = x2r + w2 with w ~ N(0, meas_noise_var).
// Consumes exactly two Gaussian draws from `noise`, also when variance is 0.
Measurement measure(const PlantState& state, const PlantParams& p, Rng& noise,
                    double t);

// Media bolus into the mixing chamber: biomass and substrate are scaled by
// `dilution_factor` and the substrate gains (1 - factor) * s_in.
PlantState apply_bolus(const PlantState& state, const PlantParams& p,
                       double dilution_factor);

ControlInput clamp_input(const ControlInput& u, const PlantParams& p);

}  // namespace coculture::plant
