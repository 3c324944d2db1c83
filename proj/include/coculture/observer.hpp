#pragma once

#include <coculture/plant.hpp>
#include <coculture/trace.hpp>

#include <cstdint>
#include <vector>

namespace coculture::observer {

struct Mat2 {
  double a11 = 0, a12 = 0, a21 = 0, a22 = 0;

  double det() const { return a11 * a22 - a12 * a21; }
};

int rank(const Mat2& m, double tol = 1e-12);

struct EkfConfig {
  double q = 1e-5;    // process noise scale, applied as q*I
  double r = 5.0;     // measurement noise variance
  double p0 = 0.072;  // initial covariance scale, applied as p0*I

  void validate() const;
};

struct EkfEstimate {
  double x1_hat = 0.0;
  double x2_hat = 0.0;
  Mat2 p;
  double t = 0.0;
};

// Observability matrix of the simplified mixing-chamber model under the
// aggregate measurement: [[1, 1], [mu1* - (D1+D2), mu2* - (D1+D2)]], with
// tau-scaled dilutions. Singular exactly when mu1* == mu2*.
Mat2 observability_matrix(double mu1_star, double mu2_star, double d1_eff,
                          double d2_eff);

// Split the first measurement according to a known ratio x2/x1 (equal split
// by default) and set P = p0*I.
EkfEstimate ekf_init(double y1, const EkfConfig& cfg,
                     double ratio_x2_over_x1 = 1.0, double t = 0.0);

// One predict/update cycle: Euler-discretized simplified model over dt with
// the commands applied since the last step, then a scalar Kalman update with
// H = [1, 1]. The reservoir term uses x2r_ref (the reservoir setpoint).
// Estimates are clamped at zero and the covariance is symmetrized.
EkfEstimate ekf_step(const EkfEstimate& est, const plant::ControlInput& u,
                     double y1, double x2r_ref, const plant::PlantParams& p,
                     const EkfConfig& cfg, double dt);

// Evolutionary search over (q, r, p0) minimizing the mean squared difference
// between EKF estimates and the ground truth recorded in the traces.
// Population 20 with elitism and log-space Gaussian mutation; the stock
// defaults are seeded into the initial population, so the result is never
// worse than them on the training traces. budget counts objective
// evaluations; budget 0 returns the defaults untouched.
EkfConfig tune_ekf(const std::vector<harness::ScenarioTrace>& traces,
                   int budget, const plant::PlantParams& p,
                   std::uint64_t seed = 0);

// Mean squared estimation error of an EKF replay over a recorded trace,
// averaged over both species. Used as the tuning objective.
double ekf_replay_mse(const harness::ScenarioTrace& trace,
                      const plant::PlantParams& p, const EkfConfig& cfg);

}  // namespace coculture::observer
