#pragma once

#include <coculture/plant.hpp>
#include <coculture/trace.hpp>

#include <cstdint>
#include <vector>

namespace coculture::sysid {

// Open-loop identification protocol: grow a monoculture without dilution
// until the measured OD reaches trigger_od, then step the dilution command
// through `levels`, one entry per `period_min` minutes (cycling when
// exhausted).
struct DilutionSchedule {
  double period_min = 30.0;
  std::vector<double> levels;
};

struct OpenLoopConfig {
  int strain = 1;          // 1 or 2; the other strain stays at zero
  double x0 = 0.1;         // inoculation density (OD)
  double trigger_od = 1.0; // measured OD that starts the schedule
  double duration_min = 240.0;
  DilutionSchedule schedule;
};

harness::ScenarioTrace generate_openloop_trace(const plant::PlantParams& p,
                                               const OpenLoopConfig& cfg,
                                               std::uint64_t seed);

struct FitOptions {
  int starts = 5;
  int max_iter = 400;
  double mu_lo = 0.001, mu_hi = 0.1;
  double tau_lo = 0.05, tau_hi = 1.0;
  double tau_default = 0.215;  // reported when tau is unidentifiable
};

struct FitResult {
  double mu1_star = 0.0;
  double mu2_star = 0.0;
  double tau = 0.0;
  std::vector<double> rmse;  // per trace, same order as the input
  bool tau_identifiable = true;
};

// Nonlinear least squares over (mu1*, mu2*, tau) against the abundant-
// substrate monoculture model, multi-start Nelder-Mead. Each trace must be a
// monoculture (exactly one species present in the ground-truth columns).
// tau is unidentifiable when every dilution segment is zero; the fit then
// holds it at tau_default and flags the result.
FitResult fit_growth_params(const std::vector<harness::ScenarioTrace>& traces,
                            const FitOptions& opt = {});

}  // namespace coculture::sysid
