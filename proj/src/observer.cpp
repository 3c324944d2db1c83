#include <coculture/observer.hpp>

#include <coculture/rng.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace coculture::observer {

int rank(const Mat2& m, double tol) {
  const double scale = std::max({std::fabs(m.a11), std::fabs(m.a12),
                                 std::fabs(m.a21), std::fabs(m.a22)});
  if (scale <= tol) return 0;
  if (std::fabs(m.det()) > tol * scale * scale) return 2;
  return 1;
}

void EkfConfig::validate() const {
  if (!(q > 0 && r > 0 && p0 > 0))
    throw std::invalid_argument("EkfConfig: q, r, p0 must be positive");
}

Mat2 observability_matrix(double mu1_star, double mu2_star, double d1_eff,
                          double d2_eff) {
  const double d = d1_eff + d2_eff;
  return {1.0, 1.0, mu1_star - d, mu2_star - d};
}

EkfEstimate ekf_init(double y1, const EkfConfig& cfg, double ratio_x2_over_x1,
                     double t) {
  EkfEstimate est;
  const double y = std::max(y1, 0.0);
  if (ratio_x2_over_x1 > 0 && std::isfinite(ratio_x2_over_x1)) {
    est.x1_hat = y / (1.0 + ratio_x2_over_x1);
    est.x2_hat = y * ratio_x2_over_x1 / (1.0 + ratio_x2_over_x1);
  } else {
    est.x1_hat = est.x2_hat = y / 2.0;
  }
  est.p = {cfg.p0, 0.0, 0.0, cfg.p0};
  est.t = t;
  return est;
}

EkfEstimate ekf_step(const EkfEstimate& est, const plant::ControlInput& u,
                     double y1, double x2r_ref, const plant::PlantParams& p,
                     const EkfConfig& cfg, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("ekf_step: dt must be positive");
  const double d1 = u.d1 / p.tau;
  const double d2 = u.d2 / p.tau;

  // Predict through the simplified mixing-chamber model, Euler over dt.
  // The reservoir biomass enters as the constant setpoint x2r_ref.
  const double a1 = p.mu1_star - (d1 + d2);
  const double a2 = p.mu2_star - (d1 + d2);
  double x1 = est.x1_hat + dt * (a1 * est.x1_hat);
  double x2 = est.x2_hat + dt * (a2 * est.x2_hat + d2 * x2r_ref);

  // P <- F P F' + q I dt with F = I + A dt, A = diag(a1, a2).
  const double f1 = 1.0 + a1 * dt;
  const double f2 = 1.0 + a2 * dt;
  Mat2 pm;
  pm.a11 = f1 * est.p.a11 * f1 + cfg.q * dt;
  pm.a12 = f1 * est.p.a12 * f2;
  pm.a21 = f2 * est.p.a21 * f1;
  pm.a22 = f2 * est.p.a22 * f2 + cfg.q * dt;

  // Update with H = [1, 1].
  const double s = pm.a11 + pm.a12 + pm.a21 + pm.a22 + cfg.r;
  if (!(s > 0)) throw std::runtime_error("ekf_step: innovation covariance <= 0");
  const double k1 = (pm.a11 + pm.a12) / s;
  const double k2 = (pm.a21 + pm.a22) / s;
  const double innov = y1 - (x1 + x2);
  x1 += k1 * innov;
  x2 += k2 * innov;

  // P <- (I - K H) P, then symmetrize.
  Mat2 pu;
  pu.a11 = (1 - k1) * pm.a11 - k1 * pm.a21;
  pu.a12 = (1 - k1) * pm.a12 - k1 * pm.a22;
  pu.a21 = -k2 * pm.a11 + (1 - k2) * pm.a21;
  pu.a22 = -k2 * pm.a12 + (1 - k2) * pm.a22;
  const double off = 0.5 * (pu.a12 + pu.a21);
  pu.a12 = pu.a21 = off;

  EkfEstimate out;
  out.x1_hat = std::max(x1, 0.0);
  out.x2_hat = std::max(x2, 0.0);
  out.p = pu;
  out.t = est.t + dt;
  return out;
}

double ekf_replay_mse(const harness::ScenarioTrace& trace,
                      const plant::PlantParams& p, const EkfConfig& cfg) {
  if (trace.rows.empty())
    throw std::invalid_argument("ekf_replay_mse: empty trace");
  EkfEstimate est;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    const harness::TraceRow& row = trace.rows[i];
    if (i == 0) {
      est = ekf_init(row.y1, cfg, 1.0, row.t);
    } else {
      const harness::TraceRow& prev = trace.rows[i - 1];
      const plant::ControlInput u{prev.d1, prev.d2, prev.dr};
      est = ekf_step(est, u, row.y1, row.x2r_d, p, cfg, row.t - prev.t);
    }
    const double e1 = est.x1_hat - row.x1;
    const double e2 = est.x2_hat - row.x2;
    sum += e1 * e1 + e2 * e2;
    n += 2;
  }
  return sum / static_cast<double>(n);
}

EkfConfig tune_ekf(const std::vector<harness::ScenarioTrace>& traces,
                   int budget, const plant::PlantParams& p,
                   std::uint64_t seed) {
  if (traces.empty()) throw std::invalid_argument("tune_ekf: no traces");
  const EkfConfig defaults{};
  if (budget <= 0) return defaults;

  auto objective = [&](const EkfConfig& cfg) {
    double total = 0.0;
    for (const auto& tr : traces) total += ekf_replay_mse(tr, p, cfg);
    return total / static_cast<double>(traces.size());
  };

  constexpr int kPop = 20;
  struct Individual {
    EkfConfig cfg;
    double fitness = std::numeric_limits<double>::infinity();
  };

  Rng rng(seed, 7);
  auto mutate = [&](const EkfConfig& cfg, double sigma) {
    EkfConfig out;
    out.q = std::exp(std::log(cfg.q) + sigma * rng.next_gaussian());
    out.r = std::exp(std::log(cfg.r) + sigma * rng.next_gaussian());
    out.p0 = std::exp(std::log(cfg.p0) + sigma * rng.next_gaussian());
    return out;
  };

  int evals = 0;
  auto evaluate = [&](Individual& ind) {
    ind.fitness = objective(ind.cfg);
    ++evals;
  };

  std::vector<Individual> pop(kPop);
  pop[0].cfg = defaults;
  for (int i = 1; i < kPop; ++i) pop[i].cfg = mutate(defaults, 1.5);
  for (auto& ind : pop) {
    if (evals >= budget) break;
    evaluate(ind);
  }
  std::sort(pop.begin(), pop.end(),
            [](const Individual& a, const Individual& b) {
              return a.fitness < b.fitness;
            });

  while (evals < budget) {
    std::vector<Individual> next;
    next.reserve(kPop);
    next.push_back(pop[0]);  // elite carries over, already evaluated
    next.push_back(pop[1]);
    while (static_cast<int>(next.size()) < kPop && evals < budget) {
      // Tournament over the surviving half, then a log-space mutation.
      const std::size_t half = pop.size() / 2;
      const std::size_t i = rng.next_below(half);
      const std::size_t j = rng.next_below(half);
      const Individual& parent = pop[std::min(i, j)];
      Individual child;
      child.cfg = mutate(parent.cfg, 0.4);
      evaluate(child);
      next.push_back(child);
    }
    pop = std::move(next);
    std::sort(pop.begin(), pop.end(),
              [](const Individual& a, const Individual& b) {
                return a.fitness < b.fitness;
              });
  }
  return pop[0].cfg;
}

}  // namespace coculture::observer
