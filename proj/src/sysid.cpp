#include <coculture/sysid.hpp>

#include <coculture/rng.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace coculture::sysid {

harness::ScenarioTrace generate_openloop_trace(const plant::PlantParams& p,
                                               const OpenLoopConfig& cfg,
                                               std::uint64_t seed) {
  if (cfg.strain != 1 && cfg.strain != 2)
    throw std::invalid_argument("generate_openloop_trace: strain must be 1|2");
  if (cfg.duration_min < 0)
    throw std::invalid_argument("generate_openloop_trace: negative duration");

  harness::ScenarioTrace trace;
  trace.meta.scenario =
      cfg.strain == 1 ? "openloop-strain1" : "openloop-strain2";
  trace.meta.seed = seed;

  plant::PlantState state;
  if (cfg.strain == 1)
    state.x1 = cfg.x0;
  else
    state.x2 = cfg.x0;
  state.s1 = p.s_in;
  state.s2 = p.s_in;

  Rng noise(seed, 3);
  const int n = static_cast<int>(std::llround(cfg.duration_min));
  double trigger_time = -1.0;
  for (int k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k);
    const plant::Measurement m = plant::measure(state, p, noise, t);
    double d1 = 0.0;
    if (trigger_time < 0 && m.y1 >= cfg.trigger_od) trigger_time = t;
    if (trigger_time >= 0 && !cfg.schedule.levels.empty()) {
      const auto seg = static_cast<std::size_t>(
          (t - trigger_time) / cfg.schedule.period_min);
      d1 = cfg.schedule.levels[seg % cfg.schedule.levels.size()];
    }
    harness::TraceRow row;
    row.t = t;
    row.x1 = state.x1;
    row.x2 = state.x2;
    row.s1 = state.s1;
    row.x2r = state.x2r;
    row.y1 = m.y1;
    row.y2 = m.y2;
    row.d1 = d1;
    trace.rows.push_back(row);
    if (k < n)
      state = plant::step(state, {d1, 0.0, 0.0}, p, 1.0,
                          plant::Model::simplified);
  }
  return trace;
}

namespace {

struct TraceView {
  int strain = 1;
  double x0 = 0.0;
  std::vector<double> y;
  std::vector<double> d;   // command applied over [t_k, t_{k+1})
  std::vector<double> dt;  // t_{k+1} - t_k
};

TraceView make_view(const harness::ScenarioTrace& trace) {
  if (trace.rows.empty())
    throw std::invalid_argument("fit_growth_params: empty trace");
  double max1 = 0.0, max2 = 0.0;
  for (const auto& r : trace.rows) {
    max1 = std::max(max1, r.x1);
    max2 = std::max(max2, r.x2);
  }
  if (max1 > 0 && max2 > 0)
    throw std::invalid_argument(
        "fit_growth_params: trace is not a monoculture");
  if (max1 == 0 && max2 == 0)
    throw std::invalid_argument("fit_growth_params: no biomass in trace");

  TraceView v;
  v.strain = max1 > 0 ? 1 : 2;
  v.x0 = std::max(trace.rows.front().y1, 1e-6);
  for (std::size_t i = 0; i < trace.rows.size(); ++i) {
    v.y.push_back(trace.rows[i].y1);
    if (i + 1 < trace.rows.size()) {
      v.d.push_back(trace.rows[i].d1);
      v.dt.push_back(trace.rows[i + 1].t - trace.rows[i].t);
    }
  }
  return v;
}

double trace_sse(const TraceView& v, double x0, double mu, double tau) {
  double x = x0;
  double sse = 0.0;
  for (std::size_t k = 0; k < v.y.size(); ++k) {
    const double e = x - v.y[k];
    sse += e * e;
    if (k < v.d.size()) x *= std::exp((mu - v.d[k] / tau) * v.dt[k]);
  }
  return sse;
}

double trace_rmse(const TraceView& v, double x0, double mu, double tau) {
  return std::sqrt(trace_sse(v, x0, mu, tau) /
                   static_cast<double>(v.y.size()));
}

// Nelder-Mead on n dims; returns the best vertex.
std::vector<double> nelder_mead(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x0, double scale, int max_iter) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i)
    simplex[i + 1][i] += scale * std::max(std::fabs(x0[i]), 1e-3);
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

  for (int iter = 0; iter < max_iter; ++iter) {
    // Order vertices best..worst.
    std::vector<std::size_t> idx(n + 1);
    for (std::size_t i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    {
      std::vector<std::vector<double>> s2;
      std::vector<double> f2;
      for (std::size_t i : idx) {
        s2.push_back(simplex[i]);
        f2.push_back(fv[i]);
      }
      simplex = std::move(s2);
      fv = std::move(f2);
    }
    if (std::fabs(fv[n] - fv[0]) <=
        1e-14 * (std::fabs(fv[0]) + std::fabs(fv[n])) + 1e-300)
      break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / n;

    auto blend = [&](double coef) {
      std::vector<double> p(n);
      for (std::size_t j = 0; j < n; ++j)
        p[j] = centroid[j] + coef * (simplex[n][j] - centroid[j]);
      return p;
    };

    const auto reflected = blend(-1.0);
    const double fr = f(reflected);
    if (fr < fv[0]) {
      const auto expanded = blend(-2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[n] = expanded;
        fv[n] = fe;
      } else {
        simplex[n] = reflected;
        fv[n] = fr;
      }
    } else if (fr < fv[n - 1]) {
      simplex[n] = reflected;
      fv[n] = fr;
    } else {
      const auto contracted = blend(fr < fv[n] ? -0.5 : 0.5);
      const double fc = f(contracted);
      if (fc < std::min(fr, fv[n])) {
        simplex[n] = contracted;
        fv[n] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          for (std::size_t j = 0; j < n; ++j)
            simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
          fv[i] = f(simplex[i]);
        }
      }
    }
  }
  const std::size_t best =
      std::min_element(fv.begin(), fv.end()) - fv.begin();
  return simplex[best];
}

}  // namespace

FitResult fit_growth_params(const std::vector<harness::ScenarioTrace>& traces,
                            const FitOptions& opt) {
  if (traces.empty())
    throw std::invalid_argument("fit_growth_params: no traces");

  std::vector<TraceView> views;
  views.reserve(traces.size());
  bool excited = false;
  for (const auto& tr : traces) {
    views.push_back(make_view(tr));
    for (double d : views.back().d)
      if (d > 1e-12) excited = true;
  }

  // Parameter vector: [mu1, mu2, (tau), x0 per trace]. The inoculation
  // densities are fitted jointly because the first measurement alone carries
  // the full sensor noise and would bias the growth rates.
  const bool fit_tau = excited;
  const std::size_t x0_off = fit_tau ? 3 : 2;
  auto objective = [&](const std::vector<double>& x) {
    const double mu1 = x[0];
    const double mu2 = x[1];
    const double tau = fit_tau ? x[2] : opt.tau_default;
    if (mu1 < opt.mu_lo || mu1 > opt.mu_hi || mu2 < opt.mu_lo ||
        mu2 > opt.mu_hi)
      return 1e12;
    if (fit_tau && (tau < opt.tau_lo || tau > opt.tau_hi)) return 1e12;
    double sse = 0.0;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const double x0 = x[x0_off + i];
      if (x0 <= 1e-4 || x0 > 5.0) return 1e12;
      sse += trace_sse(views[i], x0, views[i].strain == 1 ? mu1 : mu2, tau);
    }
    return sse;
  };

  // Deterministic multi-start spread over the admissible box.
  const std::vector<std::vector<double>> starts = {
      {0.02, 0.01, 0.2},  {0.005, 0.003, 0.1}, {0.05, 0.03, 0.5},
      {0.08, 0.04, 0.85}, {0.012, 0.006, 0.35}};

  std::vector<double> best;
  double best_f = std::numeric_limits<double>::infinity();
  const int n_starts = std::min<int>(opt.starts, starts.size());
  for (int s = 0; s < n_starts; ++s) {
    std::vector<double> x0 = starts[s];
    if (!fit_tau) x0.resize(2);
    for (const auto& v : views) x0.push_back(v.x0);
    const auto x = nelder_mead(objective, x0, 0.5, opt.max_iter);
    const double fx = objective(x);
    if (fx < best_f) {
      best_f = fx;
      best = x;
    }
  }

  FitResult res;
  res.mu1_star = best[0];
  res.mu2_star = best[1];
  res.tau = fit_tau ? best[2] : opt.tau_default;
  res.tau_identifiable = fit_tau;
  for (std::size_t i = 0; i < views.size(); ++i)
    res.rmse.push_back(trace_rmse(
        views[i], best[x0_off + i],
        views[i].strain == 1 ? res.mu1_star : res.mu2_star, res.tau));
  return res;
}

}  // namespace coculture::sysid
