#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <coculture/config.hpp>
#include <coculture/harness.hpp>
#include <coculture/metrics.hpp>
#include <coculture/observer.hpp>
#include <coculture/plant.hpp>
#include <coculture/rl.hpp>
#include <coculture/sysid.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

using namespace coculture;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("ACCEPTANCE %2d %s  %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Both policies come from one deterministic training pass each; the wall
// time is what criterion 8 budgets.
struct TrainedPolicies {
  rl::TrainResult mixing;
  rl::TrainResult reservoir;
  double wall_minutes = 0.0;
};

const TrainedPolicies& policies() {
  static const TrainedPolicies tp = [] {
    const plant::PlantParams nominal;
    const auto t0 = std::chrono::steady_clock::now();
    TrainedPolicies out;
    out.mixing = rl::train_dqn(rl::EnvKind::mixing, nominal,
                               rl::default_train_config(rl::EnvKind::mixing),
                               6);
    out.reservoir = rl::train_dqn(
        rl::EnvKind::reservoir, nominal,
        rl::default_train_config(rl::EnvKind::reservoir), 1);
    out.wall_minutes = seconds_since(t0) / 60.0;
    return out;
  }();
  return tp;
}

bool g_c3_pass = false;
bool g_c4_pass = false;

// Observer-validation protocol: co-culture with D2 = 0, dilution off for
// 60 min, then bang-bang regulation of measured total biomass to 0.6.
harness::ScenarioTrace coculture_trace(const plant::PlantParams& p,
                                       std::uint64_t seed, double duration_min,
                                       double x10, double x20) {
  harness::ScenarioTrace trace;
  trace.meta.scenario = "od-coculture";
  trace.meta.seed = seed;
  plant::PlantState s;
  s.x1 = x10;
  s.x2 = x20;
  s.s1 = p.s_in;
  s.s2 = p.s_in;
  Rng noise(seed, 0);
  plant::ControlInput u{};
  const int n = static_cast<int>(duration_min);
  for (int k = 0; k <= n; ++k) {
    const plant::Measurement m = plant::measure(s, p, noise, k);
    u.d1 = (k >= 60 && m.y1 > 0.6) ? p.d_max : 0.0;
    harness::TraceRow row;
    row.t = k;
    row.x1 = s.x1;
    row.x2 = s.x2;
    row.y1 = m.y1;
    row.y2 = m.y2;
    row.d1 = u.d1;
    row.x2r_d = 0.8;
    trace.rows.push_back(row);
    if (k < n) s = plant::step(s, u, p, 1.0, plant::Model::full);
  }
  return trace;
}

struct MeanMetrics {
  double settling = 0.0;
  double nrmse = 0.0;
  bool all_settled = true;
};

MeanMetrics mean_segment_metrics(const harness::Scenario& sc,
                                 const harness::RunOptions& opts,
                                 harness::Signal signal,
                                 harness::Source source, int segment,
                                 std::span<const double> breaks = {}) {
  MeanMetrics out;
  int n = 0;
  for (std::uint64_t seed : sc.seeds) {
    const auto trace = harness::run_scenario(sc, seed, opts);
    const auto segs = harness::segment_metrics(trace, signal, source, breaks);
    if (segment >= static_cast<int>(segs.size()) ||
        !segs[segment].settling_min || !segs[segment].nrmse) {
      out.all_settled = false;
      continue;
    }
    out.settling += *segs[segment].settling_min;
    out.nrmse += *segs[segment].nrmse;
    ++n;
  }
  if (n > 0) {
    out.settling /= n;
    out.nrmse /= n;
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 1: observability rank") {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1);
  bool pass = true;
  for (int i = 0; i < 100; ++i) {
    const double d1 = 0.1 * rng.next_double();
    const double d2 = 0.1 * rng.next_double();
    if (observer::rank(observer::observability_matrix(0.021, 0.011, d1, d2)) !=
        2)
      pass = false;
    if (observer::rank(observer::observability_matrix(0.021, 0.021, d1, d2)) !=
        1)
      pass = false;
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 1.0;
  report(1, pass, "rank 2 iff distinct growth rates, 100 dilution pairs, " +
                      std::to_string(elapsed) + " s");
  CHECK(pass);
}

TEST_CASE("criterion 2: switching convergence on the nominal model") {
  const auto t0 = std::chrono::steady_clock::now();
  const plant::PlantParams p;
  const control::SwitchingGains gains;
  const auto split = control::desired_split({0.6, 0.7, 0.8});
  const double dt = 0.01;
  plant::PlantState s;
  s.x1 = 0.4;
  s.x2 = 0.4;
  s.x2r = 0.8;
  double last_outside = 0.0;
  for (int k = 0; k < static_cast<int>(400.0 / dt); ++k) {
    const auto region =
        control::classify_region(s.x1, s.x2, split.x1_d, split.x2_d);
    plant::ControlInput u = control::switching_law(region, gains);
    u.dr = u.d2;
    s = plant::step(s, u, p, dt, plant::Model::simplified, dt);
    s.x2r = 0.8;
    const bool inside = std::fabs(s.x1 - split.x1_d) <= 0.01 * split.x1_d &&
                        std::fabs(s.x2 - split.x2_d) <= 0.01 * split.x2_d;
    if (!inside) last_outside = (k + 1) * dt;
  }
  const double elapsed = seconds_since(t0);
  const bool pass = last_outside < 300.0 && elapsed < 5.0;
  report(2, pass, "within 1% of (0.4375, 0.2625) after t=" +
                      std::to_string(last_outside) + " min and remains");
  CHECK(pass);
}

TEST_CASE("criterion 3: full-loop regulation with EKF and noise") {
  auto list = harness::builtin_scenarios();
  harness::Scenario reg = harness::find_scenario(list, "regulation");
  bool pass = true;
  std::string detail;
  for (int use_dqn = 0; use_dqn <= 1; ++use_dqn) {
    harness::RunOptions opts;
    reg.mixing = use_dqn ? harness::MixingController::dqn
                         : harness::MixingController::switching;
    if (use_dqn) opts.mixing_net = &policies().mixing.net;
    const auto od = mean_segment_metrics(reg, opts, harness::Signal::od,
                                         harness::Source::truth, 0);
    const auto ratio = mean_segment_metrics(reg, opts, harness::Signal::ratio,
                                            harness::Source::facs, 0);
    const bool ok = od.all_settled && ratio.all_settled && od.nrmse <= 0.08 &&
                    ratio.nrmse <= 0.15 && od.settling <= 35.0 &&
                    ratio.settling <= 90.0;
    pass = pass && ok;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s[od ts %.1f nrmse %.3f | ratio ts %.1f nrmse %.3f] ",
                  use_dqn ? "dqn " : "s.c. ", od.settling, od.nrmse,
                  ratio.settling, ratio.nrmse);
    detail += buf;
  }
  g_c3_pass = pass;
  report(3, pass, detail + "(bounds: od 35 min/0.08, ratio 90 min/0.15)");
  CHECK(pass);
}

TEST_CASE("criterion 4: reservoir controllers on the step-down") {
  auto list = harness::builtin_scenarios();
  harness::Scenario sd = harness::find_scenario(list, "reservoir-stepdown");
  bool pass = true;
  std::string detail;
  for (auto ctrl : {harness::ReservoirController::pi,
                    harness::ReservoirController::mpc,
                    harness::ReservoirController::dqn}) {
    sd.reservoir = ctrl;
    harness::RunOptions opts;
    if (ctrl == harness::ReservoirController::dqn)
      opts.reservoir_net = &policies().reservoir.net;
    double worst_settling = 0.0;
    double nrmse_sum = 0.0;
    int nrmse_n = 0;
    bool all_settled = true;
    for (std::uint64_t seed : sd.seeds) {
      const auto trace = harness::run_scenario(sd, seed, opts);
      const auto segs = harness::segment_metrics(trace, harness::Signal::x2r,
                                                 harness::Source::truth);
      for (const auto& m : segs) {
        if (!m.settling_min || !m.nrmse) {
          all_settled = false;
          continue;
        }
        worst_settling = std::max(worst_settling, *m.settling_min);
        nrmse_sum += *m.nrmse;
        ++nrmse_n;
      }
    }
    const double mean_nrmse = nrmse_n ? nrmse_sum / nrmse_n : 1.0;
    const bool ok = all_settled && worst_settling <= 7.0 && mean_nrmse <= 0.05;
    pass = pass && ok;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s[ts %.1f nrmse %.3f] ",
                  harness::to_string(ctrl).c_str(), worst_settling,
                  mean_nrmse);
    detail += buf;
  }
  g_c4_pass = pass;
  report(4, pass, detail + "(bounds: 7 min per step, nrmse 0.05)");
  CHECK(pass);
}

TEST_CASE("criterion 5: robustness to the temperature shift") {
  auto list = harness::builtin_scenarios();
  harness::Scenario tp = harness::find_scenario(list, "reservoir-temperature");
  const double breaks[] = {30.0};
  bool pass = true;
  std::string detail;
  for (auto ctrl : {harness::ReservoirController::pi,
                    harness::ReservoirController::mpc,
                    harness::ReservoirController::dqn}) {
    tp.reservoir = ctrl;
    harness::RunOptions opts;
    if (ctrl == harness::ReservoirController::dqn)
      opts.reservoir_net = &policies().reservoir.net;
    const auto before = mean_segment_metrics(tp, opts, harness::Signal::x2r,
                                             harness::Source::truth, 0, breaks);
    const auto after = mean_segment_metrics(tp, opts, harness::Signal::x2r,
                                            harness::Source::truth, 1, breaks);
    const double diff = std::fabs(before.nrmse - after.nrmse);
    const bool ok = before.all_settled && after.all_settled && diff < 0.02;
    pass = pass && ok;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s[%.4f->%.4f d %.4f] ",
                  harness::to_string(ctrl).c_str(), before.nrmse, after.nrmse,
                  diff);
    detail += buf;
  }
  report(5, pass, detail + "(bound: |change| < 0.02)");
  CHECK(pass);
}

TEST_CASE("criterion 6: EKF accuracy on the regulated co-culture") {
  const auto t0 = std::chrono::steady_clock::now();
  const plant::PlantParams p;
  // Tune on uneven-composition runs, evaluate on the plain protocol with a
  // distinct noise realization.
  const auto t1 = coculture_trace(p, 21, 180.0, 0.14, 0.06);
  const auto t2 = coculture_trace(p, 22, 180.0, 0.06, 0.14);
  const observer::EkfConfig tuned = observer::tune_ekf({t1, t2}, 400, p, 3);

  const auto eval = coculture_trace(p, 23, 180.0, 0.1, 0.1);
  observer::EkfEstimate est;
  double mse1 = 0.0, mse2 = 0.0;
  for (std::size_t i = 0; i < eval.rows.size(); ++i) {
    const auto& row = eval.rows[i];
    if (i == 0) {
      est = observer::ekf_init(row.y1, tuned, 1.0, row.t);
    } else {
      const auto& prev = eval.rows[i - 1];
      est = observer::ekf_step(est, {prev.d1, prev.d2, prev.dr}, row.y1,
                               row.x2r_d, p, tuned, row.t - prev.t);
    }
    mse1 += (est.x1_hat - row.x1) * (est.x1_hat - row.x1);
    mse2 += (est.x2_hat - row.x2) * (est.x2_hat - row.x2);
  }
  mse1 /= eval.rows.size();
  mse2 /= eval.rows.size();
  const double elapsed = seconds_since(t0);
  const bool pass = mse1 <= 0.005 && mse2 <= 0.005 && elapsed < 30.0;
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "per-species mse %.5f / %.5f (bound 0.005), %.1f s", mse1,
                mse2, elapsed);
  report(6, pass, buf);
  CHECK(pass);
}

TEST_CASE("criterion 7: growth parameter recovery") {
  const auto t0 = std::chrono::steady_clock::now();
  const plant::PlantParams p;
  sysid::OpenLoopConfig c1;
  c1.strain = 1;
  c1.duration_min = 360.0;
  c1.schedule.levels = {0.012, 0.0, 0.018, 0.006, 0.02, 0.003};
  sysid::OpenLoopConfig c2 = c1;
  c2.strain = 2;
  const auto tr1 = sysid::generate_openloop_trace(p, c1, 11);
  const auto tr2 = sysid::generate_openloop_trace(p, c2, 12);
  const auto fit = sysid::fit_growth_params({tr1, tr2});
  const double e1 = std::fabs(fit.mu1_star - 0.021) / 0.021;
  const double e2 = std::fabs(fit.mu2_star - 0.011) / 0.011;
  const double et = std::fabs(fit.tau - 0.215) / 0.215;
  const double elapsed = seconds_since(t0);
  const bool pass = e1 < 0.05 && e2 < 0.05 && et < 0.10 && elapsed < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "mu1 %.5f (%.1f%%), mu2 %.5f (%.1f%%), tau %.3f (%.1f%%), %.1f s",
                fit.mu1_star, 100 * e1, fit.mu2_star, 100 * e2, fit.tau,
                100 * et, elapsed);
  report(7, pass, buf);
  CHECK(pass);
}

TEST_CASE("criterion 8: training budget and gradient checks") {
  const double minutes = policies().wall_minutes;

  // analytic gradients vs central differences on a TD batch
  Rng rng(12);
  auto net = rl::QNetwork::he_init({3, 8, 8, 4}, rng);
  bool grads_ok = true;
  {
    struct Sample {
      std::vector<double> x;
      int action;
      double target;
    };
    std::vector<Sample> batch;
    for (int i = 0; i < 6; ++i)
      batch.push_back({{rng.next_gaussian(), rng.next_gaussian(),
                        rng.next_gaussian()},
                       static_cast<int>(rng.next_below(4)),
                       rng.next_gaussian()});
    auto loss = [&](const rl::QNetwork& n) {
      double l = 0.0;
      for (const auto& s : batch) {
        const double td = n.forward(s.x)[s.action] - s.target;
        l += td * td;
      }
      return l / batch.size();
    };
    std::vector<double> grads(net.params().size(), 0.0);
    for (const auto& s : batch) {
      const double td = net.forward(s.x)[s.action] - s.target;
      std::vector<double> og(4, 0.0);
      og[s.action] = 2.0 * td / batch.size();
      const auto g = net.backward(s.x, og);
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
    }
    const double eps = 1e-4;
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      rl::QNetwork plus = net, minus = net;
      plus.params()[i] += eps;
      minus.params()[i] -= eps;
      const double fd = (loss(plus) - loss(minus)) / (2 * eps);
      const double rel = std::fabs(grads[i] - fd) /
                         std::max({std::fabs(grads[i]), std::fabs(fd), 1e-2});
      if (rel > 1e-4) grads_ok = false;
    }
  }

  const bool pass = minutes < 30.0 && grads_ok && g_c3_pass && g_c4_pass;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "both policies trained in %.1f min (< 30), gradients %s, "
                "criteria 3/4 %s",
                minutes, grads_ok ? "ok" : "bad",
                g_c3_pass && g_c4_pass ? "met" : "missed");
  report(8, pass, buf);
  CHECK(pass);
}

TEST_CASE("criterion 9: recovery from the media bolus") {
  auto list = harness::builtin_scenarios();
  harness::Scenario rob = harness::find_scenario(list, "robustness-bolus");
  const double breaks[] = {100.0};
  bool pass = true;
  std::string detail;
  for (int use_dqn = 0; use_dqn <= 1; ++use_dqn) {
    rob.mixing = use_dqn ? harness::MixingController::dqn
                         : harness::MixingController::switching;
    harness::RunOptions opts;
    if (use_dqn) opts.mixing_net = &policies().mixing.net;

    double worst_reentry = 0.0;
    bool all_settled = true;
    double nr_before = 0.0, nr_after = 0.0;
    int n = 0;
    for (std::uint64_t seed : rob.seeds) {
      const auto trace = harness::run_scenario(rob, seed, opts);
      const auto rat = harness::segment_metrics(
          trace, harness::Signal::ratio, harness::Source::facs, breaks);
      const auto od = harness::segment_metrics(
          trace, harness::Signal::od, harness::Source::truth, breaks);
      if (rat.size() < 2 || od.size() < 2 || !rat[1].settling_min ||
          !od[1].settling_min || !rat[0].nrmse || !rat[1].nrmse) {
        all_settled = false;
        continue;
      }
      worst_reentry = std::max({worst_reentry, *rat[1].settling_min,
                                *od[1].settling_min});
      nr_before += *rat[0].nrmse;
      nr_after += *rat[1].nrmse;
      ++n;
    }
    const double parity = n ? std::fabs(nr_before - nr_after) / n : 1.0;
    const bool ok = all_settled && worst_reentry <= 30.0 && parity < 0.05;
    pass = pass && ok;
    char buf[112];
    std::snprintf(buf, sizeof(buf), "%s[reentry %.0f min, parity %.3f] ",
                  use_dqn ? "dqn " : "s.c. ", worst_reentry, parity);
    detail += buf;
  }
  report(9, pass, detail + "(bounds: 30 min, 0.05)");
  CHECK(pass);
}

TEST_CASE("criterion 10: metric oracles") {
  bool pass = true;

  // analytic settling example
  {
    const int n = 201;
    std::vector<double> v(n), t(n);
    for (int i = 0; i < n; ++i) {
      t[i] = i;
      v[i] = 1.0 - std::exp(-t[i] / 10.0);
    }
    const auto ts = metrics::settling_time(v, t);
    if (!ts || std::fabs(*ts - 10.0 * std::log(5.0)) > 1.0) pass = false;
  }

  // exact nrmse arithmetic
  {
    const std::vector<double> v(10, 0.6), t{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    if (std::fabs(metrics::nrmse(v, t, 0.5, 0.0) - 0.1 / std::sqrt(0.5)) >
        1e-12)
      pass = false;
    const std::vector<double> exact(10, 0.5);
    if (metrics::nrmse(exact, t, 0.5, 0.0) != 0.0) pass = false;
  }

  // paired t-test vs Simpson quadrature of the t density
  {
    const std::vector<double> a{5, 6, 7}, b{6, 5, 9};
    const double mean = -2.0 / 3.0;
    const double var = 7.0 / 3.0;
    const double tstat = std::fabs(mean / std::sqrt(var / 3.0));
    const double v = 2.0;
    const double log_norm = std::lgamma((v + 1) / 2) - std::lgamma(v / 2) -
                            0.5 * std::log(v * M_PI);
    auto pdf = [&](double x) {
      return std::exp(log_norm - (v + 1) / 2 * std::log1p(x * x / v));
    };
    const int steps = 2000;
    const double h = tstat / steps;
    double acc = pdf(0.0) + pdf(tstat);
    for (int i = 1; i < steps; ++i)
      acc += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
    const double oracle_p = 2.0 * (0.5 - acc * h / 3.0);
    if (std::fabs(metrics::paired_ttest(a, b) - oracle_p) > 1e-3) pass = false;
  }

  report(10, pass, "settling 16.09 min within one sample, nrmse exact, "
                   "t-test within 1e-3 of quadrature");
  CHECK(pass);
}

TEST_CASE("criterion 11: exchange mode equals coupled mode") {
  bool pass = true;
  std::string failed;
  for (const auto& sc : harness::builtin_scenarios()) {
    harness::RunOptions coupled;
    const auto a = harness::run_scenario(sc, 0, coupled);
    harness::RunOptions exchange;
    exchange.mode = harness::Mode::exchange;
    const auto b = harness::run_scenario(sc, 0, exchange);
    bool same = a.rows.size() == b.rows.size();
    for (std::size_t i = 0; same && i < a.rows.size(); ++i)
      same = std::memcmp(&a.rows[i], &b.rows[i], sizeof(harness::TraceRow)) == 0;
    if (!same) {
      pass = false;
      failed += sc.name + " ";
    }
  }
  report(11, pass, pass ? "bit-identical traces for all six builtin scenarios"
                        : "divergent traces: " + failed);
  CHECK(pass);
}

TEST_CASE("criterion 12: no extinction in any builtin scenario") {
  bool pass = true;
  std::string detail;
  double global_min = 1e9;
  for (const auto& sc : harness::builtin_scenarios()) {
    for (std::uint64_t seed : sc.seeds) {
      const auto trace = harness::run_scenario(sc, seed, harness::RunOptions{});
      for (const auto& row : trace.rows) {
        if (row.t <= 10.0) continue;
        if (sc.initial.x1 > 0) global_min = std::min(global_min, row.x1);
        if (sc.initial.x2 > 0) global_min = std::min(global_min, row.x2);
        if (sc.initial.x2r > 0) global_min = std::min(global_min, row.x2r);
      }
    }
  }
  pass = global_min >= 0.2;
  char buf[96];
  std::snprintf(buf, sizeof(buf),
                "minimum biomass after the first 10 min: %.3f (bound 0.2)",
                global_min);
  report(12, pass, buf);
  CHECK(pass);
}
