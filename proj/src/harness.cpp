#include <coculture/harness.hpp>

#include <coculture/metrics.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace coculture::harness {

double schedule_value(const Schedule& schedule, double t) {
  if (schedule.empty()) throw std::invalid_argument("empty schedule");
  if (t < schedule.front().t_start - 1e-9)
    throw std::invalid_argument("schedule does not cover requested time");
  double v = schedule.front().value;
  for (const ScheduleStep& s : schedule) {
    if (s.t_start <= t + 1e-9) v = s.value;
  }
  return v;
}

std::string to_string(MixingController c) {
  switch (c) {
    case MixingController::none: return "none";
    case MixingController::switching: return "switching";
    case MixingController::dqn: return "dqn";
  }
  return "?";
}

std::string to_string(ReservoirController c) {
  switch (c) {
    case ReservoirController::none: return "none";
    case ReservoirController::pi: return "pi";
    case ReservoirController::mpc: return "mpc";
    case ReservoirController::dqn: return "dqn";
  }
  return "?";
}

MixingController mixing_controller_from_string(const std::string& name) {
  if (name == "none") return MixingController::none;
  if (name == "switching") return MixingController::switching;
  if (name == "dqn") return MixingController::dqn;
  throw std::invalid_argument("unknown mixing controller: " + name);
}

ReservoirController reservoir_controller_from_string(const std::string& name) {
  if (name == "none") return ReservoirController::none;
  if (name == "pi") return ReservoirController::pi;
  if (name == "mpc") return ReservoirController::mpc;
  if (name == "dqn") return ReservoirController::dqn;
  throw std::invalid_argument("unknown reservoir controller: " + name);
}

namespace {

// ---- loop participants -----------------------------------------------------

// Owns ground truth, the perturbation queue, and the measurement noise.
struct PlantTask {
  const Scenario& scenario;
  const RunOptions& opts;
  plant::PlantState state;
  plant::PlantParams params;  // events mutate this local copy
  Rng noise;
  std::vector<Perturbation> pending;
  std::size_t next_event = 0;

  PlantTask(const Scenario& s, std::uint64_t seed, const RunOptions& o)
      : scenario(s), opts(o), state(s.initial), params(o.params),
        noise(seed, 0), pending(s.events) {
    std::stable_sort(pending.begin(), pending.end(),
                     [](const Perturbation& a, const Perturbation& b) {
                       return a.t < b.t;
                     });
  }

  plant::Measurement sample(double t) {
    while (next_event < pending.size() && pending[next_event].t <= t + 1e-9) {
      const Perturbation& ev = pending[next_event];
      if (ev.kind == Perturbation::Kind::bolus) {
        state = plant::apply_bolus(state, params, ev.bolus_factor);
      } else {
        params.mu1_star *= ev.mu1_scale;
        params.mu2_star *= ev.mu2_scale;
      }
      ++next_event;
    }
    return plant::measure(state, params, noise, t);
  }

  void advance(const plant::ControlInput& u) {
    state = plant::step(state, u, params, scenario.sample_dt, opts.model,
                        opts.max_substep);
  }
};

// Observer plus all control laws; uses the nominal model parameters and sees
// the plant only through (y1, y2).
struct ControllerTask {
  const Scenario& scenario;
  const RunOptions& opts;
  observer::EkfEstimate est;
  bool est_ready = false;
  control::MixingErrorHistory history;
  control::PiState pi;
  control::RecoveryGate gate;
  plant::ControlInput u_prev;

  struct Decision {
    plant::ControlInput u;
    double x1_hat = 0.0, x2_hat = 0.0;
    double r_d = 0.0, od_d = 0.0, x2r_d = 0.0;
  };

  ControllerTask(const Scenario& s, const RunOptions& o)
      : scenario(s), opts(o), pi(o.pi) {
    if (s.mixing == MixingController::dqn && !o.mixing_net)
      throw std::invalid_argument("mixing DQN selected without weights");
    if (s.reservoir == ReservoirController::dqn && !o.reservoir_net)
      throw std::invalid_argument("reservoir DQN selected without weights");
  }

  Decision decide(double t, double y1, double y2) {
    Decision d;
    d.r_d = schedule_value(scenario.r_d, t);
    d.od_d = schedule_value(scenario.od_d, t);
    d.x2r_d = schedule_value(scenario.x2r_d, t);

    if (!est_ready) {
      est = observer::ekf_init(y1, opts.ekf, scenario.initial_ratio.value_or(1.0), t);
      est_ready = true;
    } else {
      est = observer::ekf_step(est, u_prev, y1, d.x2r_d, opts.params, opts.ekf,
                               scenario.sample_dt);
    }
    d.x1_hat = est.x1_hat;
    d.x2_hat = est.x2_hat;

    const control::Reference ref{d.r_d, d.od_d, d.x2r_d};
    plant::ControlInput mix{};
    if (scenario.mixing == MixingController::switching) {
      const auto split = control::desired_split(ref);
      mix = control::switching_law(
          control::classify_region(est.x1_hat, est.x2_hat, split.x1_d,
                                   split.x2_d),
          opts.gains);
    } else if (scenario.mixing == MixingController::dqn) {
      const auto split = control::desired_split(ref);
      history.push(est.x1_hat - split.x1_d, est.x2_hat - split.x2_d);
      mix = control::dqn_mixing_action(history, *opts.mixing_net);
    }

    const double y2c = std::max(y2, 0.0);
    const double d2 = control::recovery_gate(y2c, mix.d2, gate);

    double d_r2 = 0.0;
    switch (scenario.reservoir) {
      case ReservoirController::none:
        break;
      case ReservoirController::pi: {
        const auto res = control::pi_reservoir(pi, y2c, d.x2r_d,
                                               scenario.sample_dt,
                                               opts.params.d_min,
                                               opts.params.d_max);
        d_r2 = res.d_r2;
        pi = res.state;
        break;
      }
      case ReservoirController::mpc:
        d_r2 = control::mpc_reservoir(y2c, d.x2r_d, opts.params);
        break;
      case ReservoirController::dqn:
        d_r2 = control::dqn_reservoir_action(y2c, d.x2r_d, *opts.reservoir_net);
        break;
    }
    const double dr = control::compensate_reservoir(d_r2, d2, opts.params.d_min,
                                                    opts.params.d_max);

    d.u = plant::clamp_input({mix.d1, d2, dr}, opts.params);
    u_prev = d.u;
    return d;
  }
};

TraceRow make_row(double t, const plant::PlantState& state,
                  const plant::Measurement& m,
                  const ControllerTask::Decision& d) {
  TraceRow row;
  row.t = t;
  row.x1 = state.x1;
  row.x2 = state.x2;
  row.s1 = state.s1;
  row.x2r = state.x2r;
  row.y1 = m.y1;
  row.y2 = m.y2;
  row.x1_hat = d.x1_hat;
  row.x2_hat = d.x2_hat;
  row.d1 = d.u.d1;
  row.d2 = d.u.d2;
  row.dr = d.u.dr;
  row.r_d = d.r_d;
  row.od_d = d.od_d;
  row.x2r_d = d.x2r_d;
  return row;
}

TraceMeta make_meta(const Scenario& s, std::uint64_t seed,
                    const RunOptions& opts) {
  TraceMeta meta;
  meta.scenario = s.name;
  meta.seed = seed;
  meta.mixing_controller = to_string(s.mixing);
  meta.reservoir_controller = to_string(s.reservoir);
  meta.config_hash = opts.config_hash;
  return meta;
}

int sample_count(const Scenario& s) {
  if (s.duration_min < 0) throw std::invalid_argument("negative duration");
  if (!(s.sample_dt > 0)) throw std::invalid_argument("bad sample_dt");
  return static_cast<int>(std::llround(s.duration_min / s.sample_dt));
}

ScenarioTrace run_coupled(const Scenario& s, std::uint64_t seed,
                          const RunOptions& opts) {
  PlantTask plant_task(s, seed, opts);
  ControllerTask ctrl(s, opts);
  const int n = sample_count(s);

  ScenarioTrace trace;
  trace.meta = make_meta(s, seed, opts);
  trace.rows.reserve(n + 1);
  for (int k = 0; k <= n; ++k) {
    const double t = k * s.sample_dt;
    const plant::Measurement m = plant_task.sample(t);
    const auto d = ctrl.decide(t, m.y1, m.y2);
    trace.rows.push_back(make_row(t, plant_task.state, m, d));
    if (k < n) plant_task.advance(d.u);
  }
  return trace;
}

// ---- exchange-mode file protocol -------------------------------------------

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_complete_file(const std::filesystem::path& path,
                         const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;  // content ends with '\n'; the reader keys on that
}

// Returns the data cells of a two-line CSV once the file exists and is
// complete (terminated by a trailing newline); nullopt until then.
std::optional<std::vector<std::string>> try_read_record(
    const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  if (content.empty() || content.back() != '\n') return std::nullopt;
  std::stringstream lines(content);
  std::string line1, line2;
  if (!std::getline(lines, line1) || !std::getline(lines, line2))
    return std::nullopt;
  if (line1 != header) return std::nullopt;
  std::vector<std::string> cells;
  std::stringstream row(line2);
  std::string cell;
  while (std::getline(row, cell, ',')) cells.push_back(cell);
  return cells;
}

constexpr const char* kMeasHeader = "k,t_min,y1,y2";
constexpr const char* kActHeader = "k,d1,d2,dr";

template <typename TryRead>
auto poll_for(TryRead&& fn, const RunOptions& opts, const std::string& what) {
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration<double>(opts.poll_budget_s);
  for (;;) {
    auto r = fn();
    if (r) return *r;
    if (std::chrono::steady_clock::now() > deadline)
      throw std::runtime_error("exchange timeout waiting for " + what);
    std::this_thread::sleep_for(
        std::chrono::milliseconds(opts.poll_interval_ms));
  }
}

struct MeasRecord {
  double t = 0.0, y1 = 0.0, y2 = 0.0;
};

ScenarioTrace run_exchange(const Scenario& s, std::uint64_t seed,
                           const RunOptions& opts) {
  namespace fs = std::filesystem;
  fs::path dir = opts.exchange_dir;
  bool own_dir = false;
  if (dir.empty()) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    dir = fs::temp_directory_path() /
          ("coculture_xchg_" + s.name + "_" + std::to_string(seed) + "_" +
           std::to_string(stamp));
    own_dir = true;
  }
  fs::create_directories(dir);

  const int n = sample_count(s);
  struct PlantLog {
    plant::PlantState state;
    plant::Measurement m;
  };
  std::vector<PlantLog> plant_log(n + 1);
  std::vector<ControllerTask::Decision> ctrl_log(n + 1);

  auto meas_path = [&](int k) { return dir / ("meas_" + std::to_string(k) + ".csv"); };
  auto act_path = [&](int k) { return dir / ("act_" + std::to_string(k) + ".csv"); };

  std::exception_ptr plant_error, ctrl_error;

  std::thread plant_thread([&] {
    try {
      PlantTask plant_task(s, seed, opts);
      for (int k = 0; k <= n; ++k) {
        const double t = k * s.sample_dt;
        const plant::Measurement m = plant_task.sample(t);
        plant_log[k] = {plant_task.state, m};
        write_complete_file(meas_path(k),
                            std::string(kMeasHeader) + "\n" +
                                std::to_string(k) + "," + fmt17(t) + "," +
                                fmt17(m.y1) + "," + fmt17(m.y2) + "\n");
        const auto cells = poll_for(
            [&]() -> std::optional<std::vector<std::string>> {
              auto c = try_read_record(act_path(k), kActHeader);
              if (c && (c->size() != 4 || std::stoi((*c)[0]) != k))
                return std::nullopt;
              return c;
            },
            opts, "act_" + std::to_string(k));
        const plant::ControlInput u{std::stod(cells[1]), std::stod(cells[2]),
                                    std::stod(cells[3])};
        if (k < n) plant_task.advance(u);
      }
    } catch (...) {
      plant_error = std::current_exception();
    }
  });

  std::thread ctrl_thread([&] {
    try {
      ControllerTask ctrl(s, opts);
      for (int k = 0; k <= n; ++k) {
        const auto cells = poll_for(
            [&]() -> std::optional<std::vector<std::string>> {
              auto c = try_read_record(meas_path(k), kMeasHeader);
              if (c && (c->size() != 4 || std::stoi((*c)[0]) != k))
                return std::nullopt;
              return c;
            },
            opts, "meas_" + std::to_string(k));
        const MeasRecord m{std::stod(cells[1]), std::stod(cells[2]),
                           std::stod(cells[3])};
        const auto d = ctrl.decide(m.t, m.y1, m.y2);
        ctrl_log[k] = d;
        write_complete_file(act_path(k),
                            std::string(kActHeader) + "\n" +
                                std::to_string(k) + "," + fmt17(d.u.d1) + "," +
                                fmt17(d.u.d2) + "," + fmt17(d.u.dr) + "\n");
      }
    } catch (...) {
      ctrl_error = std::current_exception();
    }
  });

  plant_thread.join();
  ctrl_thread.join();
  if (own_dir && !opts.keep_exchange_files) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  if (ctrl_error) std::rethrow_exception(ctrl_error);
  if (plant_error) std::rethrow_exception(plant_error);

  ScenarioTrace trace;
  trace.meta = make_meta(s, seed, opts);
  trace.rows.reserve(n + 1);
  for (int k = 0; k <= n; ++k)
    trace.rows.push_back(make_row(k * s.sample_dt, plant_log[k].state,
                                  plant_log[k].m, ctrl_log[k]));
  return trace;
}

}  // namespace

ScenarioTrace run_scenario(const Scenario& s, std::uint64_t seed,
                           const RunOptions& opts) {
  opts.params.validate();
  opts.ekf.validate();
  if (s.r_d.empty() || s.od_d.empty() || s.x2r_d.empty())
    throw std::invalid_argument("scenario schedules must cover [0, duration]");
  if (opts.mode == Mode::coupled) return run_coupled(s, seed, opts);
  return run_exchange(s, seed, opts);
}

std::vector<Scenario> builtin_scenarios(const plant::PlantParams& p) {
  std::vector<Scenario> list;

  auto mixing_base = [&](const std::string& name, double x0) {
    Scenario s;
    s.name = name;
    s.initial = {x0, x0, p.s_in, 0.8, p.s_in};
    s.initial_ratio = 1.0;
    s.x2r_d = {{0.0, 0.85}};
    s.mixing = MixingController::switching;
    s.reservoir = ReservoirController::pi;
    return s;
  };

  {
    Scenario s = mixing_base("regulation", 0.4);
    s.r_d = {{0.0, 0.6}};
    s.od_d = {{0.0, 0.7}};
    s.duration_min = 180.0;
    list.push_back(s);
  }
  {
    Scenario s = mixing_base("ratio-tracking", 0.35);
    s.r_d = {{0.0, 1.0}, {60.0, 0.6}};
    s.od_d = {{0.0, 0.7}};
    s.duration_min = 180.0;
    list.push_back(s);
  }
  {
    Scenario s = mixing_base("od-tracking", 0.35);
    s.r_d = {{0.0, 1.0}};
    s.od_d = {{0.0, 0.7}, {60.0, 0.55}};
    s.duration_min = 180.0;
    list.push_back(s);
  }
  {
    Scenario s = mixing_base("robustness-bolus", 0.35);
    s.r_d = {{0.0, 1.5}};
    s.od_d = {{0.0, 0.7}};
    s.duration_min = 200.0;
    Perturbation bolus;
    bolus.kind = Perturbation::Kind::bolus;
    bolus.t = 100.0;
    bolus.bolus_factor = 0.87;
    s.events.push_back(bolus);
    list.push_back(s);
  }
  {
    Scenario s;
    s.name = "reservoir-stepdown";
    s.initial = {0.0, 0.0, p.s_in, 0.8, p.s_in};
    s.r_d = {{0.0, 1.0}};
    s.od_d = {{0.0, 0.7}};
    s.x2r_d = {{0.0, 0.8}, {30.0, 0.65}, {60.0, 0.5}};
    s.mixing = MixingController::none;
    s.reservoir = ReservoirController::pi;
    s.duration_min = 90.0;
    list.push_back(s);
  }
  {
    Scenario s;
    s.name = "reservoir-temperature";
    s.initial = {0.0, 0.0, p.s_in, 0.5, p.s_in};
    s.r_d = {{0.0, 1.0}};
    s.od_d = {{0.0, 0.7}};
    s.x2r_d = {{0.0, 0.5}};
    s.mixing = MixingController::none;
    s.reservoir = ReservoirController::pi;
    s.duration_min = 60.0;
    Perturbation cold;
    cold.kind = Perturbation::Kind::growth_scale;
    cold.t = 30.0;
    cold.mu1_scale = 1.0;
    cold.mu2_scale = 0.9;
    s.events.push_back(cold);
    list.push_back(s);
  }
  return list;
}

const Scenario& find_scenario(const std::vector<Scenario>& list,
                              const std::string& name) {
  for (const Scenario& s : list)
    if (s.name == name) return s;
  throw std::invalid_argument("unknown scenario: " + name);
}

// ---- trace evaluation -------------------------------------------------------

SignalSeries extract_signal(const ScenarioTrace& trace, Signal signal,
                            Source source, double facs_dt) {
  SignalSeries out;
  for (const TraceRow& row : trace.rows) {
    if (source == Source::facs) {
      const double phase = std::fmod(row.t, facs_dt);
      if (phase > 1e-9 && phase < facs_dt - 1e-9) continue;
    }
    const bool est = source == Source::estimate;
    double v = 0.0, ref = 0.0;
    switch (signal) {
      case Signal::ratio: {
        const double den = est ? row.x1_hat : row.x1;
        const double num = est ? row.x2_hat : row.x2;
        if (den <= 1e-9) continue;
        v = num / den;
        ref = row.r_d;
        break;
      }
      case Signal::od:
        v = est ? row.x1_hat + row.x2_hat : row.x1 + row.x2;
        ref = row.od_d;
        break;
      case Signal::x2r:
        // No observer runs on the reservoir; "estimate" is the raw measurement.
        v = est ? row.y2 : row.x2r;
        ref = row.x2r_d;
        break;
    }
    out.t.push_back(row.t);
    out.v.push_back(v);
    out.ref.push_back(ref);
  }
  return out;
}

std::vector<SegmentMetrics> segment_metrics(
    const ScenarioTrace& trace, Signal signal, Source source,
    std::span<const double> extra_breakpoints, double facs_dt) {
  const SignalSeries series = extract_signal(trace, signal, source, facs_dt);
  std::vector<SegmentMetrics> out;
  if (series.t.empty()) return out;

  std::vector<double> breaks = {series.t.front()};
  for (std::size_t i = 1; i < series.t.size(); ++i)
    if (series.ref[i] != series.ref[i - 1]) breaks.push_back(series.t[i]);
  for (double b : extra_breakpoints)
    if (b > series.t.front() && b < series.t.back()) breaks.push_back(b);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  breaks.push_back(series.t.back() + 1.0);  // sentinel

  for (std::size_t seg = 0; seg + 1 < breaks.size(); ++seg) {
    const double a = breaks[seg];
    const double b = breaks[seg + 1];
    std::vector<double> tt, vv;
    double ref = 0.0;
    for (std::size_t i = 0; i < series.t.size(); ++i) {
      if (series.t[i] < a - 1e-9 || series.t[i] >= b - 1e-9) continue;
      if (tt.empty()) ref = series.ref[i];
      tt.push_back(series.t[i]);
      vv.push_back(series.v[i]);
    }
    SegmentMetrics m;
    m.t_begin = a;
    m.t_end = tt.empty() ? a : tt.back();
    m.reference = ref;
    if (tt.size() >= 5) {
      const double ss = metrics::steady_state_value(vv);
      if (ss != 0.0) {
        m.valid = true;
        const auto settle = metrics::settling_time(vv, tt);
        if (settle) {
          m.settling_min = *settle - a;
          if (ref > 0) m.nrmse = metrics::nrmse(vv, tt, ref, *settle);
        }
      }
    }
    out.push_back(m);
  }
  return out;
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  for (double v : values) a.mean += v;
  a.mean /= a.n;
  if (a.n > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - a.mean) * (v - a.mean);
    a.sd = std::sqrt(acc / (a.n - 1));
  }
  return a;
}

std::vector<StatsRow> replicate_stats(const std::vector<ScenarioTrace>& traces,
                                      Source source) {
  if (traces.empty()) throw std::invalid_argument("replicate_stats: no traces");
  std::vector<StatsRow> rows;
  for (Signal signal : {Signal::ratio, Signal::od, Signal::x2r}) {
    std::vector<std::vector<SegmentMetrics>> per_trace;
    for (const auto& tr : traces)
      per_trace.push_back(segment_metrics(tr, signal, source));
    std::size_t n_seg = per_trace.front().size();
    for (const auto& segs : per_trace) n_seg = std::min(n_seg, segs.size());
    for (std::size_t seg = 0; seg < n_seg; ++seg) {
      StatsRow row;
      row.signal = signal;
      row.segment = static_cast<int>(seg);
      row.reference = per_trace.front()[seg].reference;
      std::vector<double> settled, errs;
      for (const auto& segs : per_trace) {
        const SegmentMetrics& m = segs[seg];
        if (m.valid && m.settling_min) settled.push_back(*m.settling_min);
        else ++row.excluded;
        if (m.valid && m.nrmse) errs.push_back(*m.nrmse);
      }
      row.settling = aggregate(settled);
      row.nrmse = aggregate(errs);
      rows.push_back(row);
    }
  }
  return rows;
}

double paired_metric_pvalue(const std::vector<ScenarioTrace>& a,
                            const std::vector<ScenarioTrace>& b, Signal signal,
                            int segment, bool settling, Source source) {
  const std::size_t n = std::min(a.size(), b.size());
  std::vector<double> va, vb;
  for (std::size_t i = 0; i < n; ++i) {
    const auto sa = segment_metrics(a[i], signal, source);
    const auto sb = segment_metrics(b[i], signal, source);
    if (segment >= static_cast<int>(sa.size()) ||
        segment >= static_cast<int>(sb.size()))
      continue;
    const auto pick = [settling](const SegmentMetrics& m) {
      return settling ? m.settling_min : m.nrmse;
    };
    const auto ma = pick(sa[segment]);
    const auto mb = pick(sb[segment]);
    if (!ma || !mb) continue;
    va.push_back(*ma);
    vb.push_back(*mb);
  }
  if (va.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return metrics::paired_ttest(va, vb);
}

}  // namespace coculture::harness
