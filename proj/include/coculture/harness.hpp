#pragma once

#include <coculture/control.hpp>
#include <coculture/observer.hpp>
#include <coculture/plant.hpp>
#include <coculture/rl.hpp>
#include <coculture/trace.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coculture::harness {

// Piecewise-constant reference schedule; the value at time t is the entry
// with the largest t_start <= t.
struct ScheduleStep {
  double t_start = 0.0;
  double value = 0.0;
};
using Schedule = std::vector<ScheduleStep>;

double schedule_value(const Schedule& schedule, double t);

enum class MixingController { none, switching, dqn };
enum class ReservoirController { none, pi, mpc, dqn };

std::string to_string(MixingController c);
std::string to_string(ReservoirController c);
MixingController mixing_controller_from_string(const std::string& name);
ReservoirController reservoir_controller_from_string(const std::string& name);

struct Perturbation {
  enum class Kind { bolus, growth_scale };
  Kind kind = Kind::bolus;
  double t = 0.0;
  double bolus_factor = 0.87;  // 3 mL into a 20 mL working volume
  double mu1_scale = 1.0;
  double mu2_scale = 1.0;
};

struct Scenario {
  std::string name;
  plant::PlantState initial;
  Schedule r_d, od_d, x2r_d;
  MixingController mixing = MixingController::switching;
  ReservoirController reservoir = ReservoirController::pi;
  double duration_min = 180.0;
  std::vector<Perturbation> events;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double sample_dt = 1.0;
  double facs_dt = 10.0;
  // Known inoculation ratio x2/x1 used to split the first measurement when
  // initializing the observer; unset falls back to an equal split.
  std::optional<double> initial_ratio;
};

enum class Mode { coupled, exchange };

struct RunOptions {
  Mode mode = Mode::coupled;
  plant::PlantParams params;
  observer::EkfConfig ekf;
  // Deployed switching magnitudes. The reservoir-injection gain is kept well
  // below the pump maximum: one full-throttle minute moves the slow strain by
  // a fifth of its setpoint, which turns the composition hold into a coarse
  // sawtooth and drags the reservoir below the recovery-gate threshold. The
  // convergence condition only needs the tau-scaled value to exceed mu1*.
  control::SwitchingGains gains{0.02, 0.02, 0.008};
  control::PiState pi;  // gains only; the integral state resets per run
  const rl::QNetwork* mixing_net = nullptr;
  const rl::QNetwork* reservoir_net = nullptr;
  plant::Model model = plant::Model::full;
  double max_substep = 0.1;
  // Exchange-mode file protocol. An empty dir means a fresh temp directory,
  // removed after the run unless keep_exchange_files is set.
  std::filesystem::path exchange_dir;
  int poll_interval_ms = 50;
  double poll_budget_s = 10.0;
  bool keep_exchange_files = false;
  std::string config_hash = "default";
};

// One closed-loop run. Per sample: measure -> observer update -> controller
// actions -> recovery gate -> reservoir compensation -> plant step. Exchange
// mode runs the plant and controller as two tasks that communicate only via
// per-step meas_<k>.csv / act_<k>.csv files and yields a trace bit-identical
// to coupled mode under the same seed.
ScenarioTrace run_scenario(const Scenario& s, std::uint64_t seed,
                           const RunOptions& opts);

// The experimental scenarios: regulation, ratio-tracking, od-tracking,
// robustness-bolus, reservoir-stepdown, reservoir-temperature.
std::vector<Scenario> builtin_scenarios(const plant::PlantParams& p = {});
const Scenario& find_scenario(const std::vector<Scenario>& list,
                              const std::string& name);

// ---- Trace evaluation ----------------------------------------------------

enum class Signal { ratio, od, x2r };
enum class Source { truth, estimate, facs };

struct SignalSeries {
  std::vector<double> t;
  std::vector<double> v;
  std::vector<double> ref;
};

// ratio = x2/x1 against r_d, od = x1+x2 against od_d, x2r against x2r_d.
// Source::facs samples ground truth at the FACS interval; Source::estimate
// reads the observer trajectory. Rows where the signal is undefined
// (e.g. ratio with x1 = 0) are dropped.
SignalSeries extract_signal(const ScenarioTrace& trace, Signal signal,
                            Source source, double facs_dt = 10.0);

struct SegmentMetrics {
  double t_begin = 0.0;
  double t_end = 0.0;
  double reference = 0.0;
  std::optional<double> settling_min;  // relative to t_begin
  std::optional<double> nrmse;         // from settling to segment end
  bool valid = false;                  // enough samples to evaluate
};

// Metrics per reference segment. Extra breakpoints (e.g. a perturbation
// instant) split segments on top of reference changes.
std::vector<SegmentMetrics> segment_metrics(
    const ScenarioTrace& trace, Signal signal, Source source,
    std::span<const double> extra_breakpoints = {}, double facs_dt = 10.0);

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

Aggregate aggregate(std::span<const double> values);

struct StatsRow {
  Signal signal = Signal::od;
  int segment = 0;
  double reference = 0.0;
  Aggregate settling;  // over replicates that settled
  Aggregate nrmse;
  int excluded = 0;  // replicates where the metric was undefined
};

// Per-signal, per-segment aggregation across replicate traces.
std::vector<StatsRow> replicate_stats(const std::vector<ScenarioTrace>& traces,
                                      Source source = Source::truth);

// Paired two-tailed t-test across replicates between two controller variants
// on a per-segment metric. Replicates where either side is undefined are
// dropped pairwise.
double paired_metric_pvalue(const std::vector<ScenarioTrace>& a,
                            const std::vector<ScenarioTrace>& b, Signal signal,
                            int segment, bool settling,
                            Source source = Source::truth);

}  // namespace coculture::harness
