#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace coculture::harness {

// One sample of a closed-loop run: ground truth, measurements, estimates,
// the commands applied over [t, t+dt), and the active references.
struct TraceRow {
  double t = 0.0;
  double x1 = 0.0, x2 = 0.0, s1 = 0.0, x2r = 0.0;
  double y1 = 0.0, y2 = 0.0;
  double x1_hat = 0.0, x2_hat = 0.0;
  double d1 = 0.0, d2 = 0.0, dr = 0.0;
  double r_d = 0.0, od_d = 0.0, x2r_d = 0.0;
};

struct TraceMeta {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string mixing_controller = "none";
  std::string reservoir_controller = "none";
  std::string config_hash = "default";
};

struct ScenarioTrace {
  TraceMeta meta;
  std::vector<TraceRow> rows;
};

// Trace CSV: '#' metadata lines, a header, then one row per sample with
// 9 significant digits.
void write_trace_csv(const ScenarioTrace& trace,
                     const std::filesystem::path& path);
ScenarioTrace read_trace_csv(const std::filesystem::path& path);

// Plot-ready long format: t,series,value.
void write_trace_long_csv(const ScenarioTrace& trace,
                          const std::filesystem::path& path);

}  // namespace coculture::harness
