#include <coculture/trace.hpp>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace coculture::harness {

namespace {

constexpr const char* kHeader =
    "t,x1,x2,s1,x2r,y1,y2,x1_hat,x2_hat,d1,d2,dr,r_d,od_d,x2r_d";

std::array<double, 15> to_array(const TraceRow& r) {
  return {r.t,  r.x1, r.x2, r.s1, r.x2r, r.y1, r.y2,   r.x1_hat,
          r.x2_hat, r.d1, r.d2, r.dr, r.r_d, r.od_d, r.x2r_d};
}

TraceRow from_array(const std::array<double, 15>& a) {
  TraceRow r;
  r.t = a[0];
  r.x1 = a[1];
  r.x2 = a[2];
  r.s1 = a[3];
  r.x2r = a[4];
  r.y1 = a[5];
  r.y2 = a[6];
  r.x1_hat = a[7];
  r.x2_hat = a[8];
  r.d1 = a[9];
  r.d2 = a[10];
  r.dr = a[11];
  r.r_d = a[12];
  r.od_d = a[13];
  r.x2r_d = a[14];
  return r;
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void write_trace_csv(const ScenarioTrace& trace,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "# scenario=" << trace.meta.scenario << "\n";
  out << "# seed=" << trace.meta.seed << "\n";
  out << "# mixing_controller=" << trace.meta.mixing_controller << "\n";
  out << "# reservoir_controller=" << trace.meta.reservoir_controller << "\n";
  out << "# config_hash=" << trace.meta.config_hash << "\n";
  out << kHeader << "\n";
  for (const TraceRow& r : trace.rows) {
    const auto a = to_array(r);
    for (std::size_t i = 0; i < a.size(); ++i)
      out << (i ? "," : "") << fmt9(a[i]);
    out << "\n";
  }
}

ScenarioTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  ScenarioTrace trace;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      std::string val = line.substr(eq + 1);
      while (!key.empty() && key.front() == ' ') key.erase(key.begin());
      while (!key.empty() && key.back() == ' ') key.pop_back();
      if (key == "scenario") trace.meta.scenario = val;
      else if (key == "seed") trace.meta.seed = std::stoull(val);
      else if (key == "mixing_controller") trace.meta.mixing_controller = val;
      else if (key == "reservoir_controller")
        trace.meta.reservoir_controller = val;
      else if (key == "config_hash") trace.meta.config_hash = val;
      continue;
    }
    if (!header_seen) {
      if (line != kHeader)
        throw std::runtime_error("unexpected trace header in " + path.string());
      header_seen = true;
      continue;
    }
    std::array<double, 15> a{};
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("short trace row in " + path.string());
      a[i] = std::stod(cell);
    }
    trace.rows.push_back(from_array(a));
  }
  if (!header_seen)
    throw std::runtime_error("no trace header in " + path.string());
  return trace;
}

void write_trace_long_csv(const ScenarioTrace& trace,
                          const std::filesystem::path& path) {
  static constexpr const char* kSeries[] = {
      "x1", "x2",     "s1",     "x2r", "y1", "y2",  "x1_hat", "x2_hat",
      "d1", "d2", "dr", "r_d", "od_d", "x2r_d"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "t,series,value\n";
  for (const TraceRow& r : trace.rows) {
    const auto a = to_array(r);
    for (std::size_t i = 1; i < a.size(); ++i)
      out << fmt9(r.t) << "," << kSeries[i - 1] << "," << fmt9(a[i]) << "\n";
  }
}

}  // namespace coculture::harness
