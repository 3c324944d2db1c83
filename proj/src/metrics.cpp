#include <coculture/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coculture::metrics {

namespace {

// Regularized incomplete beta I_x(a, b) by continued fraction (Lentz).
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double steady_state_value(std::span<const double> signal) {
  if (signal.empty()) throw std::invalid_argument("steady_state: empty signal");
  if (signal.size() < 5)
    throw std::invalid_argument("steady_state: need at least 5 samples");
  const std::size_t n = signal.size();
  const std::size_t tail = (n + 4) / 5;  // ceil(0.2 n)
  double sum = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) sum += signal[i];
  return sum / static_cast<double>(tail);
}

std::optional<double> settling_time(std::span<const double> signal,
                                    std::span<const double> times) {
  if (signal.size() != times.size())
    throw std::invalid_argument("settling_time: size mismatch");
  const double ss = steady_state_value(signal);
  if (ss == 0.0)
    throw std::domain_error("settling_time: zero steady state, band undefined");
  const double band = 0.2 * std::fabs(ss);

  // Walk backwards: the settle index is the first of the trailing in-band run.
  std::size_t idx = signal.size();
  for (std::size_t i = signal.size(); i-- > 0;) {
    if (std::fabs(signal[i] - ss) <= band)
      idx = i;
    else
      break;
  }
  if (idx == signal.size()) return std::nullopt;
  return times[idx];
}

double nrmse(std::span<const double> signal, std::span<const double> times,
             double x_d, double t_s) {
  if (signal.size() != times.size())
    throw std::invalid_argument("nrmse: size mismatch");
  if (!(x_d > 0)) throw std::invalid_argument("nrmse: x_d must be positive");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (times[i] < t_s) continue;
    sum += std::fabs(signal[i] - x_d) / std::sqrt(x_d);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("nrmse: no samples at t >= t_s");
  return sum / static_cast<double>(n);
}

double student_t_cdf(double t, int dof) {
  if (dof < 1) throw std::invalid_argument("student_t_cdf: dof < 1");
  const double v = static_cast<double>(dof);
  const double x = v / (v + t * t);
  const double tail = 0.5 * incomplete_beta(v / 2.0, 0.5, x);
  return t >= 0 ? 1.0 - tail : tail;
}

double paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("ttest: size mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("ttest: need n >= 2");

  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);

  if (var == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  const double p = 2.0 * (1.0 - student_t_cdf(std::fabs(t), static_cast<int>(n) - 1));
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace coculture::metrics
