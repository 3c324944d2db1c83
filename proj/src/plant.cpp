#include <coculture/plant.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coculture::plant {

namespace {

bool all_finite(const PlantState& s) {
  return std::isfinite(s.x1) && std::isfinite(s.x2) && std::isfinite(s.s1) &&
         std::isfinite(s.x2r) && std::isfinite(s.s2);
}

PlantState clamp_nonneg(PlantState s) {
  s.x1 = std::max(s.x1, 0.0);
  s.x2 = std::max(s.x2, 0.0);
  s.s1 = std::max(s.s1, 0.0);
  s.x2r = std::max(s.x2r, 0.0);
  s.s2 = std::max(s.s2, 0.0);
  return s;
}

PlantState axpy(const PlantState& a, double h, const PlantState& d) {
  return {a.x1 + h * d.x1, a.x2 + h * d.x2, a.s1 + h * d.s1,
          a.x2r + h * d.x2r, a.s2 + h * d.s2};
}

}  // namespace

void PlantParams::validate() const {
  if (!(mu1_star > mu2_star && mu2_star > 0))
    throw std::invalid_argument("PlantParams: need mu1_star > mu2_star > 0");
  if (!(k1 > 0 && k2 > 0)) throw std::invalid_argument("PlantParams: k <= 0");
  if (!(s_in > 0)) throw std::invalid_argument("PlantParams: s_in <= 0");
  if (!(tau > 0)) throw std::invalid_argument("PlantParams: tau <= 0");
  if (!(d_min >= 0 && d_min < d_max))
    throw std::invalid_argument("PlantParams: need 0 <= d_min < d_max");
  if (!(x_min > 0 && x_min < x_max))
    throw std::invalid_argument("PlantParams: need 0 < x_min < x_max");
  if (!(meas_noise_var >= 0))
    throw std::invalid_argument("PlantParams: negative noise variance");
}

double monod_rate(double mu_star, double k, double s) {
  if (s < 0) throw std::domain_error("monod_rate: negative substrate");
  return mu_star * s / (k + s);
}

PlantState full_derivatives(const PlantState& state, const ControlInput& u,
                            const PlantParams& p) {
  const double d1 = u.d1 / p.tau;
  const double d2 = u.d2 / p.tau;
  const double dr = u.dr / p.tau;
  const double mu1 = monod_rate(p.mu1_star, p.k1, state.s1);
  const double mu2_mix = monod_rate(p.mu2_star, p.k2, state.s1);
  const double mu2_res = monod_rate(p.mu2_star, p.k2, state.s2);

  PlantState d;
  d.x1 = mu1 * state.x1 - d1 * state.x1 - d2 * state.x1;
  d.x2 = mu2_mix * state.x2 - d1 * state.x2 + d2 * (state.x2r - state.x2);
  d.s1 = -mu1 * state.x1 - mu2_mix * state.x2 + d1 * (p.s_in - state.s1) +
         d2 * (state.s2 - state.s1);
  d.x2r = mu2_res * state.x2r - dr * state.x2r - d2 * state.x2r;
  d.s2 = -mu2_res * state.x2r + (dr + d2) * (p.s_in - state.s2);
  return d;
}

PlantState simplified_derivatives(const PlantState& state,
                                  const ControlInput& u,
                                  const PlantParams& p) {
  const double d1 = u.d1 / p.tau;
  const double d2 = u.d2 / p.tau;
  const double dr2 = (u.dr + u.d2) / p.tau;  // D_R2 = D_R + D_2

  PlantState d;
  d.x1 = p.mu1_star * state.x1 - (d1 + d2) * state.x1;
  d.x2 = p.mu2_star * state.x2 - d1 * state.x2 + d2 * (state.x2r - state.x2);
  d.s1 = 0.0;
  d.x2r = p.mu2_star * state.x2r - dr2 * state.x2r;
  d.s2 = 0.0;
  return d;
}

PlantState step(const PlantState& state, const ControlInput& u,
                const PlantParams& p, double dt, Model model,
                double max_substep) {
  if (dt < 0) throw std::invalid_argument("step: negative dt");
  if (!all_finite(state)) throw std::runtime_error("step: non-finite state");
  if (dt == 0) return state;
  if (!(max_substep > 0)) throw std::invalid_argument("step: bad substep");

  auto deriv = (model == Model::full) ? full_derivatives
                                      : simplified_derivatives;
  const int n = static_cast<int>(std::ceil(dt / max_substep));
  const double h = dt / n;

  PlantState s = state;
  for (int i = 0; i < n; ++i) {
    const PlantState k1 = deriv(s, u, p);
    const PlantState k2 = deriv(axpy(s, h / 2, k1), u, p);
    const PlantState k3 = deriv(axpy(s, h / 2, k2), u, p);
    const PlantState k4 = deriv(axpy(s, h, k3), u, p);
    s.x1 += h / 6 * (k1.x1 + 2 * k2.x1 + 2 * k3.x1 + k4.x1);
    s.x2 += h / 6 * (k1.x2 + 2 * k2.x2 + 2 * k3.x2 + k4.x2);
    s.s1 += h / 6 * (k1.s1 + 2 * k2.s1 + 2 * k3.s1 + k4.s1);
    s.x2r += h / 6 * (k1.x2r + 2 * k2.x2r + 2 * k3.x2r + k4.x2r);
    s.s2 += h / 6 * (k1.s2 + 2 * k2.s2 + 2 * k3.s2 + k4.s2);
    s = clamp_nonneg(s);
    if (!all_finite(s)) throw std::runtime_error("step: diverged");
  }
  return s;
}

Measurement measure(const PlantState& state, const PlantParams& p, Rng& noise,
                    double t) {
  const double sd = std::sqrt(p.meas_noise_var);
  const double w1 = noise.next_gaussian();
  const double w2 = noise.next_gaussian();
  Measurement m;
  m.y1 = state.x1 + state.x2 + sd * w1;
  m.y2 = state.x2r + sd * w2;
  m.t = t;
  return m;
}

PlantState apply_bolus(const PlantState& state, const PlantParams& p,
                       double dilution_factor) {
  if (!(dilution_factor > 0 && dilution_factor <= 1))
    throw std::invalid_argument("apply_bolus: factor outside (0, 1]");
  PlantState s = state;
  s.x1 *= dilution_factor;
  s.x2 *= dilution_factor;
  s.s1 = s.s1 * dilution_factor + (1 - dilution_factor) * p.s_in;
  return s;
}

ControlInput clamp_input(const ControlInput& u, const PlantParams& p) {
  auto cl = [&](double v) { return std::clamp(v, p.d_min, p.d_max); };
  return {cl(u.d1), cl(u.d2), cl(u.dr)};
}

}  // namespace coculture::plant
