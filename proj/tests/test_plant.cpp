#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <coculture/plant.hpp>

#include <cmath>

using namespace coculture;
using namespace coculture::plant;

namespace {

bool bitwise_equal(const PlantState& a, const PlantState& b) {
  return a.x1 == b.x1 && a.x2 == b.x2 && a.s1 == b.s1 && a.x2r == b.x2r &&
         a.s2 == b.s2;
}

double rel_diff(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-12});
  return std::fabs(a - b) / scale;
}

}  // namespace

TEST_CASE("monod rate") {
  CHECK(monod_rate(0.021, 0.1, 1e9) == doctest::Approx(0.021).epsilon(1e-9));
  CHECK(monod_rate(0.021, 0.1, 0.1) == doctest::Approx(0.0105).epsilon(1e-12));
  CHECK(monod_rate(0.021, 0.1, 0.0) == 0.0);
  CHECK_THROWS_AS(monod_rate(0.021, 0.1, -1e-9), std::domain_error);

  // bounded by mu* and monotone in s
  Rng rng(7);
  double prev = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double s = i * 0.05;
    const double mu = monod_rate(0.021, 0.1, s);
    CHECK(mu >= prev);
    CHECK(mu <= 0.021);
    CHECK(mu >= 0.0);
    prev = mu;
    (void)rng;
  }
}

TEST_CASE("full model derivatives") {
  PlantParams p;

  SUBCASE("empty reactor, no flow") {
    const PlantState d = full_derivatives({}, {}, p);
    CHECK(d.x1 == 0.0);
    CHECK(d.x2 == 0.0);
    CHECK(d.s1 == 0.0);
    CHECK(d.x2r == 0.0);
    CHECK(d.s2 == 0.0);
  }

  SUBCASE("abundant substrate growth") {
    PlantState s;
    s.x1 = 0.5;
    s.s1 = 1e9 * p.k1;
    const PlantState d = full_derivatives(s, {}, p);
    CHECK(d.x1 == doctest::Approx(0.0105).epsilon(1e-9));
  }

  SUBCASE("pure dilution pushes substrate toward the inlet level") {
    PlantState s;
    s.s1 = 5.0;
    ControlInput u;
    u.d1 = 0.01;
    const PlantState d = full_derivatives(s, u, p);
    CHECK(d.s1 == doctest::Approx((0.01 / p.tau) * (p.s_in - 5.0)));
    CHECK(d.s1 > 0.0);
  }
}

TEST_CASE("simplified model derivatives") {
  PlantParams p;

  SUBCASE("free growth") {
    PlantState s;
    s.x1 = 0.4;
    s.x2 = 0.4;
    s.x2r = 0.8;
    const PlantState d = simplified_derivatives(s, {}, p);
    CHECK(d.x1 == doctest::Approx(0.0084).epsilon(1e-12));
    CHECK(d.x2 == doctest::Approx(0.0044).epsilon(1e-12));
    CHECK(d.s1 == 0.0);
    CHECK(d.s2 == 0.0);
  }

  SUBCASE("coexistence equilibrium has zero derivatives") {
    // Effective D1 + D2 = mu1*, D_R2 = mu2*; then x2* = D2 x2r / (mu1*-mu2*).
    const double d2 = 0.002;
    const double d1 = p.mu1_star * p.tau - d2;
    const double dr = p.mu2_star * p.tau - d2;
    REQUIRE(d1 > 0);
    REQUIRE(dr > 0);
    PlantState s;
    s.x2r = 0.8;
    s.x1 = 0.45;
    s.x2 = (d2 / p.tau) * s.x2r / (p.mu1_star - p.mu2_star);
    const PlantState d = simplified_derivatives(s, {d1, d2, dr}, p);
    CHECK(std::fabs(d.x1) < 1e-12);
    CHECK(std::fabs(d.x2) < 1e-12);
    CHECK(std::fabs(d.x2r) < 1e-12);
  }

  SUBCASE("reservoir balance") {
    PlantState s;
    s.x2r = 0.8;
    ControlInput u;
    u.dr = p.mu2_star * p.tau;  // D_R2 effective equals mu2*
    const PlantState d = simplified_derivatives(s, u, p);
    CHECK(std::fabs(d.x2r) < 1e-15);
  }
}

TEST_CASE("integration step") {
  PlantParams p;

  SUBCASE("exponential growth oracle") {
    PlantState s;
    s.x1 = 0.1;
    const PlantState out = step(s, {}, p, 60.0, Model::simplified);
    const double expected = 0.1 * std::exp(p.mu1_star * 60.0);
    CHECK(rel_diff(out.x1, expected) < 1e-6);
    CHECK(out.x2 == 0.0);
  }

  SUBCASE("dt = 0 leaves the state untouched") {
    PlantState s{0.3, 0.2, 5.0, 0.7, 9.0};
    CHECK(bitwise_equal(step(s, {0.01, 0.01, 0.01}, p, 0.0, Model::full), s));
  }

  SUBCASE("substep refinement converges") {
    PlantState s{0.4, 0.4, p.s_in, 0.8, p.s_in};
    const ControlInput u{0.01, 0.005, 0.008};
    const PlantState a = step(s, u, p, 60.0, Model::full, 0.1);
    const PlantState b = step(s, u, p, 60.0, Model::full, 0.05);
    CHECK(rel_diff(a.x1, b.x1) < 1e-8);
    CHECK(rel_diff(a.x2, b.x2) < 1e-8);
    CHECK(rel_diff(a.s1, b.s1) < 1e-8);
    CHECK(rel_diff(a.x2r, b.x2r) < 1e-8);
    CHECK(rel_diff(a.s2, b.s2) < 1e-8);
  }

  SUBCASE("non-finite state is rejected") {
    PlantState s;
    s.x1 = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(step(s, {}, p, 1.0, Model::full), std::runtime_error);
  }
}

TEST_CASE("measurement") {
  PlantParams p;

  SUBCASE("noise-free is exact") {
    p.meas_noise_var = 0.0;
    PlantState s;
    s.x1 = 0.3;
    s.x2 = 0.2;
    s.x2r = 0.55;
    Rng rng(1, 0);
    const Measurement m = measure(s, p, rng, 12.0);
    CHECK(m.y1 == 0.5);
    CHECK(m.y2 == 0.55);
    CHECK(m.t == 12.0);
  }

  SUBCASE("noise statistics") {
    PlantState s;
    s.x1 = 0.3;
    s.x2 = 0.2;
    Rng rng(42, 0);
    const int n = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      const Measurement m = measure(s, p, rng, 0.0);
      const double w = m.y1 - 0.5;
      sum += w;
      sumsq += w * w;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    const double sigma = std::sqrt(p.meas_noise_var);
    CHECK(std::fabs(mean) < 4.0 * sigma / 100.0);  // 4 sigma of the sample mean
    CHECK(var == doctest::Approx(p.meas_noise_var).epsilon(0.10));
  }
}

TEST_CASE("media bolus") {
  PlantParams p;
  PlantState s{0.4, 0.25, 6.0, 0.8, 9.0};

  SUBCASE("factor 1 is identity") {
    CHECK(bitwise_equal(apply_bolus(s, p, 1.0), s));
  }

  SUBCASE("dilution arithmetic") {
    const PlantState out = apply_bolus(s, p, 0.87);
    CHECK(out.x1 == doctest::Approx(0.348).epsilon(1e-12));
    CHECK(out.x2 == doctest::Approx(0.25 * 0.87).epsilon(1e-12));
    CHECK(out.s1 == doctest::Approx(6.0 * 0.87 + 0.13 * p.s_in).epsilon(1e-12));
    CHECK(out.x2r == s.x2r);
    CHECK(out.s2 == s.s2);
  }

  SUBCASE("composition is preserved") {
    for (double f : {0.5, 0.87, 0.99}) {
      const PlantState out = apply_bolus(s, p, f);
      CHECK(out.x2 / out.x1 == doctest::Approx(s.x2 / s.x1).epsilon(1e-12));
    }
  }

  SUBCASE("factor bounds") {
    CHECK_THROWS_AS(apply_bolus(s, p, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(apply_bolus(s, p, 1.5), std::invalid_argument);
  }
}

TEST_CASE("non-negativity under admissible inputs") {
  PlantParams p;
  Rng rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    PlantState s;
    s.x1 = rng.next_double();
    s.x2 = rng.next_double();
    s.s1 = rng.next_double() * p.s_in;
    s.x2r = rng.next_double();
    s.s2 = rng.next_double() * p.s_in;
    const Model model = trial % 2 ? Model::full : Model::simplified;
    for (int k = 0; k < 120; ++k) {
      const ControlInput u{0.02 * rng.next_double(), 0.02 * rng.next_double(),
                           0.02 * rng.next_double()};
      s = step(s, u, p, 1.0, model);
      CHECK(s.x1 >= 0.0);
      CHECK(s.x2 >= 0.0);
      CHECK(s.s1 >= 0.0);
      CHECK(s.x2r >= 0.0);
      CHECK(s.s2 >= 0.0);
    }
  }
}

TEST_CASE("simplified and full models agree when substrate is abundant") {
  PlantParams p;
  p.s_in = 50.0;  // keeps s >= 100 * k throughout the hour
  PlantState full_state{0.3, 0.3, 50.0, 0.8, 50.0};
  PlantState simp_state = full_state;
  const ControlInput u{0.008, 0.004, 0.006};
  for (int k = 0; k < 60; ++k) {
    full_state = step(full_state, u, p, 1.0, Model::full);
    simp_state = step(simp_state, u, p, 1.0, Model::simplified);
    REQUIRE(full_state.s1 >= 100.0 * std::max(p.k1, p.k2) * 0.99);
  }
  CHECK(rel_diff(full_state.x1, simp_state.x1) < 0.01);
  CHECK(rel_diff(full_state.x2, simp_state.x2) < 0.01);
  CHECK(rel_diff(full_state.x2r, simp_state.x2r) < 0.01);
}

TEST_CASE("determinism") {
  PlantParams p;
  auto run = [&]() {
    PlantState s{0.4, 0.4, p.s_in, 0.8, p.s_in};
    Rng rng(11, 0);
    double checksum = 0.0;
    for (int k = 0; k < 60; ++k) {
      const ControlInput u{0.02 * rng.next_double(), 0.02 * rng.next_double(),
                           0.02 * rng.next_double()};
      s = step(s, u, p, 1.0, Model::full);
      const Measurement m = measure(s, p, rng, k + 1.0);
      checksum += m.y1 + m.y2;
    }
    return std::pair{s, checksum};
  };
  const auto [s1, c1] = run();
  const auto [s2, c2] = run();
  CHECK(bitwise_equal(s1, s2));
  CHECK(c1 == c2);
}

TEST_CASE("parameter validation") {
  PlantParams p;
  CHECK_NOTHROW(p.validate());
  p.mu2_star = 0.03;  // violates mu1 > mu2
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}
