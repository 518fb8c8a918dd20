#include "doctest.h"

#include "nmrc/errors.hpp"
#include "nmrc/geometry.hpp"

#include <cmath>
#include <random>

using namespace nmrc;

namespace {

SpinRates rates_ms(double t1, double t2) { return RelaxationParams::from_ms(t1, t2).rates(); }

// Laplace expansion along the first row, recursing to 3x3 and 2x2.
double cofactor_det(const Eigen::MatrixXd& a) {
  const auto n = a.rows();
  if (n == 1) return a(0, 0);
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::MatrixXd minor(n - 1, n - 1);
    for (Eigen::Index r = 1; r < n; ++r) {
      Eigen::Index c2 = 0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, c2++) = a(r, c);
      }
    }
    s += ((j % 2) ? -1.0 : 1.0) * a(0, j) * cofactor_det(minor);
  }
  return s;
}

Eigen::Vector4d random_vec4(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng), n(rng)};
}

}  // namespace

TEST_CASE("singular locus membership") {
  const SpinRates r = rates_ms(2000, 200);
  const double z0 = r.gamma / (2 * r.delta());
  CHECK(z0 == doctest::Approx(-1.0 / 18.0).epsilon(1e-12));

  const auto vertical = singular_locus({0.0, 0.3}, r);
  CHECK(vertical.on_vertical);
  CHECK_FALSE(vertical.on_horizontal);
  const auto horizontal = singular_locus({-0.4, z0}, r);
  CHECK(horizontal.on_horizontal);
  CHECK_FALSE(horizontal.on_vertical);
  CHECK(std::abs(horizontal.det_value) < 1e-12);
  const auto off = singular_locus({-0.4, 0.5}, r);
  CHECK_FALSE(off.on_vertical);
  CHECK_FALSE(off.on_horizontal);

  const HorizontalLine line = horizontal_line(r);
  CHECK(line.z0 == doctest::Approx(z0));
  CHECK(line.admissible_in_ball);
  CHECK_THROWS_AS(horizontal_line(rates_ms(1000, 1000)), DegenerateError);
}

TEST_CASE("horizontal singular control matches the closed form") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> t1(200, 3000), frac(0.02, 0.5), yy(0.02, 0.99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = t1(rng);
    const SpinRates r = rates_ms(a, frac(rng) * a);
    const double z0 = horizontal_line(r).z0;
    const double ymax = std::sqrt(1 - z0 * z0);
    const double y = (i % 2 ? -1.0 : 1.0) * yy(rng) * ymax;
    // u = gamma (2 Gamma - gamma) / (2 delta y)
    const double k = r.gamma * (2 * r.big_gamma - r.gamma) / (2 * r.delta());
    const double u = singular_control_2d({y, z0}, r);
    worst = std::max(worst, std::abs(u - k / y) / std::abs(k / y));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("vertical singular control vanishes") {
  const SpinRates r = rates_ms(2000, 200);
  for (double z : {-0.9, -0.3, 0.2, 0.8}) {
    CHECK(std::abs(singular_control_2d({0.0, z}, r)) <= 1e-14);
  }
  CHECK_THROWS_AS(singular_control_2d({0.3, 0.5}, r), DomainError);
}

TEST_CASE("saturation point") {
  const double m = kTwoPi;
  for (auto [t1, t2] : {std::pair{2000.0, 200.0}, std::pair{920.0, 100.0}}) {
    const SpinRates r = rates_ms(t1, t2);
    const double expected =
        r.gamma * (2 * r.big_gamma - r.gamma) / (2 * std::abs(r.delta()) * m);
    CHECK(saturation_point(r, m) == doctest::Approx(expected).epsilon(1e-12));
    const double z0 = horizontal_line(r).z0;
    CHECK(std::abs(singular_control_2d({-expected, z0}, r)) == doctest::Approx(m).epsilon(1e-10));
  }
  // Frozen from the closed form for the grey preset.
  CHECK(saturation_point(rates_ms(920, 100), m) == doctest::Approx(5.6825e-3).epsilon(1e-4));
}

TEST_CASE("collinear set misses the horizontal line unless gamma = 2 Gamma") {
  for (auto [t1, t2] : {std::pair{2000.0, 200.0}, std::pair{920.0, 100.0},
                        std::pair{780.0, 90.0}, std::pair{1300.0, 200.0}}) {
    const SpinRates r = rates_ms(t1, t2);
    const double z0 = horizontal_line(r).z0;
    double min_abs = std::numeric_limits<double>::infinity();
    const double ymax = std::sqrt(1 - z0 * z0);
    for (int i = 0; i <= 2000; ++i) {
      const double y = -ymax + 2 * ymax * i / 2000.0;
      min_abs = std::min(min_abs, std::abs(*planar_determinants({y, z0}, r).d_second));
    }
    CHECK(min_abs > 1e-6);
  }
  // T2 = 2 T1: the line is z = 1 and touches the collinear set at the pole.
  const SpinRates r = rates_ms(500, 1000);
  CHECK(r.gamma == doctest::Approx(2 * r.big_gamma));
  const double z0 = horizontal_line(r).z0;
  CHECK(z0 == doctest::Approx(1.0));
  CHECK(std::abs(*planar_determinants({0.0, z0}, r).d_second) < 1e-14);
}

TEST_CASE("4x4 determinants agree with the cofactor oracle") {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector4d c0 = random_vec4(rng), c1 = random_vec4(rng), c2 = random_vec4(rng),
                          c3 = random_vec4(rng);
    Eigen::Matrix4d m;
    m << c0, c1, c2, c3;
    const double oracle = cofactor_det(m);
    const double d = det4_columns(c0, c1, c2, c3);
    worst = std::max(worst, std::abs(d - oracle) / std::max(std::abs(oracle), 1e-300));
    // Antisymmetry under a column swap.
    CHECK(det4_columns(c1, c0, c2, c3) == doctest::Approx(-d).epsilon(1e-12));
    CHECK(det4_columns(c0, c1, c3, c2) == doctest::Approx(-d).epsilon(1e-12));
    // Linearity in a column.
    const Eigen::Vector4d v = random_vec4(rng);
    const double a = 0.7, b = -1.3;
    CHECK(det4_columns(a * c0 + b * v, c1, c2, c3) ==
          doctest::Approx(a * d + b * det4_columns(v, c1, c2, c3)).epsilon(1e-10).scale(1.0));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("two-spin determinants through the cofactor oracle") {
  const SpinRates r1 = rates_ms(2000, 200), r2 = rates_ms(2500, 2500);
  const ProductState q{{-0.6, -0.05}, {-0.3, 0.4}};
  const auto d = two_spin_determinants(q, r1, r2);
  Eigen::Matrix4d m;
  m << eval_field(Field::kDrift, q, r1, r2), eval_field(Field::kControl, q, r1, r2),
      eval_bracket(Bracket::kAd1, q, r1, r2), eval_bracket(Bracket::kAd101, q, r1, r2);
  CHECK(d.d == doctest::Approx(cofactor_det(m)).epsilon(1e-10));
  m.col(3) = eval_bracket(Bracket::kAd100, q, r1, r2);
  CHECK(d.d_prime == doctest::Approx(cofactor_det(m)).epsilon(1e-10));
}

TEST_CASE("line speed and clock form") {
  const SpinRates r = rates_ms(2000, 200);
  const double z0 = horizontal_line(r).z0;
  const SpinState q{-0.5, z0};
  const auto d = planar_determinants(q, r);
  const LineSpeed expected = d.d * *d.d_second > 0 ? LineSpeed::kFast : LineSpeed::kSlow;
  CHECK(classify_singular_line(q, r) == expected);
  // sign of y (gamma - 2 delta z)
  const SpinState p{0.3, 0.2};
  const double v = p.y * (r.gamma - 2 * r.delta() * p.z);
  CHECK(clock_form_sign(p, r) == (v > 0 ? 1 : -1));
  CHECK(clock_form_sign({0.0, 0.2}, r) == 0);
}
