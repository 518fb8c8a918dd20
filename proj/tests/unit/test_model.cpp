#include "doctest.h"

#include "nmrc/errors.hpp"
#include "nmrc/model.hpp"
#include "nmrc/ode.hpp"

#include <cmath>
#include <random>

using namespace nmrc;

namespace {

// Random point strictly inside the unit disk.
SpinState random_disk_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    SpinState q{u(rng), u(rng)};
    if (q.y * q.y + q.z * q.z < 1.0) return q;
  }
}

SpinRates random_rates(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t1(0.05, 3.0);
  std::uniform_real_distribution<double> frac(0.02, 1.9);
  const double a = t1(rng);
  return normalize_params(a, frac(rng) * a, kDefaultOmegaMax);
}

// Central difference Jacobian of a planar vector function (exact up to
// round-off for the affine fields of the model).
template <class F>
Eigen::Matrix2d fd_jacobian(F f, const SpinState& q, double h = 1e-4) {
  Eigen::Matrix2d j;
  const Eigen::Vector2d dy = (f({q.y + h, q.z}) - f({q.y - h, q.z})) / (2 * h);
  const Eigen::Vector2d dz = (f({q.y, q.z + h}) - f({q.y, q.z - h})) / (2 * h);
  j.col(0) = dy;
  j.col(1) = dz;
  return j;
}

// [X, Y] = DX Y - DY X by finite differences of the two fields.
template <class FX, class FY>
Eigen::Vector2d fd_bracket(FX fx, FY fy, const SpinState& q) {
  return fd_jacobian(fx, q) * fy(q) - fd_jacobian(fy, q) * fx(q);
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST_CASE("normalized rates of the fluid preset") {
  const SpinRates r = normalize_params(2.0, 0.2, kDefaultOmegaMax);
  // Gamma = 1 / (32.3 * T2) once omega_max = 2 pi 32.3.
  CHECK(r.big_gamma == doctest::Approx(1.0 / (32.3 * 0.2)).epsilon(1e-14));
  CHECK(r.gamma == doctest::Approx(1.0 / (32.3 * 2.0)).epsilon(1e-14));
  CHECK(r.big_gamma == doctest::Approx(0.154799).epsilon(1e-6));
  CHECK(r.gamma == doctest::Approx(0.0154799).epsilon(1e-6));
}

TEST_CASE("normalize_params is homogeneous") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> c(0.1, 10.0);
  for (int i = 0; i < 50; ++i) {
    const SpinRates r = random_rates(rng);
    const double t1 = 2 * std::numbers::pi / (kDefaultOmegaMax * r.gamma);
    const double t2 = 2 * std::numbers::pi / (kDefaultOmegaMax * r.big_gamma);
    const double k = c(rng);
    const SpinRates s = normalize_params(k * t1, k * t2, kDefaultOmegaMax / k);
    CHECK(s.big_gamma == doctest::Approx(r.big_gamma).epsilon(1e-12));
    CHECK(s.gamma == doctest::Approx(r.gamma).epsilon(1e-12));
  }
}

TEST_CASE("physical parameters are validated") {
  CHECK_THROWS_AS(RelaxationParams::from_ms(100, 250).validate(), DomainError);
  CHECK_THROWS_AS(RelaxationParams::from_ms(-1, 1).validate(), DomainError);
  CHECK_NOTHROW(RelaxationParams::from_ms(100, 200).validate());
  CHECK(physical_time(1.0, kDefaultOmegaMax) == doctest::Approx(1.0 / 32.3));
}

TEST_CASE("presets") {
  const auto fluid = species_preset("fluid");
  CHECK(fluid.t1 == doctest::Approx(2.0));
  CHECK(fluid.t2 == doctest::Approx(0.2));
  CHECK(species_presets().size() == 6);
  CHECK_THROWS_AS(species_preset("plasma"), DomainError);

  const auto pair = config_from_preset("fluid-water");
  REQUIRE(pair.spin2.has_value());
  CHECK(pair.spin2->t1 == doctest::Approx(2.5));
  const auto custom = config_from_preset("grey/white");
  REQUIRE(custom.spin2.has_value());
  CHECK(custom.spin2->t2 == doctest::Approx(0.09));
  CHECK_FALSE(config_from_preset("grey").spin2.has_value());
}

TEST_CASE("config JSON round trip") {
  const auto cfg = parse_model_config(
      R"({"spin1": {"t1_ms": 920, "t2_ms": 100}, "spin2": {"t1_ms": 780, "t2_ms": 90}, "omega_max_hz": 50})");
  CHECK(cfg.spin1.t1 == doctest::Approx(0.92));
  CHECK(cfg.omega_max == doctest::Approx(kTwoPi * 50));
  const auto back = parse_model_config(model_config_to_json(cfg));
  CHECK(back.spin2->t2 == doctest::Approx(0.09));
  CHECK(back.omega_max == doctest::Approx(cfg.omega_max));
  CHECK_THROWS_AS(parse_model_config(R"({"spin2": {"t1_ms": 780, "t2_ms": 90}})"), DomainError);
  CHECK_THROWS_AS(parse_model_config("not json"), DomainError);
}

TEST_CASE("analytic brackets match finite-difference brackets") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const SpinRates r = random_rates(rng);
    const SpinState q = random_disk_point(rng);
    auto f0 = [&](const SpinState& s) { return eval_field(Field::kDrift, s, r); };
    auto f1 = [&](const SpinState& s) { return eval_field(Field::kControl, s, r); };
    auto ad1 = [&](const SpinState& s) { return Eigen::Vector2d(fd_bracket(f1, f0, s)); };
    const Eigen::Vector2d fd_ad1 = ad1(q);
    const Eigen::Vector2d fd_ad100 = fd_bracket(ad1, f0, q);
    const Eigen::Vector2d fd_ad101 = fd_bracket(ad1, f1, q);
    worst = std::max(worst, rel_err(eval_bracket(Bracket::kAd1, q, r), fd_ad1));
    worst = std::max(worst, rel_err(eval_bracket(Bracket::kAd100, q, r), fd_ad100));
    worst = std::max(worst, rel_err(eval_bracket(Bracket::kAd101, q, r), fd_ad101));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("two-spin values are the concatenation of single-spin values") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const SpinRates r1 = random_rates(rng), r2 = random_rates(rng);
    const ProductState q{random_disk_point(rng), random_disk_point(rng)};
    const SpinSystem sys = SpinSystem::pair(r1, r2);
    const Vec x = q.flatten();
    for (Field f : {Field::kDrift, Field::kControl}) {
      const Eigen::Vector4d both = eval_field(f, q, r1, r2);
      CHECK((both.head<2>() - eval_field(f, q.spin1, r1)).norm() == 0.0);
      CHECK((both.tail<2>() - eval_field(f, q.spin2, r2)).norm() == 0.0);
      CHECK((sys.field(f, x) - both).norm() <= 1e-15);
      // No cross terms in the Jacobian.
      CHECK(sys.field_jacobian(f).block(0, 2, 2, 2).norm() == 0.0);
      CHECK(sys.field_jacobian(f).block(2, 0, 2, 2).norm() == 0.0);
    }
    for (Bracket b : {Bracket::kAd1, Bracket::kAd100, Bracket::kAd101}) {
      const Eigen::Vector4d both = eval_bracket(b, q, r1, r2);
      CHECK((both.head<2>() - eval_bracket(b, q.spin1, r1)).norm() == 0.0);
      CHECK((both.tail<2>() - eval_bracket(b, q.spin2, r2)).norm() == 0.0);
      CHECK((sys.bracket(b, x) - both).norm() <= 1e-15);
      // Constant Jacobian reproduces the affine field.
      const Vec lin = sys.bracket_jacobian(b) * x + sys.bracket(b, Vec::Zero(4));
      CHECK((lin - both).norm() <= 1e-13);
    }
  }
}

TEST_CASE("random bang sequences keep the state in the disk") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dur(0.05, 2.0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const SpinRates r = random_rates(rng);
    const SpinSystem sys = SpinSystem::single(r);
    Vec x = sys.north_pole();
    if (trial % 2) x = random_disk_point(rng).vec();
    for (int k = 0; k < 10; ++k) {
      const double u = coin(rng) ? kTwoPi : -kTwoPi;
      auto rhs = [&](double, const Vec& s) {
        return Vec(sys.field(Field::kDrift, s) + u * sys.field(Field::kControl, s));
      };
      const auto sol = integrate_ode(rhs, 0.0, x, dur(rng));
      for (const auto& s : sol.y) worst = std::max(worst, s.squaredNorm());
      x = sol.final_state();
    }
  }
  CHECK(worst <= 1.0 + 1e-9);
}
