#include "doctest.h"

#include "nmrc/conjugate.hpp"
#include "nmrc/errors.hpp"
#include "nmrc/extremal_flow.hpp"
#include "nmrc/geometry.hpp"

#include <cmath>
#include <random>

using namespace nmrc;

namespace {

SpinRates rates_ms(double t1, double t2) { return RelaxationParams::from_ms(t1, t2).rates(); }

const SpinRates kFluid = rates_ms(2000, 200);
const SpinRates kWater = rates_ms(2500, 2500);

Mat fd_jacobian(const ExtremalField& f, const Vec& z, double h = 1e-6) {
  Mat j(z.size(), z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vec a = z, b = z;
    a[i] += h;
    b[i] -= h;
    j.col(i) = (f.rhs(a) - f.rhs(b)) / (2 * h);
  }
  return j;
}

// Drift of H relative to the size of its terms, max |p| |dx/dt| along the
// arc (H itself can vanish, e.g. at the north pole where F0 = 0).
double max_relative_h_drift(const ExtremalField& field, const ArcResult& arc) {
  const auto n = arc.front().x.size();
  Vec z0(2 * n);
  z0 << arc.front().x, arc.front().p;
  const double h0 = field.hamiltonian(z0);
  double worst = 0.0, scale = std::abs(h0);
  for (const auto& s : arc.samples) {
    Vec z(z0.size());
    z << s.x, s.p;
    worst = std::max(worst, std::abs(field.hamiltonian(z) - h0));
    scale = std::max(scale, s.p.norm() * field.rhs(z).head(n).norm());
  }
  return worst / std::max(scale, 1e-300);
}

Vec four(double a, double b, double c, double d) {
  Vec v(4);
  v << a, b, c, d;
  return v;
}

}  // namespace

TEST_CASE("regularized maximizer agrees with a grid search") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> h(-4.0, 4.0);
  const double m = kTwoPi;
  const int grid = 200000;
  for (CostKind kind : {CostKind::kQuadratic, CostKind::kPower}) {
    for (double lambda : {0.0, 0.5, 0.9, 0.93}) {
      for (int i = 0; i < 25; ++i) {
        const double h1 = h(rng);
        auto objective = [&](double u) {
          return u * h1 - (1 - lambda) * regularized_running_cost(u, kind, lambda);
        };
        double best_u = -m, best = objective(-m);
        for (int k = 1; k <= grid; ++k) {
          const double u = -m + 2 * m * k / grid;
          if (objective(u) > best) {
            best = objective(u);
            best_u = u;
          }
        }
        const double u = regularized_control(h1, kind, lambda, m);
        CHECK(objective(u) >= best - 1e-10);
        CHECK(std::abs(u - best_u) <= 2e-3);
      }
    }
  }
  CHECK(regularized_control(100.0, CostKind::kQuadratic, 0.0, 2.0) == 2.0);
  CHECK(regularized_control(1e-13, CostKind::kPower, 0.9, 2.0) == 0.0);
  CHECK_THROWS_AS(regularized_control(1.0, CostKind::kPower, 1.0, 2.0), DomainError);
}

TEST_CASE("control slope matches finite differences") {
  for (CostKind kind : {CostKind::kQuadratic, CostKind::kPower}) {
    for (double h1 : {-1.3, -0.2, 0.05, 0.7}) {
      const double e = 1e-7;
      const double fd = (regularized_control(h1 + e, kind, 0.6, kTwoPi) -
                         regularized_control(h1 - e, kind, 0.6, kTwoPi)) /
                        (2 * e);
      CHECK(regularized_control_slope(h1, kind, 0.6, kTwoPi) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("extremal field Jacobian matches finite differences") {
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  const Vec z = (Vec(8) << -0.3, 0.4, 0.2, 0.6, 0.3, -0.2, 0.1, 0.25).finished();
  for (const ControlLaw& law :
       {ControlLaw{BangLaw{-1, kTwoPi}}, ControlLaw{RegularizedLaw{CostKind::kQuadratic, 0.4, kTwoPi}},
        ControlLaw{RegularizedLaw{CostKind::kPower, 0.9, kTwoPi}}, ControlLaw{SingularLaw{}}}) {
    const ExtremalField f(sys, law);
    const Mat diff = f.jacobian(z) - fd_jacobian(f, z);
    CHECK(diff.norm() <= 1e-6 * std::max(1.0, f.jacobian(z).norm()));
  }
}

TEST_CASE("lift derivatives along the flow") {
  // d/dt H1 = H10 and d/dt H10 = H100 + u H101 along any extremal.
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  const ExtremalPoint z{four(-0.3, 0.4, 0.2, 0.6), four(0.3, -0.2, 0.1, 0.25), 0.0};
  const double u = 1.7;
  const ExtremalField f(sys, BangLaw{1, u});
  const double dt = 1e-5;
  ArcOptions opts;
  opts.ode.rtol = 1e-13;
  opts.ode.atol = 1e-15;
  const auto fwd = integrate_arc(sys, z, BangLaw{1, u}, dt, {}, opts).final_point();
  const auto bwd = integrate_arc(sys, z, BangLaw{1, u}, -dt, {}, opts).final_point();
  const Lifts l = lifts(sys, z);
  const Lifts lf = lifts(sys, fwd), lb = lifts(sys, bwd);
  CHECK((lf.h1 - lb.h1) / (2 * dt) == doctest::Approx(l.h10).epsilon(1e-6));
  CHECK((lf.h10 - lb.h10) / (2 * dt) == doctest::Approx(l.h100 + u * l.h101).epsilon(1e-6));
  CHECK(l.h0 == doctest::Approx(z.p.dot(sys.field(Field::kDrift, z.x))));
}

TEST_CASE("planar singular control on the horizontal line") {
  const SpinSystem sys = SpinSystem::single(kFluid);
  const double z0 = horizontal_line(kFluid).z0;
  for (double y : {-0.9, -0.5, -0.1, -0.01}) {
    const double dpp = kFluid.gamma * z0 * (z0 - 1) + kFluid.big_gamma * y * y;
    Vec x(2), p(2);
    x << y, z0;
    p << -y / dpp, -z0 / dpp;
    const ExtremalPoint pt{x, p, 0.0};
    const Lifts l = lifts(sys, pt);
    CHECK(std::abs(l.h1) < 1e-12);
    CHECK(std::abs(l.h10) < 1e-12);
    CHECK(l.h0 == doctest::Approx(1.0).epsilon(1e-12));
    const double k = kFluid.gamma * (2 * kFluid.big_gamma - kFluid.gamma) / (2 * kFluid.delta());
    CHECK(singular_control_affine(sys, pt) == doctest::Approx(k / y).epsilon(1e-10));
    CHECK(singular_control_affine(sys, pt) == doctest::Approx(singular_control_2d({y, z0}, kFluid)).epsilon(1e-10));
  }
}

TEST_CASE("Hamiltonian is conserved on accepted arcs") {
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  const ExtremalPoint z{sys.north_pole(), four(0.0072, -0.0118, -0.0279, 0.4239), 0.0};
  for (const ControlLaw& law :
       {ControlLaw{BangLaw{1, kTwoPi}}, ControlLaw{RegularizedLaw{CostKind::kQuadratic, 0.9, kTwoPi}},
        ControlLaw{RegularizedLaw{CostKind::kPower, 0.9, kTwoPi}},
        ControlLaw{RegularizedLaw{CostKind::kQuadratic, 0.0, kTwoPi}}}) {
    const ExtremalField f(sys, law);
    const ArcResult arc = integrate_arc(sys, z, law, 30.0);
    CHECK(max_relative_h_drift(f, arc) <= 1e-8);
  }
  const SingularRay ray = singular_ray(kFluid, kWater, 0.7, 20.0);
  CHECK(max_relative_h_drift(ExtremalField(sys, SingularLaw{}), ray.arc) <= 1e-8);
}

TEST_CASE("singular arcs stay on the constraint set") {
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  for (double angle : {0.0, 0.9, 2.1, 4.0}) {
    const SingularRay ray = singular_ray(kFluid, kWater, angle, 25.0);
    double drift = 0.0;
    for (const auto& s : ray.arc.samples) {
      const Lifts l = lifts(sys, s.x, s.p);
      drift = std::max({drift, std::abs(l.h1), std::abs(l.h10)});
    }
    CHECK(drift <= 1e-6);
  }
  const ExtremalPoint off{sys.north_pole(), four(1, 0, 0, 0), 0.0};
  CHECK_THROWS_AS(integrate_arc(sys, off, SingularLaw{}, 1.0), DomainError);
}

TEST_CASE("singular costate basis") {
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  const Vec x = four(-0.7, -0.05, -0.5, 0.3);
  const Mat b = singular_costate_basis(sys, x);
  REQUIRE(b.cols() == 2);
  CHECK((b.transpose() * b - Mat::Identity(2, 2)).norm() < 1e-12);
  CHECK((b.transpose() * sys.field(Field::kControl, x)).norm() < 1e-12);
  CHECK((b.transpose() * sys.bracket(Bracket::kAd1, x)).norm() < 1e-12);
}

TEST_CASE("switching events and bang arcs") {
  // Pick (x, p) with H1 = 0 and H10 != 0, step back along the bang arc, then
  // integrate forward: the switch must be found where it was placed.
  const SpinSystem sys = SpinSystem::single(kFluid);
  Vec x(2), p(2);
  x << 0.3, 0.5;
  p << 0.3, 0.5;  // orthogonal to F1 = (-z, y)
  REQUIRE(std::abs(lifts(sys, {x, p, 0.0}).h10) > 1e-3);
  const BangLaw law{-1, kTwoPi};
  const double back = 0.05;
  ArcOptions opts;
  opts.ode.rtol = 1e-12;
  opts.ode.atol = 1e-14;
  const ExtremalPoint start = integrate_arc(sys, {x, p, 0.0}, law, -back, {}, opts).final_point();
  const ArcEvent sw = switch_event(sys);
  const ArcResult arc =
      integrate_arc(sys, {start.x, start.p, 0.0}, law, 1.0, std::span(&sw, 1), opts);
  CHECK(arc.termination == Termination::kSwitch);
  CHECK(arc.back().t == doctest::Approx(back).epsilon(1e-8));
  CHECK(std::abs(lifts(sys, arc.final_point()).h1) < 1e-8);
  CHECK((arc.back().x - x).norm() < 1e-8);
}

TEST_CASE("fold classification") {
  CHECK(classify_switch(0.0, 0.5, 1.0, 1.0, 2.0).kind == SwitchKind::kOrdinary);
  CHECK(classify_switch(0.0, 0.0, 0.5, 1.0, 2.0).kind == SwitchKind::kHyperbolic);
  CHECK(classify_switch(0.0, 0.0, 0.5, -1.0, 2.0).kind == SwitchKind::kElliptic);
  const auto para = classify_switch(0.0, 0.0, 3.0, 1.0, 2.0);
  CHECK(para.kind == SwitchKind::kParabolic);
  CHECK(para.phi_ddot_plus == doctest::Approx(5.0));
  CHECK(para.phi_ddot_minus == doctest::Approx(1.0));
  CHECK_THROWS_AS(classify_switch(0.1, 0.0, 0.5, 1.0, 2.0), DomainError);
  CHECK_THROWS_AS(classify_switch(0.0, 0.0, 0.0, 0.0, 2.0), DegenerateError);
}

TEST_CASE("generalized Legendre-Clebsch sign") {
  const SpinSystem sys = SpinSystem::pair(kFluid, kWater);
  const ExtremalPoint start = singular_ray_start(kFluid, kWater, 1.0);
  CHECK(glc_check(sys, start) == GlcStatus::kSatisfied);
  const ExtremalPoint flipped{start.x, -start.p, 0.0};
  CHECK(glc_check(sys, flipped) == GlcStatus::kViolated);
}
