#include "doctest.h"

#include "nmrc/errors.hpp"
#include "nmrc/geometry.hpp"
#include "nmrc/synthesis.hpp"

#include <cmath>

using namespace nmrc;

namespace {

SpinRates rates_ms(double t1, double t2) { return RelaxationParams::from_ms(t1, t2).rates(); }

const SpinRates kFluid = rates_ms(2000, 200);
const SpinRates kGrey = rates_ms(920, 100);

const SynthesisPolicy& fluid_policy() {
  static const SynthesisPolicy p = tmin_synthesis(kFluid, kTwoPi);
  return p;
}

}  // namespace

TEST_CASE("fluid time-minimal policy structure") {
  const SynthesisPolicy& p = fluid_policy();
  REQUIRE(p.arcs.size() == 4);
  CHECK(p.arcs[0].label == "bang1");
  CHECK(p.arcs[1].label == "horizontal_singular");
  CHECK(p.arcs[2].label == "bridge");
  CHECK(p.arcs[3].label == "vertical_singular");
  CHECK(std::holds_alternative<BangLaw>(p.arcs[0].arc.law));
  CHECK(std::holds_alternative<SingularLaw>(p.arcs[1].arc.law));
  CHECK(std::holds_alternative<BangLaw>(p.arcs[2].arc.law));
  CHECK(std::holds_alternative<SingularLaw>(p.arcs[3].arc.law));
  const SpinState f = p.final_state();
  CHECK(std::hypot(f.y, f.z) <= kTargetTolerance);
  CHECK(p.costate_jump < 1e-5);

  // Junctions: pole, A on z = z0, exit point, D on the axis, origin.
  const auto j = p.junctions();
  REQUIRE(j.size() == 5);
  const double z0 = horizontal_line(kFluid).z0;
  CHECK(j[0].z == doctest::Approx(1.0));
  CHECK(j[1].z == doctest::Approx(z0).epsilon(1e-8));
  CHECK(j[2].y == doctest::Approx(p.y_exit).epsilon(1e-8));
  CHECK(std::abs(j[3].y) < 1e-8);
  CHECK(j[3].z < 0.0);
  // Exit between the saturation point B and A.
  CHECK(std::abs(p.y_exit) > saturation_point(kFluid, kTwoPi));
  CHECK(std::abs(p.y_exit) < std::abs(j[1].y));
}

TEST_CASE("frozen minimum times") {
  // Values computed once by this implementation and checked against the
  // closed-form arc durations below.
  CHECK(fluid_policy().total_time == doctest::Approx(20.230192110).epsilon(1e-8));
  CHECK(inversion_recovery(kFluid, kTwoPi).total_time ==
        doctest::Approx(43.913367736).epsilon(1e-8));
  CHECK(tmin_synthesis(kGrey, kTwoPi).total_time == doctest::Approx(9.901638921).epsilon(1e-8));
  CHECK(inversion_recovery(kGrey, kTwoPi).total_time ==
        doctest::Approx(19.842781575).epsilon(1e-8));
}

TEST_CASE("arc durations agree with closed forms") {
  const SynthesisPolicy& p = fluid_policy();
  const double a = std::abs(p.arcs[1].arc.front().x[0]);
  const double b = std::abs(p.y_exit);
  CHECK(p.arcs[1].duration() == doctest::Approx(horizontal_arc_time(kFluid, a, b)).epsilon(1e-7));
  const double z_d = p.arcs[3].arc.front().x[1];
  CHECK(p.arcs[3].duration() == doctest::Approx(std::log(1.0 - z_d) / kFluid.gamma).epsilon(1e-7));
  // The closed-form cost function reproduces the policy time.
  const BangCrossing cross = bang_to_horizontal(kFluid, kTwoPi);
  CHECK(tmin_total_time(kFluid, kTwoPi, cross, p.y_exit) ==
        doctest::Approx(p.total_time).epsilon(1e-7));
  CHECK(cross.time == doctest::Approx(p.arcs[0].duration()).epsilon(1e-9));
}

TEST_CASE("time-minimal policy beats inversion recovery") {
  for (const SpinRates& r : {kFluid, kGrey}) {
    CHECK(tmin_synthesis(r, kTwoPi).total_time < inversion_recovery(r, kTwoPi).total_time);
  }
}

TEST_CASE("Hamiltonian along the time-minimal extremal") {
  const SynthesisPolicy& p = fluid_policy();
  const SpinSystem sys = SpinSystem::single(kFluid);
  for (std::size_t k = 0; k < p.arcs.size(); ++k) {
    const auto& arc = p.arcs[k].arc;
    const ExtremalField field(sys, arc.law);
    double worst = 0.0;
    for (const auto& s : arc.samples) {
      Vec z(4);
      z << s.x, s.p;
      worst = std::max(worst, std::abs(field.hamiltonian(z) - 1.0));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("mirror symmetry") {
  const SynthesisPolicy& p = fluid_policy();
  const SynthesisPolicy q = mirror(p);
  const SpinSystem sys = SpinSystem::single(kFluid);
  REQUIRE(q.arcs.size() == p.arcs.size());
  CHECK(q.total_time == p.total_time);
  CHECK(q.y_exit == -p.y_exit);
  // The mirrored arcs are extremals: integrating from their start reproduces them.
  for (std::size_t k = 0; k < q.arcs.size(); ++k) {
    const auto& arc = q.arcs[k].arc;
    if (std::holds_alternative<SingularLaw>(arc.law)) continue;
    const ArcResult again = integrate_arc(sys, arc.initial_point(), arc.law, arc.duration());
    CHECK((again.back().x - arc.back().x).norm() < 1e-8);
  }
  CHECK(q.final_state().y == doctest::Approx(-p.final_state().y));
}

TEST_CASE("L1 converges while L2 diverges logarithmically near y = 0") {
  std::vector<double> ends;
  for (double y = 1e-3; y > 0.9e-4 / 2; y /= 2) ends.push_back(y);
  const auto rows = l1_l2_diagnostic(kFluid, kTwoPi, 1e-2, ends);
  REQUIRE(rows.size() == ends.size());
  std::vector<double> d2, d1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    d2.push_back(rows[i].int_u2 - rows[i - 1].int_u2);
    d1.push_back(rows[i].int_abs_u - rows[i - 1].int_abs_u);
  }
  double mean = 0.0;
  for (double v : d2) mean += v;
  mean /= static_cast<double>(d2.size());
  for (double v : d2) CHECK(std::abs(v / mean - 1.0) <= 0.02);
  for (std::size_t i = 1; i < d1.size(); ++i) CHECK(d1[i] < d1[i - 1]);
  CHECK(d1.back() > 0.0);

  const LogFit fit = fit_log_divergence(rows);
  CHECK(fit.c2 > 0.0);
  CHECK(fit.max_relative_residual < 0.01);
  CHECK(fit.c2 == doctest::Approx(mean / std::log(2.0)).epsilon(0.02));
}

TEST_CASE("switching loci") {
  const auto loci = synthesis_loci(fluid_policy(), 32);
  std::vector<std::string> names;
  for (const auto& l : loci) names.push_back(l.name);
  CHECK(names == std::vector<std::string>{"sigma1", "sigma2", "sigma3", "sigma4", "collinear"});
  const SpinRates& r = kFluid;
  for (const auto& pt : loci.back().points) {
    CHECK(std::abs(r.gamma * pt.z * (pt.z - 1) + r.big_gamma * pt.y * pt.y) < 1e-12);
  }
}

TEST_CASE("domain errors") {
  // T1 = T2: no admissible horizontal line.
  CHECK_THROWS(tmin_synthesis(rates_ms(1000, 1000), kTwoPi));
  CHECK_THROWS_AS(bang_to_horizontal(kFluid, -1.0), DomainError);
  CHECK_THROWS_AS(l1_l2_diagnostic(kFluid, kTwoPi, -1.0, {1e-3}), DomainError);
}

TEST_CASE("time-minimal extremal embeds in the contrast system with p2 = 0") {
  const SynthesisPolicy& p = fluid_policy();
  const SpinSystem pair = SpinSystem::pair(kFluid, rates_ms(2500, 2500));
  Vec q2(2);
  q2 << 0.0, 1.0;
  double worst_state = 0.0, worst_p2 = 0.0, worst_h1 = 0.0;
  for (const auto& a : p.arcs) {
    const ExtremalPoint s = a.arc.initial_point();
    Vec x(4), pp(4);
    x << s.x, q2;
    pp << s.p, 0.0, 0.0;
    const ArcResult lifted = integrate_arc(pair, {x, pp, s.t}, a.arc.law, a.duration());
    worst_state = std::max(worst_state, (lifted.back().x.head(2) - a.arc.back().x).norm());
    // costates grow to |p| ~ 60 near the origin: compare them relatively
    worst_state = std::max(worst_state,
                           (lifted.back().p.head(2) - a.arc.back().p).norm() / a.arc.back().p.norm());
    for (const auto& smp : lifted.samples) {
      worst_p2 = std::max(worst_p2, smp.p.tail(2).norm());
      if (std::holds_alternative<SingularLaw>(a.arc.law)) {
        const Lifts l = lifts(pair, smp.x, smp.p);
        worst_h1 = std::max({worst_h1, std::abs(l.h1), std::abs(l.h10)});
      }
    }
    q2 = lifted.back().x.tail(2);
  }
  CHECK(worst_state < 1e-6);
  CHECK(worst_p2 < 1e-8);
  CHECK(worst_h1 < 1e-8);
}
