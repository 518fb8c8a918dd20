#include "nmrc/synthesis.hpp"

#include "nmrc/errors.hpp"
#include "nmrc/geometry.hpp"
#include "nmrc/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace nmrc {

namespace {

void require_admissible(const SpinRates& r, double m) {
  if (!(m > 0.0)) throw DomainError("control bound must be positive");
  if (!horizontal_line(r).admissible_in_ball) {
    throw DomainError("horizontal singular line requires Gamma > 3 gamma / 2");
  }
}

Vec state2(double y, double z) {
  Vec v(2);
  v << y, z;
  return v;
}

// Costate on the horizontal line z = z0, normalized to H = 1.
Vec horizontal_costate(const SpinRates& r, double y, double z0) {
  const double d2 = r.gamma * z0 * (z0 - 1.0) + r.big_gamma * y * y;
  return -state2(y, z0) / d2;
}

// Costate on the vertical line y = 0, normalized to H = 1.
Vec vertical_costate(const SpinRates& r, double z) {
  return state2(0.0, 1.0 / (r.gamma * (1.0 - z)));
}

// Bang arc from (y, z) with u = sign * m until y crosses zero; returns the
// landing height or nullopt when the first crossing is above the equator.
struct Landing {
  double z = 0.0;
  double time = 0.0;
};

std::optional<Landing> land_on_axis(const SpinRates& r, double m, int sign, double y, double z) {
  const double u = sign * m;
  auto f = [&](double, const Vec& q) {
    return state2(-r.big_gamma * q[0] - u * q[1], r.gamma * (1.0 - q[1]) + u * q[0]);
  };
  OdeOptions o;
  o.record_steps = false;
  const OdeEvent ev{[](double, const Vec& q) { return q[0]; }, true, 0};
  const auto sol = integrate_ode(f, 0.0, state2(y, z), 2.0 * std::numbers::pi / m, o,
                                 std::span<const OdeEvent>(&ev, 1));
  if (!sol.stopped_by_event || sol.final_state()[1] >= 0.0) return std::nullopt;
  return Landing{sol.final_state()[1], sol.final_time()};
}

int bridge_sign(const SpinRates& r, double m, double y_exit, double z0) {
  const auto plus = land_on_axis(r, m, +1, y_exit, z0);
  const auto minus = land_on_axis(r, m, -1, y_exit, z0);
  auto total = [&](const std::optional<Landing>& l) {
    return l ? l->time + std::log(1.0 - l->z) / r.gamma
             : std::numeric_limits<double>::infinity();
  };
  if (!plus && !minus) return 0;
  return total(plus) <= total(minus) ? +1 : -1;
}

ArcResult reversed_in_time(ArcResult arc, double t0) {
  std::reverse(arc.samples.begin(), arc.samples.end());
  const double t_start = arc.samples.front().t;
  for (auto& s : arc.samples) s.t = t0 + (s.t - t_start);
  return arc;
}

}  // namespace

SpinState SynthesisPolicy::final_state() const {
  const Vec& x = arcs.back().arc.back().x;
  return {x[0], x[1]};
}

std::vector<SpinState> SynthesisPolicy::junctions() const {
  std::vector<SpinState> out;
  for (const auto& a : arcs) {
    const Vec& x = a.arc.front().x;
    out.push_back({x[0], x[1]});
  }
  out.push_back(final_state());
  return out;
}

BangCrossing bang_to_horizontal(const SpinRates& r, double m) {
  require_admissible(r, m);
  const double z0 = horizontal_line(r).z0;
  auto f = [&](double, const Vec& q) {
    return state2(-r.big_gamma * q[0] - m * q[1], r.gamma * (1.0 - q[1]) + m * q[0]);
  };
  OdeOptions o;
  o.record_steps = false;
  const OdeEvent ev{[z0](double, const Vec& q) { return q[1] - z0; }, true, -1};
  // A full turn plus a few relaxation times is enough to decide.
  const double horizon = 2.0 * std::numbers::pi / m + 5.0 / r.gamma;
  const auto sol =
      integrate_ode(f, 0.0, state2(0.0, 1.0), horizon, o, std::span<const OdeEvent>(&ev, 1));
  if (!sol.stopped_by_event) {
    throw SolverError("bang arc does not reach the horizontal singular line (m too small)");
  }
  return {{sol.final_state()[0], sol.final_state()[1]}, sol.final_time()};
}

double horizontal_arc_time(const SpinRates& r, double a, double b) {
  const double d = r.delta();
  const double c = r.gamma * r.gamma * (2.0 * r.big_gamma - r.gamma) / (4.0 * d * d);
  return std::log((r.big_gamma * a * a + c) / (r.big_gamma * b * b + c)) / (2.0 * r.big_gamma);
}

double tmin_total_time(const SpinRates& r, double m, const BangCrossing& a, double y_exit) {
  const double z0 = a.point.z;
  const int sign = bridge_sign(r, m, y_exit, z0);
  if (sign == 0) return std::numeric_limits<double>::infinity();
  const auto land = land_on_axis(r, m, sign, y_exit, z0);
  return a.time + horizontal_arc_time(r, std::abs(a.point.y), std::abs(y_exit)) + land->time +
         std::log(1.0 - land->z) / r.gamma;
}

SynthesisPolicy tmin_synthesis(const SpinRates& r, double m, const SynthesisOptions& opts) {
  const BangCrossing a = bang_to_horizontal(r, m);
  const double z0 = a.point.z;
  const double y_b = saturation_point(r, m);
  const double y_a = std::abs(a.point.y);
  if (!(y_b < y_a)) throw SolverError("empty exit window: saturation point beyond A");
  const double side = a.point.y < 0.0 ? -1.0 : 1.0;

  // Golden-section search on |y_exit| in (y_B, |y_A|).
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto cost = [&](double mag) { return tmin_total_time(r, m, a, side * mag); };
  double lo = y_b, hi = y_a;
  double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
  double f1 = cost(x1), f2 = cost(x2);
  while (hi - lo > opts.exit_tolerance) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = cost(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = cost(x2);
    }
  }
  const double y_exit = side * 0.5 * (lo + hi);
  if (!std::isfinite(cost(std::abs(y_exit)))) {
    throw SolverError("bridge does not land on the vertical axis for any exit point");
  }

  const SpinSystem sys = SpinSystem::single(r);
  SynthesisPolicy policy;
  policy.rates = r;
  policy.m = m;
  policy.y_exit = y_exit;

  // Bang from the north pole, obtained backwards from A with the singular
  // costate at A.
  const Vec x_a = state2(a.point.y, z0);
  const Vec p_a = horizontal_costate(r, a.point.y, z0);
  ArcResult bang1 =
      integrate_arc(sys, {x_a, p_a, a.time}, BangLaw{+1, m}, -a.time, {}, opts.arc);
  policy.arcs.push_back({"bang1", reversed_in_time(std::move(bang1), 0.0)});

  // Horizontal singular arc up to the exit point.
  const double th = horizontal_arc_time(r, y_a, std::abs(y_exit));
  const ArcEvent exit_event = target_event(
      "exit", [y_exit](const Vec& z) { return z[0] - y_exit; }, side < 0.0 ? +1 : -1);
  ArcResult horiz = integrate_arc(sys, {x_a, p_a, a.time}, SingularLaw{}, 1.5 * th + 1.0,
                                  std::span<const ArcEvent>(&exit_event, 1), opts.arc);
  if (horiz.termination != Termination::kTargetHit) {
    throw SolverError("horizontal singular arc did not reach the exit point");
  }
  policy.arcs.push_back({"horizontal_singular", std::move(horiz)});

  // Bridge.
  const ExtremalPoint e = policy.arcs.back().arc.final_point();
  const int sign = bridge_sign(r, m, e.x[0], e.x[1]);
  if (sign == 0) throw SolverError("bridge does not land on the vertical axis");
  const ArcEvent axis = target_event("axis", [](const Vec& z) { return z[0]; });
  ArcResult bridge = integrate_arc(sys, e, BangLaw{sign, m}, 2.0 * std::numbers::pi / m,
                                   std::span<const ArcEvent>(&axis, 1), opts.arc);
  if (bridge.termination != Termination::kTargetHit || bridge.back().x[1] >= 0.0) {
    throw SolverError("bridge landing failed");
  }
  policy.arcs.push_back({"bridge", std::move(bridge)});

  // Vertical singular arc (u = 0) up to the origin.
  const ExtremalPoint d = policy.arcs.back().arc.final_point();
  const double z_d = d.x[1];
  const Vec x_d = state2(0.0, z_d);
  const Vec p_d = vertical_costate(r, z_d);
  policy.costate_jump = (d.p - p_d).norm();
  const double tv = std::log(1.0 - z_d) / r.gamma;
  const ArcEvent origin = target_event("origin", [](const Vec& z) { return z[1]; }, +1);
  ArcResult vert = integrate_arc(sys, {x_d, p_d, d.t}, SingularLaw{}, 1.5 * tv + 1.0,
                                 std::span<const ArcEvent>(&origin, 1), opts.arc);
  if (vert.termination != Termination::kTargetHit) {
    throw SolverError("vertical singular arc did not reach the origin");
  }
  policy.arcs.push_back({"vertical_singular", std::move(vert)});

  policy.total_time = 0.0;
  for (const auto& arc : policy.arcs) policy.total_time += arc.duration();
  return policy;
}

SynthesisPolicy inversion_recovery(const SpinRates& r, double m, const ArcOptions& opts) {
  if (!(m > 0.0)) throw DomainError("control bound must be positive");
  const SpinSystem sys = SpinSystem::single(r);
  SynthesisPolicy policy;
  policy.rates = r;
  policy.m = m;

  const ArcEvent axis = target_event("axis", [](const Vec& z) { return z[0]; }, +1);
  ArcResult bang = integrate_arc(sys, {state2(0.0, 1.0), Vec::Zero(2), 0.0}, BangLaw{+1, m},
                                 2.0 * std::numbers::pi / m + 1.0,
                                 std::span<const ArcEvent>(&axis, 1), opts);
  if (bang.termination != Termination::kTargetHit || bang.back().x[1] >= 0.0) {
    throw SolverError("inversion pulse does not reach the lower half of the axis");
  }
  const double z_inv = bang.back().x[1];
  const double t_inv = bang.duration();
  policy.arcs.push_back({"inversion", std::move(bang)});

  const ArcEvent origin = target_event("origin", [](const Vec& z) { return z[1]; }, +1);
  const double tv = std::log(1.0 - z_inv) / r.gamma;
  ArcResult relax =
      integrate_arc(sys, {state2(0.0, z_inv), vertical_costate(r, z_inv), t_inv},
                    BangLaw{+1, 0.0}, 1.5 * tv + 1.0, std::span<const ArcEvent>(&origin, 1), opts);
  if (relax.termination != Termination::kTargetHit) {
    throw SolverError("relaxation did not reach the origin");
  }
  policy.arcs.push_back({"vertical_relaxation", std::move(relax)});
  policy.total_time = t_inv + policy.arcs.back().duration();
  return policy;
}

SynthesisPolicy mirror(const SynthesisPolicy& policy) {
  SynthesisPolicy out = policy;
  out.y_exit = -policy.y_exit;
  for (auto& a : out.arcs) {
    if (auto* b = std::get_if<BangLaw>(&a.arc.law)) b->sign = -b->sign;
    for (auto& s : a.arc.samples) {
      s.x[0] = -s.x[0];
      s.p[0] = -s.p[0];
      s.u = -s.u;
    }
    for (auto& e : a.arc.events) {
      e.x[0] = -e.x[0];
      e.p[0] = -e.p[0];
    }
  }
  return out;
}

std::vector<IntegralRow> l1_l2_diagnostic(const SpinRates& r, double m, double y_start,
                                          const std::vector<double>& y_ends) {
  const HorizontalLine hl = horizontal_line(r);
  if (!hl.admissible_in_ball) throw DomainError("horizontal singular line not admissible");
  if (!(y_start > 0.0)) throw DomainError("y_start must be positive");
  const BangCrossing a = bang_to_horizontal(r, m);
  if (y_start > std::abs(a.point.y) + 1e-12) {
    throw DomainError("y_start beyond the entry point of the horizontal arc");
  }
  double prev = y_start;
  for (double y : y_ends) {
    if (!(y > 0.0 && y < prev)) throw DomainError("y_end values must decrease within (0, y_start)");
    prev = y;
  }

  // Along the line, u = k / y with k = gamma (2 Gamma - gamma) / (2 delta),
  // on the y < 0 side.
  const double z0 = hl.z0;
  const double k = r.gamma * (2.0 * r.big_gamma - r.gamma) / (2.0 * r.delta());
  auto f = [&](double, const Vec& s) {
    const double y = s[0];
    const double u = k / y;
    Vec d(3);
    d << -r.big_gamma * y - u * z0, std::abs(u), u * u;
    return d;
  };
  OdeOptions o;
  o.record_steps = false;
  std::vector<IntegralRow> rows;
  Vec s(3);
  s << -y_start, 0.0, 0.0;
  double t = 0.0;
  for (double y_end : y_ends) {
    const OdeEvent ev{[y_end](double, const Vec& v) { return v[0] + y_end; }, true, +1};
    const double horizon = 2.0 * horizontal_arc_time(r, -s[0], y_end) + 1.0;
    const auto sol = integrate_ode(f, t, s, t + horizon, o, std::span<const OdeEvent>(&ev, 1));
    if (!sol.stopped_by_event) throw SolverError("horizontal arc did not reach y_end");
    s = sol.final_state();
    t = sol.final_time();
    rows.push_back({y_end, t, s[1], s[2]});
  }
  return rows;
}

LogFit fit_log_divergence(const std::vector<IntegralRow>& rows) {
  if (rows.size() < 2) throw DomainError("need at least two rows for the fit");
  Mat a(static_cast<Eigen::Index>(rows.size()), 2);
  Vec b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    a(ii, 0) = 1.0;
    a(ii, 1) = std::log(1.0 / rows[i].y_end);
    b[ii] = rows[i].int_u2;
  }
  const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
  LogFit fit{c[0], c[1], 0.0};
  const Vec res = a * c - b;
  for (Eigen::Index i = 0; i < res.size(); ++i) {
    fit.max_relative_residual =
        std::max(fit.max_relative_residual, std::abs(res[i]) / std::abs(b[i]));
  }
  return fit;
}

std::vector<Locus> synthesis_loci(const SynthesisPolicy& policy, int samples) {
  const SpinRates& r = policy.rates;
  const double m = policy.m;
  const double z0 = horizontal_line(r).z0;
  std::vector<Locus> out;
  auto from_arc = [&](const std::string& name, const ArcResult& arc) {
    Locus l{name, {}};
    const std::size_t stride = std::max<std::size_t>(1, arc.samples.size() / samples);
    for (std::size_t i = 0; i < arc.samples.size(); i += stride) {
      l.points.push_back({arc.samples[i].x[0], arc.samples[i].x[1]});
    }
    l.points.push_back({arc.back().x[0], arc.back().x[1]});
    return l;
  };
  out.push_back(from_arc("sigma1", policy.arcs.front().arc));

  const double side = policy.arcs.front().arc.back().x[0] < 0.0 ? -1.0 : 1.0;
  const double y_a = std::abs(policy.arcs.front().arc.back().x[0]);
  const double y_b = saturation_point(r, m);
  Locus s2{"sigma2", {}};
  for (int i = 0; i <= samples; ++i) {
    s2.points.push_back({side * (y_a + (y_b - y_a) * i / samples), z0});
  }
  out.push_back(s2);

  const SpinSystem sys = SpinSystem::single(r);
  const int sign = bridge_sign(r, m, side * y_b, z0);
  if (sign != 0) {
    const ArcEvent axis = target_event("axis", [](const Vec& z) { return z[0]; });
    ArcOptions ao;
    const ArcResult b = integrate_arc(sys, {state2(side * y_b, z0), Vec::Zero(2), 0.0},
                                      BangLaw{sign, m}, 2.0 * std::numbers::pi / m,
                                      std::span<const ArcEvent>(&axis, 1), ao);
    out.push_back(from_arc("sigma3", b));
  }

  for (const auto& a : policy.arcs) {
    if (a.label == "vertical_singular") out.push_back(from_arc("sigma4", a.arc));
  }

  // Collinear set: gamma z (z - 1) + Gamma y^2 = 0, an oval through the pole
  // and the origin.
  Locus oval{"collinear", {}};
  for (int i = 0; i <= samples; ++i) {
    const double z = static_cast<double>(i) / samples;
    oval.points.push_back({side * std::sqrt(r.gamma * z * (1.0 - z) / r.big_gamma), z});
  }
  out.push_back(oval);
  return out;
}

}  // namespace nmrc
