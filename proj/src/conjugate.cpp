#include "nmrc/conjugate.hpp"

#include "nmrc/errors.hpp"
#include "nmrc/geometry.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>

namespace nmrc {

namespace {

struct Propagation {
  OdeSolution sol;
  int n = 0;
  int k = 0;
};

Propagation propagate(const HamiltonianField& field, const Vec& z0, const Mat& deltas,
                      double duration, const JacobiOptions& opts) {
  const int n = field.state_dim();
  if (z0.size() != 2 * n) throw DomainError("reference point has the wrong dimension");
  if (deltas.rows() != 2 * n) throw DomainError("Jacobi fields have the wrong dimension");
  const int k = static_cast<int>(deltas.cols());
  const int m = 2 * n;

  Vec y0(m + m * k);
  y0.head(m) = z0;
  for (int i = 0; i < k; ++i) y0.segment(m + m * i, m) = deltas.col(i);

  auto rhs = [&](double, const Vec& y) {
    Vec d(y.size());
    const Vec z = y.head(m);
    d.head(m) = field.rhs(z);
    if (k > 0) {
      const Mat jac = field.jacobian(z);
      for (int i = 0; i < k; ++i) d.segment(m + m * i, m) = jac * y.segment(m + m * i, m);
    }
    return d;
  };

  OdeOptions ode = opts.ode;
  ode.record_steps = true;
  std::vector<OdeEvent> events;
  if (opts.stop) {
    OdeEvent ev = *opts.stop;
    auto g = ev.g;
    ev.g = [g, m](double t, const Vec& y) { return g(t, y.head(m)); };
    ev.terminal = true;
    events.push_back(std::move(ev));
  }
  Propagation out;
  out.sol = integrate_ode(rhs, 0.0, y0, duration, ode, events);
  out.n = n;
  out.k = k;
  return out;
}

Mat unpack_fields(const Vec& y, int n, int k) {
  const int m = 2 * n;
  Mat f(m, k);
  for (int i = 0; i < k; ++i) f.col(i) = y.segment(m + m * i, m);
  return f;
}

}  // namespace

JacobiSolution jacobi_propagate(const HamiltonianField& field, const Vec& z0,
                                const Mat& initial_deltas, double duration,
                                const JacobiOptions& opts) {
  const Propagation p = propagate(field, z0, initial_deltas, duration, opts);
  JacobiSolution out;
  out.n = p.n;
  out.k = p.k;
  out.stopped_early = p.sol.stopped_by_event || p.sol.underflow;
  for (std::size_t i = 0; i < p.sol.t.size(); ++i) {
    out.t.push_back(p.sol.t[i]);
    out.z.push_back(p.sol.y[i].head(2 * p.n));
    out.fields.push_back(unpack_fields(p.sol.y[i], p.n, p.k));
  }
  return out;
}

Mat singular_vertical_deltas(const SpinSystem& sys, const Vec& z0) {
  const int n = sys.dim();
  if (z0.size() != 2 * n) throw DomainError("reference point has the wrong dimension");
  const Vec x = z0.head(n);
  const Vec p = z0.tail(n);
  const Vec f1 = sys.field(Field::kControl, x);
  const Vec ad1 = sys.bracket(Bracket::kAd1, x);
  const double h101 = p.dot(sys.bracket(Bracket::kAd101, x));
  if (std::abs(h101) < kOrderTolerance) {
    throw DegenerateError("H101 vanishes at the initial point of the singular arc");
  }
  Mat span(n, 2);
  span.col(0) = f1;
  span.col(1) = p;
  const Mat q = Eigen::HouseholderQR<Mat>(span).householderQ() * Mat::Identity(n, n);
  const Mat a1t = sys.field_jacobian(Field::kControl).transpose();

  Mat deltas(2 * n, n - 2);
  for (int j = 0; j < n - 2; ++j) {
    const Vec w = q.col(j + 2);
    const double a = -w.dot(ad1) / h101;
    deltas.col(j).head(n) = a * f1;
    deltas.col(j).tail(n) = w - a * a1t * p;
  }
  return deltas;
}

ConjugateReport first_conjugate_time(const HamiltonianField& field, const Vec& z0,
                                     double duration, ConjugateMode mode,
                                     const ConjugateOptions& opts) {
  const int n = field.state_dim();
  if (std::abs(field.hamiltonian(z0)) <= 1e-10) {
    throw DegenerateError("exceptional extremal (H = 0)");
  }

  const ExtremalField* singular = nullptr;
  Mat deltas;
  JacobiOptions jopts;
  jopts.ode = opts.ode;
  if (mode == ConjugateMode::kRegular) {
    deltas = Mat::Zero(2 * n, n);
    deltas.bottomRows(n) = Mat::Identity(n, n);
  } else {
    singular = dynamic_cast<const ExtremalField*>(&field);
    if (singular == nullptr || !std::holds_alternative<SingularLaw>(singular->law())) {
      throw DomainError("singular conjugate test needs a singular extremal field");
    }
    deltas = singular_vertical_deltas(singular->system(), z0);
    const double limit = opts.control_limit;
    jopts.ode.stop_on_underflow = true;
    jopts.stop = OdeEvent{[singular, limit](double, const Vec& z) {
                            return limit - std::abs(singular->control(z));
                          },
                          true, -1};
  }

  const Propagation prop = propagate(field, z0, deltas, duration, jopts);
  const OdeSolution& sol = prop.sol;
  const int m = 2 * n;
  const int k = prop.k;

  auto indicator = [&](double t, const Vec& y) {
    const Vec z = y.head(m);
    Mat cols(n, n);
    // Jacobi columns scaled by the norm of the full (dx, dp): the position
    // part can then still shrink to zero at a conjugate point.
    for (int i = 0; i < k; ++i) {
      const double norm = y.segment(m + m * i, m).norm();
      cols.col(i) = y.segment(m + m * i, n) / (norm > 0.0 ? norm : 1.0);
    }
    if (singular != nullptr) {
      cols.col(k) = field.velocity(z);
      cols.col(k + 1) = singular->system().field(Field::kControl, z.head(n));
      for (int c = k; c < n; ++c) {
        const double norm = cols.col(c).norm();
        if (norm > 0.0) cols.col(c) /= norm;
      }
    }
    IndicatorSample s;
    s.t = t;
    s.det = cols.determinant();
    s.sigma_min = Eigen::JacobiSVD<Mat>(cols).singularValues().minCoeff();
    return s;
  };

  ConjugateReport report;
  report.end_time = sol.t.back();
  report.stopped_early = sol.stopped_by_event || sol.underflow;
  for (std::size_t i = 0; i < sol.t.size(); ++i) {
    report.indicator.push_back(indicator(sol.t[i], sol.y[i]));
  }

  const double t_floor = opts.min_time * std::max(1.0, std::abs(duration));
  double running_max = 0.0;
  double largest_det = 0.0;
  for (std::size_t i = 1; i < report.indicator.size(); ++i) {
    const auto& prev = report.indicator[i - 1];
    const auto& cur = report.indicator[i];
    if (cur.t <= t_floor) continue;
    largest_det = std::max(largest_det, std::abs(cur.det));
    const bool sign_change = prev.t > t_floor && prev.det != 0.0 &&
                             ((prev.det < 0.0) != (cur.det < 0.0) || cur.det == 0.0);
    running_max = std::max(running_max, prev.sigma_min);
    const bool rank_drop = running_max > 0.0 && cur.sigma_min < opts.rank_threshold * running_max;
    if (!sign_change && !rank_drop && i + 1 < report.indicator.size()) {
      // Even-order zero: no sign change, sigma_min has a V-shaped minimum
      // that the samples straddle. Refine it and accept if it is a zero to
      // within the time tolerance.
      const auto& next = report.indicator[i + 1];
      if (prev.t > t_floor && cur.sigma_min < prev.sigma_min && cur.sigma_min <= next.sigma_min &&
          cur.sigma_min < 1e-2 * running_max) {
        const auto at = [&](double t) {
          const std::size_t j = t <= sol.t[i] ? i - 1 : i;
          return indicator(t, hermite_interpolate(sol.t[j], sol.y[j], sol.dy[j], sol.t[j + 1],
                                                  sol.y[j + 1], sol.dy[j + 1], t))
              .sigma_min;
        };
        double lo = sol.t[i - 1], hi = sol.t[i + 1];
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
        double fa = at(a), fb = at(b);
        while (hi - lo > opts.time_tolerance) {
          if (fa < fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = at(a);
          } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = at(b);
          }
        }
        const double t_star = 0.5 * (lo + hi);
        const double slope = std::max((prev.sigma_min - cur.sigma_min) / (cur.t - prev.t),
                                      (next.sigma_min - cur.sigma_min) / (next.t - cur.t));
        if (at(t_star) <= 10.0 * slope * opts.time_tolerance + opts.rank_threshold * running_max) {
          report.first_conjugate_time = t_star;
          return report;
        }
      }
    }
    if (!sign_change && !rank_drop) continue;
    if (!sign_change) {
      report.first_conjugate_time = cur.t;
      return report;
    }
    // Bisection on the dense output of the accepted step.
    double lo = sol.t[i - 1], hi = sol.t[i];
    const double dlo = prev.det;
    while (std::abs(hi - lo) > opts.time_tolerance) {
      const double mid = 0.5 * (lo + hi);
      const Vec y = hermite_interpolate(sol.t[i - 1], sol.y[i - 1], sol.dy[i - 1], sol.t[i],
                                        sol.y[i], sol.dy[i], mid);
      const double dm = indicator(mid, y).det;
      if ((dm < 0.0) == (dlo < 0.0) && dm != 0.0) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    report.first_conjugate_time = 0.5 * (lo + hi);
    return report;
  }
  if (largest_det < 1e-12 && report.indicator.size() > 2) {
    throw DegenerateError("conjugate indicator stays below 1e-12 without crossing");
  }
  return report;
}

ExtremalPoint singular_ray_start(const SpinRates& r1, const SpinRates& r2, double angle) {
  const double z0 = horizontal_line(r1).z0;
  if (std::abs(z0) >= 1.0) throw DomainError("horizontal line of spin 1 misses the disk");
  const double y0 = -std::sqrt(1.0 - z0 * z0);
  const SpinSystem sys = SpinSystem::pair(r1, r2);
  Vec x(4);
  x << y0, z0, y0, z0;
  const Mat basis = singular_costate_basis(sys, x);
  if (basis.cols() != 2) throw DegenerateError("singular costates do not form a circle here");
  Vec p = std::cos(angle) * basis.col(0) + std::sin(angle) * basis.col(1);
  if (p.dot(sys.bracket(Bracket::kAd101, x)) < 0.0) p = -p;
  return {x, p, 0.0};
}

SingularRay singular_ray(const SpinRates& r1, const SpinRates& r2, double angle,
                         double duration, double saturation_radius, const ArcOptions& opts) {
  SingularRay ray;
  ray.angle = angle;
  const SpinSystem sys = SpinSystem::pair(r1, r2);
  const ArcEvent sat = target_event(
      "spin1_saturation",
      [saturation_radius](const Vec& z) { return std::hypot(z[0], z[1]) - saturation_radius; },
      -1, false);
  ray.arc = integrate_arc(sys, singular_ray_start(r1, r2, angle), SingularLaw{}, duration,
                          std::span<const ArcEvent>(&sat, 1), opts);
  ray.exploded = ray.arc.termination == Termination::kExplosion;
  for (const auto& e : ray.arc.events) {
    if (e.label == "spin1_saturation") {
      ray.saturation_time = e.t;
      break;
    }
  }
  return ray;
}

Vec OscillatorField::rhs(const Vec& z) const {
  Vec out(2 * n_);
  out.head(n_) = z.tail(n_);
  out.tail(n_) = -z.head(n_);
  return out;
}

Mat OscillatorField::jacobian(const Vec&) const {
  Mat j = Mat::Zero(2 * n_, 2 * n_);
  j.topRightCorner(n_, n_) = Mat::Identity(n_, n_);
  j.bottomLeftCorner(n_, n_) = -Mat::Identity(n_, n_);
  return j;
}

double OscillatorField::hamiltonian(const Vec& z) const { return 0.5 * z.squaredNorm(); }

}  // namespace nmrc
