#include "nmrc/extremal_flow.hpp"

#include "nmrc/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nmrc {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Power-cost controls below this switching value are treated as zero.
constexpr double kPowerDeadZone = 1e-12;

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw DomainError("regularization parameter must lie in [0, 1)");
  }
}

double cost_exponent(CostKind kind, double lambda) {
  return kind == CostKind::kQuadratic ? 2.0 : 2.0 - lambda;
}

Termination termination_for(EventKind kind) {
  switch (kind) {
    case EventKind::kSwitch:
      return Termination::kSwitch;
    case EventKind::kSaturation:
      return Termination::kSaturation;
    case EventKind::kExplosion:
      return Termination::kExplosion;
    case EventKind::kConjugate:
      return Termination::kConjugate;
    case EventKind::kTarget:
      return Termination::kTargetHit;
  }
  return Termination::kTargetHit;
}

}  // namespace

Vec ExtremalPoint::packed() const {
  Vec z(x.size() + p.size());
  z << x, p;
  return z;
}

ExtremalPoint ExtremalPoint::unpack(const Vec& z, double t) {
  const Eigen::Index n = z.size() / 2;
  return ExtremalPoint{z.head(n), z.tail(n), t};
}

Lifts lifts(const SpinSystem& sys, const Vec& x, const Vec& p) {
  Lifts l;
  l.h0 = p.dot(sys.field(Field::kDrift, x));
  l.h1 = p.dot(sys.field(Field::kControl, x));
  l.h10 = p.dot(sys.bracket(Bracket::kAd1, x));
  l.h100 = p.dot(sys.bracket(Bracket::kAd100, x));
  l.h101 = p.dot(sys.bracket(Bracket::kAd101, x));
  return l;
}

double singular_control_affine(const SpinSystem& sys, const ExtremalPoint& z) {
  const auto l = lifts(sys, z);
  if (std::abs(l.h101) < kOrderTolerance) {
    throw DegenerateError("singular extremal is not of minimal order ({{H1,H0},H1} = 0)");
  }
  return -l.h100 / l.h101;
}

GlcStatus glc_check(const SpinSystem& sys, const ExtremalPoint& z) {
  return lifts(sys, z).h101 >= 0.0 ? GlcStatus::kSatisfied : GlcStatus::kViolated;
}

double regularized_control(double h1, CostKind kind, double lambda, double m) {
  check_lambda(lambda);
  double u = 0.0;
  if (kind == CostKind::kQuadratic) {
    u = h1 / (2.0 * (1.0 - lambda));
  } else {
    if (std::abs(h1) < kPowerDeadZone) return 0.0;
    const double c = (1.0 - lambda) * (2.0 - lambda);
    u = std::copysign(std::pow(std::abs(h1) / c, 1.0 / (1.0 - lambda)), h1);
  }
  return std::clamp(u, -m, m);
}

double regularized_control_slope(double h1, CostKind kind, double lambda, double m) {
  const double u = regularized_control(h1, kind, lambda, m);
  if (std::abs(u) >= m) return 0.0;
  if (kind == CostKind::kQuadratic) return 1.0 / (2.0 * (1.0 - lambda));
  if (std::abs(h1) < kPowerDeadZone) return 0.0;
  return std::abs(u) / (std::abs(h1) * (1.0 - lambda));
}

double regularized_control(const SpinSystem& sys, const ExtremalPoint& z, CostKind kind,
                           double lambda, double m) {
  return regularized_control(lifts(sys, z).h1, kind, lambda, m);
}

double regularized_running_cost(double u, CostKind kind, double lambda) {
  return std::pow(std::abs(u), cost_exponent(kind, lambda));
}

std::string describe(const ControlLaw& law) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const BangLaw& b) { os << "bang(" << (b.sign > 0 ? "+" : "-") << b.m << ")"; },
                 [&](const SingularLaw&) { os << "singular"; },
                 [&](const RegularizedLaw& r) {
                   os << "regularized(" << (r.kind == CostKind::kQuadratic ? "quadratic" : "power")
                      << ", lambda=" << r.lambda << ", m=" << r.m << ")";
                 },
             },
             law);
  return os.str();
}

ExtremalField::ExtremalField(SpinSystem sys, ControlLaw law)
    : sys_(std::move(sys)), law_(std::move(law)) {
  if (const auto* r = std::get_if<RegularizedLaw>(&law_)) check_lambda(r->lambda);
}

double ExtremalField::control(const Vec& z) const {
  const int n = sys_.dim();
  return std::visit(
      Overloaded{
          [&](const BangLaw& b) { return b.sign >= 0 ? b.m : -b.m; },
          [&](const SingularLaw&) {
            const Vec x = z.head(n);
            const Vec p = z.tail(n);
            const double h100 = p.dot(sys_.bracket(Bracket::kAd100, x));
            const double h101 = p.dot(sys_.bracket(Bracket::kAd101, x));
            if (h101 == 0.0) return std::numeric_limits<double>::infinity();
            return -h100 / h101;
          },
          [&](const RegularizedLaw& r) {
            const double h1 = z.tail(n).dot(sys_.field(Field::kControl, z.head(n)));
            return regularized_control(h1, r.kind, r.lambda, r.m);
          },
      },
      law_);
}

Vec ExtremalField::control_gradient(const Vec& z) const {
  const int n = sys_.dim();
  const Vec x = z.head(n);
  const Vec p = z.tail(n);
  Vec grad = Vec::Zero(2 * n);
  std::visit(Overloaded{
                 [&](const BangLaw&) {},
                 [&](const SingularLaw&) {
                   const Vec ad100 = sys_.bracket(Bracket::kAd100, x);
                   const Vec ad101 = sys_.bracket(Bracket::kAd101, x);
                   const double h100 = p.dot(ad100);
                   const double h101 = p.dot(ad101);
                   const double u = -h100 / h101;
                   grad.head(n) = -(sys_.bracket_jacobian(Bracket::kAd100).transpose() * p +
                                    u * sys_.bracket_jacobian(Bracket::kAd101).transpose() * p) /
                                  h101;
                   grad.tail(n) = -(ad100 + u * ad101) / h101;
                 },
                 [&](const RegularizedLaw& r) {
                   const Vec f1 = sys_.field(Field::kControl, x);
                   const double slope = regularized_control_slope(p.dot(f1), r.kind, r.lambda, r.m);
                   if (slope == 0.0) return;
                   grad.head(n) = slope * (sys_.field_jacobian(Field::kControl).transpose() * p);
                   grad.tail(n) = slope * f1;
                 },
             },
             law_);
  return grad;
}

Vec ExtremalField::rhs(const Vec& z) const {
  const int n = sys_.dim();
  const Vec x = z.head(n);
  const Vec p = z.tail(n);
  const double u = control(z);
  Vec out(2 * n);
  out.head(n) = sys_.field(Field::kDrift, x) + u * sys_.field(Field::kControl, x);
  out.tail(n) = -(sys_.field_jacobian(Field::kDrift) + u * sys_.field_jacobian(Field::kControl))
                     .transpose() *
                p;
  return out;
}

Mat ExtremalField::jacobian(const Vec& z) const {
  const int n = sys_.dim();
  const Vec x = z.head(n);
  const Vec p = z.tail(n);
  const double u = control(z);
  const Mat a = sys_.field_jacobian(Field::kDrift) + u * sys_.field_jacobian(Field::kControl);
  Mat jac = Mat::Zero(2 * n, 2 * n);
  jac.topLeftCorner(n, n) = a;
  jac.bottomRightCorner(n, n) = -a.transpose();
  Vec du_dir(2 * n);
  du_dir.head(n) = sys_.field(Field::kControl, x);
  du_dir.tail(n) = -sys_.field_jacobian(Field::kControl).transpose() * p;
  jac += du_dir * control_gradient(z).transpose();
  return jac;
}

double ExtremalField::hamiltonian(const Vec& z) const {
  const int n = sys_.dim();
  const Vec x = z.head(n);
  const Vec p = z.tail(n);
  const double u = control(z);
  double h = p.dot(sys_.field(Field::kDrift, x)) + u * p.dot(sys_.field(Field::kControl, x));
  if (const auto* r = std::get_if<RegularizedLaw>(&law_)) {
    h -= (1.0 - r->lambda) * regularized_running_cost(u, r->kind, r->lambda);
  }
  return h;
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kSwitch:
      return "switch";
    case EventKind::kSaturation:
      return "saturation";
    case EventKind::kExplosion:
      return "explosion";
    case EventKind::kConjugate:
      return "conjugate";
    case EventKind::kTarget:
      return "target";
  }
  return "unknown";
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kDurationReached:
      return "duration_reached";
    case Termination::kSwitch:
      return "switch";
    case Termination::kSaturation:
      return "saturation";
    case Termination::kExplosion:
      return "explosion";
    case Termination::kConjugate:
      return "conjugate";
    case Termination::kTargetHit:
      return "target_hit";
  }
  return "unknown";
}

ArcEvent switch_event(const SpinSystem& sys) {
  return ArcEvent{EventKind::kSwitch, "switch",
                  [sys](const Vec& z) {
                    const int n = sys.dim();
                    return z.tail(n).dot(sys.field(Field::kControl, z.head(n)));
                  },
                  true, 0};
}

ArcEvent saturation_event(const ExtremalField& field, double m) {
  return ArcEvent{EventKind::kSaturation, "saturation",
                  [field, m](const Vec& z) { return m - std::abs(field.control(z)); }, true, -1};
}

ArcEvent explosion_event(const ExtremalField& field) {
  return ArcEvent{EventKind::kExplosion, "explosion",
                  [field](const Vec& z) {
                    const double u = field.control(z);
                    return std::isfinite(u) ? kExplosionThreshold - std::abs(u) : -1.0;
                  },
                  true, -1};
}

ArcEvent target_event(std::string label, std::function<double(const Vec& z)> g, int direction,
                      bool terminal) {
  return ArcEvent{EventKind::kTarget, std::move(label), std::move(g), terminal, direction};
}

double project_singular(const SpinSystem& sys, Vec& z) {
  const int n = sys.dim();
  auto residual = [&](const Vec& zz) {
    const Vec x = zz.head(n);
    const Vec p = zz.tail(n);
    return Eigen::Vector2d(p.dot(sys.field(Field::kControl, x)),
                           p.dot(sys.bracket(Bracket::kAd1, x)));
  };
  {
    const Vec x = z.head(n);
    Mat g(n, 2);
    g.col(0) = sys.field(Field::kControl, x);
    g.col(1) = sys.bracket(Bracket::kAd1, x);
    const Eigen::Matrix2d gram = g.transpose() * g;
    if (gram.determinant() > 1e-10 * gram(0, 0) * gram(1, 1)) {
      const Vec p = z.tail(n);
      z.tail(n) = p - g * gram.ldlt().solve(g.transpose() * p);
      return residual(z).cwiseAbs().maxCoeff();
    }
  }
  // Planar case: the constraint gradients in p are collinear on the locus, so
  // the state has to move as well.
  for (int it = 0; it < 4; ++it) {
    const Eigen::Vector2d c = residual(z);
    if (c.cwiseAbs().maxCoeff() < 1e-15) break;
    const Vec x = z.head(n);
    const Vec p = z.tail(n);
    Mat jac(2, 2 * n);
    jac.row(0) << (sys.field_jacobian(Field::kControl).transpose() * p).transpose(),
        sys.field(Field::kControl, x).transpose();
    jac.row(1) << (sys.bracket_jacobian(Bracket::kAd1).transpose() * p).transpose(),
        sys.bracket(Bracket::kAd1, x).transpose();
    const Eigen::Matrix2d jjt = jac * jac.transpose();
    z -= jac.transpose() * jjt.ldlt().solve(c);
  }
  return residual(z).cwiseAbs().maxCoeff();
}

ArcResult integrate_arc(const SpinSystem& sys, const ExtremalPoint& z0, const ControlLaw& law,
                        double max_duration, std::span<const ArcEvent> events,
                        const ArcOptions& opts) {
  const int n = sys.dim();
  if (z0.x.size() != n || z0.p.size() != n) {
    throw DomainError("extremal point dimension does not match the system");
  }
  ExtremalField field(sys, law);
  const bool singular = std::holds_alternative<SingularLaw>(law);

  std::vector<ArcEvent> all(events.begin(), events.end());
  StepHook hook;
  if (singular) {
    const auto l = lifts(sys, z0);
    if (std::abs(l.h1) > kConstraintTolerance || std::abs(l.h10) > kConstraintTolerance) {
      throw DomainError("singular arc must start on {H1 = {H1,H0} = 0}");
    }
    all.push_back(explosion_event(field));
    hook = [&sys](double, Vec& z) {
      if (project_singular(sys, z) > kProjectionLimit) {
        throw SolverError("singular constraint projection failed");
      }
    };
  }

  std::vector<OdeEvent> ode_events;
  ode_events.reserve(all.size());
  for (const auto& e : all) {
    ode_events.push_back(OdeEvent{[g = e.g](double, const Vec& z) { return g(z); }, e.terminal,
                                  e.direction});
  }

  OdeOptions ode = opts.ode;
  // Singular controls blow up in finite time; the step collapse is reported
  // as an explosion rather than an error.
  if (singular) ode.stop_on_underflow = true;
  const auto sol = integrate_ode([&field](double, const Vec& z) { return field.rhs(z); }, z0.t,
                                 z0.packed(), z0.t + max_duration, ode, ode_events, hook);

  ArcResult out;
  out.law = law;
  out.samples.reserve(sol.t.size());
  for (std::size_t i = 0; i < sol.t.size(); ++i) {
    const Vec& z = sol.y[i];
    out.samples.push_back({sol.t[i], z.head(n), z.tail(n), field.control(z)});
  }
  for (const auto& hit : sol.hits) {
    const auto& e = all[hit.event_index];
    out.events.push_back({e.kind, e.label, hit.t, hit.y.head(n), hit.y.tail(n)});
  }
  if (sol.stopped_by_event) out.termination = termination_for(out.events.back().kind);
  if (sol.underflow) {
    out.termination = Termination::kExplosion;
    out.events.push_back({EventKind::kExplosion, "step_collapse", sol.t.back(),
                          sol.y.back().head(n), sol.y.back().tail(n)});
  }
  return out;
}

Mat singular_costate_basis(const SpinSystem& sys, const Vec& x) {
  const int n = sys.dim();
  Mat c(2, n);
  c.row(0) = sys.field(Field::kControl, x).transpose();
  c.row(1) = sys.bracket(Bracket::kAd1, x).transpose();
  Eigen::JacobiSVD<Mat> svd(c, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > 1e-12 * std::max(1.0, sv[0])) ++rank;
  }
  return svd.matrixV().rightCols(n - rank);
}

std::string to_string(SwitchKind kind) {
  switch (kind) {
    case SwitchKind::kOrdinary:
      return "ordinary";
    case SwitchKind::kHyperbolic:
      return "hyperbolic";
    case SwitchKind::kElliptic:
      return "elliptic";
    case SwitchKind::kParabolic:
      return "parabolic";
  }
  return "unknown";
}

SwitchClassification classify_switch(double h1, double h10, double h100, double h101, double m) {
  if (std::abs(h1) >= kConstraintTolerance) {
    throw DomainError("point is not on the switching surface H1 = 0");
  }
  SwitchClassification out;
  out.phi_dot = h10;
  out.phi_ddot_plus = h100 + m * h101;
  out.phi_ddot_minus = h100 - m * h101;
  if (std::abs(h10) > kConstraintTolerance) {
    out.kind = SwitchKind::kOrdinary;
    out.successor = h10 > 0.0 ? "xi- xi+" : "xi+ xi-";
    return out;
  }
  const double pp = out.phi_ddot_plus;
  const double pm = out.phi_ddot_minus;
  if (std::abs(pp) < 1e-12 && std::abs(pm) < 1e-12) {
    throw DegenerateError("fold point with vanishing second derivatives");
  }
  if (pp > 0.0 && pm < 0.0) {
    out.kind = SwitchKind::kHyperbolic;
    out.successor = "xi+- xi_s xi+-";
  } else if (pp < 0.0 && pm > 0.0) {
    out.kind = SwitchKind::kElliptic;
    out.successor = "bang-bang (unbounded number of switchings)";
  } else {
    out.kind = SwitchKind::kParabolic;
    out.successor = (pp + pm > 0.0) ? "xi+ xi- xi+" : "xi- xi+ xi-";
  }
  return out;
}

SwitchClassification classify_switch_point(const SpinSystem& sys, const ExtremalPoint& z,
                                           double m) {
  const auto l = lifts(sys, z);
  return classify_switch(l.h1, l.h10, l.h100, l.h101, m);
}

}  // namespace nmrc
