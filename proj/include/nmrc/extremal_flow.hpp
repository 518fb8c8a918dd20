#pragma once

#include "nmrc/model.hpp"
#include "nmrc/ode.hpp"

#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace nmrc {

inline constexpr double kOrderTolerance = 1e-10;
inline constexpr double kConstraintTolerance = 1e-8;
inline constexpr double kExplosionThreshold = 1e5;
// Maximal constraint violation tolerated after re-projection of a singular arc.
inline constexpr double kProjectionLimit = 1e-6;

/// State-costate pair z = (x, p) at normalized time t.
struct ExtremalPoint {
  Vec x;
  Vec p;
  double t = 0.0;

  Vec packed() const;
  static ExtremalPoint unpack(const Vec& z, double t = 0.0);
};

/// Hamiltonian lifts H_X = <p, X(x)> of the drift, control field and the
/// brackets that govern singular arcs. Poisson brackets of lifts are lifts of
/// Lie brackets, so H10 = {H1, H0}, H100 = {{H1, H0}, H0}, H101 = {{H1, H0}, H1}.
struct Lifts {
  double h0 = 0.0;
  double h1 = 0.0;
  double h10 = 0.0;
  double h100 = 0.0;
  double h101 = 0.0;
};

Lifts lifts(const SpinSystem& sys, const Vec& x, const Vec& p);
inline Lifts lifts(const SpinSystem& sys, const ExtremalPoint& z) {
  return lifts(sys, z.x, z.p);
}

/// u = -H100 / H101 (minimal-order singular control). Throws DegenerateError
/// when |H101| < kOrderTolerance.
double singular_control_affine(const SpinSystem& sys, const ExtremalPoint& z);

enum class GlcStatus { kSatisfied, kViolated };
/// Generalized Legendre-Clebsch condition H101 >= 0.
GlcStatus glc_check(const SpinSystem& sys, const ExtremalPoint& z);

enum class CostKind { kQuadratic, kPower };

/// Maximizer of u H1 - (1 - lambda) |u|^k over [-m, m], with k = 2 for the
/// quadratic cost and k = 2 - lambda for the power cost.
double regularized_control(double h1, CostKind kind, double lambda, double m);
/// du/dH1 of regularized_control (zero where the bound is active).
double regularized_control_slope(double h1, CostKind kind, double lambda, double m);
double regularized_control(const SpinSystem& sys, const ExtremalPoint& z, CostKind kind,
                           double lambda, double m);
/// Running cost |u|^k, without the (1 - lambda) weight.
double regularized_running_cost(double u, CostKind kind, double lambda);

struct BangLaw {
  int sign = 1;
  double m = kDefaultControlBound;
};
struct SingularLaw {};
struct RegularizedLaw {
  CostKind kind = CostKind::kQuadratic;
  double lambda = 0.0;
  double m = kDefaultControlBound;
};
using ControlLaw = std::variant<BangLaw, SingularLaw, RegularizedLaw>;

std::string describe(const ControlLaw& law);

/// Autonomous Hamiltonian vector field on z = (x, p) in R^{2n}.
class HamiltonianField {
 public:
  virtual ~HamiltonianField() = default;
  virtual int state_dim() const = 0;
  virtual Vec rhs(const Vec& z) const = 0;
  virtual Mat jacobian(const Vec& z) const = 0;
  virtual double hamiltonian(const Vec& z) const = 0;
  // Position component of rhs(z).
  Vec velocity(const Vec& z) const { return rhs(z).head(state_dim()); }
};

/// Extremal dynamics dx/dt = F0 + u F1, dp/dt = -(dF0 + u dF1)^T p with u
/// given by a control law.
class ExtremalField final : public HamiltonianField {
 public:
  ExtremalField(SpinSystem sys, ControlLaw law);

  int state_dim() const override { return sys_.dim(); }
  Vec rhs(const Vec& z) const override;
  Mat jacobian(const Vec& z) const override;
  /// Pseudo-Hamiltonian H0 + u H1, minus the weighted running cost for
  /// regularized laws.
  double hamiltonian(const Vec& z) const override;

  double control(const Vec& z) const;
  Vec control_gradient(const Vec& z) const;

  const SpinSystem& system() const { return sys_; }
  const ControlLaw& law() const { return law_; }

 private:
  SpinSystem sys_;
  ControlLaw law_;
};

enum class EventKind { kSwitch, kSaturation, kExplosion, kConjugate, kTarget };
enum class Termination {
  kDurationReached,
  kSwitch,
  kSaturation,
  kExplosion,
  kConjugate,
  kTargetHit
};

std::string to_string(EventKind kind);
std::string to_string(Termination t);

struct ArcEvent {
  EventKind kind = EventKind::kTarget;
  std::string label;
  std::function<double(const Vec& z)> g;
  bool terminal = true;
  int direction = 0;
};

/// H1 changes sign.
ArcEvent switch_event(const SpinSystem& sys);
/// |u| exceeds m.
ArcEvent saturation_event(const ExtremalField& field, double m);
/// |u| exceeds kExplosionThreshold (added automatically to singular arcs).
ArcEvent explosion_event(const ExtremalField& field);
ArcEvent target_event(std::string label, std::function<double(const Vec& z)> g,
                      int direction = 0, bool terminal = true);

struct ArcSample {
  double t = 0.0;
  Vec x;
  Vec p;
  double u = 0.0;
};

struct ArcEventRecord {
  EventKind kind = EventKind::kTarget;
  std::string label;
  double t = 0.0;
  Vec x;
  Vec p;
};

struct ArcResult {
  ControlLaw law;
  std::vector<ArcSample> samples;
  std::vector<ArcEventRecord> events;
  Termination termination = Termination::kDurationReached;

  const ArcSample& front() const { return samples.front(); }
  const ArcSample& back() const { return samples.back(); }
  double duration() const { return samples.back().t - samples.front().t; }
  ExtremalPoint final_point() const { return {back().x, back().p, back().t}; }
  ExtremalPoint initial_point() const { return {front().x, front().p, front().t}; }
};

struct ArcOptions {
  OdeOptions ode;
};

/// Integrates the extremal flow of `law` from z0 for at most |max_duration|
/// (negative durations integrate backwards), stopping at the first terminal
/// event. Singular arcs require |H1|, |H10| <= kConstraintTolerance at z0 and
/// are re-projected onto {H1 = H10 = 0} after each accepted step.
ArcResult integrate_arc(const SpinSystem& sys, const ExtremalPoint& z0, const ControlLaw& law,
                        double max_duration, std::span<const ArcEvent> events = {},
                        const ArcOptions& opts = {});

/// Restores H1 = H10 = 0 by an orthogonal correction of p when the Gram
/// matrix of (F1, [F1, F0]) is well conditioned, and by a minimum-norm
/// Gauss-Newton correction of (x, p) otherwise (planar case, where the two
/// fields are collinear on the singular set). Returns the residual max(|H1|, |H10|).
double project_singular(const SpinSystem& sys, Vec& z);

/// Orthonormal basis (columns) of {p : <p, F1(x)> = <p, [F1, F0](x)> = 0},
/// the admissible initial costates of singular arcs through x. Has n - 2
/// columns when F1(x) and [F1, F0](x) are independent.
Mat singular_costate_basis(const SpinSystem& sys, const Vec& x);

enum class SwitchKind { kOrdinary, kHyperbolic, kElliptic, kParabolic };

struct SwitchClassification {
  SwitchKind kind = SwitchKind::kOrdinary;
  // Arc sequence through the point, e.g. "xi- xi+" or "xi+ xi- xi+".
  std::string successor;
  double phi_dot = 0.0;
  double phi_ddot_plus = 0.0;
  double phi_ddot_minus = 0.0;
};

std::string to_string(SwitchKind kind);

/// Classifies a point of the switching surface from the values of H1, H10,
/// H100, H101. Fold second derivatives are H100 +- m H101. Throws
/// DomainError when |h1| >= kConstraintTolerance and DegenerateError when
/// both fold derivatives are below 1e-12.
SwitchClassification classify_switch(double h1, double h10, double h100, double h101,
                                     double m);
SwitchClassification classify_switch_point(const SpinSystem& sys, const ExtremalPoint& z,
                                           double m);

}  // namespace nmrc
