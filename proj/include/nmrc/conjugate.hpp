#pragma once

#include "nmrc/extremal_flow.hpp"
#include "nmrc/ode.hpp"

#include <optional>
#include <vector>

namespace nmrc {

/// Reference extremal z(t) in R^{2n} together with k Jacobi fields
/// dz_i(t) = (dx_i, dp_i) solving d(dz)/dt = dH(z(t)) dz, integrated jointly.
struct JacobiSolution {
  int n = 0;  // state dimension
  int k = 0;  // number of fields
  std::vector<double> t;
  std::vector<Vec> z;
  std::vector<Mat> fields;  // 2n x k per sample
  bool stopped_early = false;

  Mat position_block(std::size_t i) const { return fields[i].topRows(n); }
};

struct JacobiOptions {
  OdeOptions ode;
  // Optional terminal condition on the reference (stops when g crosses zero).
  std::optional<OdeEvent> stop;
};

/// Propagates the columns of `initial_deltas` (2n x k) along the extremal
/// of `field` started at z0 for `duration`.
JacobiSolution jacobi_propagate(const HamiltonianField& field, const Vec& z0,
                                const Mat& initial_deltas, double duration,
                                const JacobiOptions& opts = {});

enum class ConjugateMode { kRegular, kSingular };

struct IndicatorSample {
  double t = 0.0;
  double det = 0.0;        // determinant of the normalized test matrix
  double sigma_min = 0.0;  // smallest singular value of the same matrix
};

struct ConjugateReport {
  std::optional<double> first_conjugate_time;
  std::vector<IndicatorSample> indicator;
  double end_time = 0.0;
  bool stopped_early = false;
};

struct ConjugateOptions {
  OdeOptions ode;
  double time_tolerance = 1e-8;
  // Relative threshold on sigma_min for rank loss without a sign change.
  double rank_threshold = 1e-10;
  // Singular mode: stop when |u| exceeds this bound.
  double control_limit = kExplosionThreshold;
  // Crossings before this time are ignored (indicator starts at zero).
  double min_time = 1e-6;
};

/// Vertical Jacobi fields for the singular rank test at z0 = (x0, p0).
/// Columns solve the linearized constraints dH1 = dH10 = 0 with
/// dx(0) = a F1(x0), dp(0) = w - a A1^T p0, where w ranges over an
/// orthonormal basis of the complement of span(F1(x0), p0) and
/// a = -<w, [F1,F0](x0)> / H101.
Mat singular_vertical_deltas(const SpinSystem& sys, const Vec& z0);

/// First conjugate time along the extremal of `field` from z0.
/// Regular mode: dx(0) = 0, dp(0) = e_i, test det(dx_1 .. dx_n).
/// Singular mode (field must be an ExtremalField with SingularLaw): n - 2
/// constraint-tangent fields from singular_vertical_deltas, test
/// det(dx_1 .. dx_{n-2}, dx/dt, F1(x(t))).
/// Throws DegenerateError in the exceptional case |H(z0)| <= 1e-10 and when
/// the indicator stays below 1e-12 without a sign change.
ConjugateReport first_conjugate_time(const HamiltonianField& field, const Vec& z0,
                                     double duration, ConjugateMode mode,
                                     const ConjugateOptions& opts = {});

/// Post-bang point of the two-spin singular flow: both spins at
/// (-sqrt(1 - z0^2), z0) with z0 the horizontal line of spin 1, and the
/// costate at `angle` on the circle {H1 = {H1,H0} = 0, |p| = 1}, oriented
/// so that H101 >= 0 (angles differing by pi give the same extremal).
ExtremalPoint singular_ray_start(const SpinRates& r1, const SpinRates& r2, double angle);

struct SingularRay {
  double angle = 0.0;
  ArcResult arc;
  bool exploded = false;
  // First time |q1| drops below the saturation radius, if any.
  std::optional<double> saturation_time;
};

inline constexpr double kSaturationRadius = 0.05;

SingularRay singular_ray(const SpinRates& r1, const SpinRates& r2, double angle,
                         double duration, double saturation_radius = kSaturationRadius,
                         const ArcOptions& opts = {});

/// Rotation flow dx/dt = p, dp/dt = -x with H = (|p|^2 + |x|^2) / 2.
/// Its first conjugate time is pi.
class OscillatorField final : public HamiltonianField {
 public:
  explicit OscillatorField(int n = 1) : n_(n) {}
  int state_dim() const override { return n_; }
  Vec rhs(const Vec& z) const override;
  Mat jacobian(const Vec& z) const override;
  double hamiltonian(const Vec& z) const override;

 private:
  int n_;
};

}  // namespace nmrc
