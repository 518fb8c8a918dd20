#pragma once

#include "nmrc/extremal_flow.hpp"
#include "nmrc/model.hpp"

#include <string>
#include <vector>

namespace nmrc {

inline constexpr double kTargetTolerance = 1e-6;

struct BangCrossing {
  SpinState point;
  double time = 0.0;
};

/// First crossing of the horizontal singular line z = z0 by the bang arc
/// u = +m started at the north pole. Throws DomainError unless
/// Gamma > 3 gamma / 2, SolverError when the arc never reaches the line.
BangCrossing bang_to_horizontal(const SpinRates& r, double m);

struct SynthesisArc {
  std::string label;
  ArcResult arc;

  double duration() const { return arc.duration(); }
};

/// Single-spin policy from the north pole to the origin.
struct SynthesisPolicy {
  SpinRates rates;
  double m = kDefaultControlBound;
  std::vector<SynthesisArc> arcs;
  double total_time = 0.0;
  // Exit coordinate of the horizontal arc (T_min policy only).
  double y_exit = 0.0;
  // |p(D-) - p(D+)| at the bridge end, zero for an exact extremal.
  double costate_jump = 0.0;

  SpinState final_state() const;
  std::vector<SpinState> junctions() const;
};

struct SynthesisOptions {
  // Bracket width of the golden-section search on the exit coordinate.
  double exit_tolerance = 1e-10;
  ArcOptions arc;
};

/// Closed-form duration of the horizontal singular arc between |y| = a and
/// |y| = b (a > b > 0).
double horizontal_arc_time(const SpinRates& r, double a, double b);

/// Total time of bang -> horizontal -> bridge -> vertical as a function of
/// the exit coordinate y_exit < 0 (no trajectory is stored). Returns +inf
/// when no bridge lands on the vertical axis below the equator.
double tmin_total_time(const SpinRates& r, double m, const BangCrossing& a, double y_exit);

/// Four-arc time-minimal policy bang / horizontal_singular / bridge /
/// vertical_singular, with costates normalized to H = 1.
SynthesisPolicy tmin_synthesis(const SpinRates& r, double m, const SynthesisOptions& opts = {});

/// Bang until the y = 0 axis is reached below the equator, then free
/// relaxation up to the origin.
SynthesisPolicy inversion_recovery(const SpinRates& r, double m, const ArcOptions& opts = {});

/// Image of a policy under (y, p_y, u) -> (-y, -p_y, -u).
SynthesisPolicy mirror(const SynthesisPolicy& policy);

struct IntegralRow {
  double y_end = 0.0;
  double time = 0.0;
  double int_abs_u = 0.0;
  double int_u2 = 0.0;
};

/// Integrals of |u| and u^2 along the horizontal singular arc from
/// |y| = y_start down to each |y| = y_end (decreasing sequence).
std::vector<IntegralRow> l1_l2_diagnostic(const SpinRates& r, double m, double y_start,
                                          const std::vector<double>& y_ends);

struct LogFit {
  double c1 = 0.0;
  double c2 = 0.0;
  double max_relative_residual = 0.0;
};

/// Least-squares fit int_u2 ~ c1 + c2 ln(1 / y_end).
LogFit fit_log_divergence(const std::vector<IntegralRow>& rows);

struct Locus {
  std::string name;
  std::vector<SpinState> points;
};

/// Sampled switching loci of the T_min synthesis: Sigma1 (first bang),
/// Sigma2 (horizontal segment A-B), Sigma3 (bang from the saturation point
/// B to the vertical axis), Sigma4 (vertical segment D-O), and the
/// collinear oval D'' = 0.
std::vector<Locus> synthesis_loci(const SynthesisPolicy& policy, int samples = 64);

}  // namespace nmrc
