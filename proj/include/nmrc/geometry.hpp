#pragma once

#include "nmrc/model.hpp"

#include <optional>

namespace nmrc {

// Band for "the state lies on the singular set" membership tests.
inline constexpr double kLocusTolerance = 1e-9;

/// Membership of a planar state in the singular set det(F1, [F1, F0]) = 0,
/// which is the union of the vertical axis y = 0 and the horizontal line
/// z = z0 = gamma / (2 delta).
struct SingularLocusReport {
  double det_value = 0.0;
  bool on_vertical = false;
  bool on_horizontal = false;
  std::optional<double> z0;  // empty when delta == 0
};

SingularLocusReport singular_locus(const SpinState& q, const SpinRates& r,
                                   double tol = kLocusTolerance);

/// Planar: d = det(F1, ad101), d_prime = det(F1, ad100), d_second = det(F1, F0).
/// Two-spin: d = det(F0, F1, ad1, ad101), d_prime = det(F0, F1, ad1, ad100).
struct DeterminantPair {
  double d = 0.0;
  double d_prime = 0.0;
  std::optional<double> d_second;
};

DeterminantPair planar_determinants(const SpinState& q, const SpinRates& r);
DeterminantPair two_spin_determinants(const ProductState& q, const SpinRates& r1,
                                      const SpinRates& r2);

/// Determinant of the 4x4 matrix whose columns are c0..c3, expanded through
/// complementary 2x2 minors.
double det4_columns(const Eigen::Vector4d& c0, const Eigen::Vector4d& c1,
                    const Eigen::Vector4d& c2, const Eigen::Vector4d& c3);

struct HorizontalLine {
  double z0 = 0.0;
  bool admissible_in_ball = false;  // Gamma > 3 gamma / 2
};

/// Throws DegenerateError when |delta| < 1e-12 (T1 == T2 species).
HorizontalLine horizontal_line(const SpinRates& r);

/// Singular control u = -D'/D on the singular set. Throws DomainError when
/// the state is off the locus and DegenerateError when |D| < 1e-12.
double singular_control_2d(const SpinState& q, const SpinRates& r);

enum class LineSpeed { kFast, kSlow };

/// Fast iff D * D'' > 0. Throws DegenerateError when |D D''| < 1e-14.
LineSpeed classify_singular_line(const SpinState& q, const SpinRates& r);

/// Sign (-1, 0, +1) of d(omega) for the clock form, i.e. of y (gamma - 2 delta z).
/// Throws DegenerateError on the collinear set |D''| <= 1e-12.
int clock_form_sign(const SpinState& q, const SpinRates& r);

/// |y_B| where the horizontal singular control reaches the bound m.
double saturation_point(const SpinRates& r, double m);

}  // namespace nmrc
