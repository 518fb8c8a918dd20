#include "nmrc/geometry.hpp"

#include "nmrc/errors.hpp"

#include <cmath>

namespace nmrc {

namespace {

double det2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a[0] * b[1] - a[1] * b[0];
}

void require_on_locus(const SpinState& q, const SpinRates& r) {
  const auto report = singular_locus(q, r);
  if (std::abs(report.det_value) >= kLocusTolerance) {
    throw DomainError("state is not on the singular set");
  }
}

}  // namespace

SingularLocusReport singular_locus(const SpinState& q, const SpinRates& r, double tol) {
  SingularLocusReport out;
  const auto f1 = eval_field(Field::kControl, q, r);
  const auto ad1 = eval_bracket(Bracket::kAd1, q, r);
  out.det_value = det2(f1, ad1);
  out.on_vertical = std::abs(q.y) < tol;
  if (std::abs(r.delta()) >= 1e-12) {
    out.z0 = r.gamma / (2.0 * r.delta());
    out.on_horizontal = std::abs(q.z - *out.z0) < tol;
  }
  return out;
}

DeterminantPair planar_determinants(const SpinState& q, const SpinRates& r) {
  const auto f0 = eval_field(Field::kDrift, q, r);
  const auto f1 = eval_field(Field::kControl, q, r);
  DeterminantPair out;
  out.d = det2(f1, eval_bracket(Bracket::kAd101, q, r));
  out.d_prime = det2(f1, eval_bracket(Bracket::kAd100, q, r));
  out.d_second = det2(f1, f0);
  return out;
}

double det4_columns(const Eigen::Vector4d& c0, const Eigen::Vector4d& c1,
                    const Eigen::Vector4d& c2, const Eigen::Vector4d& c3) {
  // Laplace expansion along the first two columns: sum over row pairs of the
  // 2x2 minor in (c0, c1) times the signed complementary minor in (c2, c3).
  const auto m01 = [&](int i, int j) { return c0[i] * c1[j] - c0[j] * c1[i]; };
  const auto m23 = [&](int i, int j) { return c2[i] * c3[j] - c2[j] * c3[i]; };
  return m01(0, 1) * m23(2, 3) - m01(0, 2) * m23(1, 3) + m01(0, 3) * m23(1, 2) +
         m01(1, 2) * m23(0, 3) - m01(1, 3) * m23(0, 2) + m01(2, 3) * m23(0, 1);
}

DeterminantPair two_spin_determinants(const ProductState& q, const SpinRates& r1,
                                      const SpinRates& r2) {
  const auto f0 = eval_field(Field::kDrift, q, r1, r2);
  const auto f1 = eval_field(Field::kControl, q, r1, r2);
  const auto ad1 = eval_bracket(Bracket::kAd1, q, r1, r2);
  DeterminantPair out;
  out.d = det4_columns(f0, f1, ad1, eval_bracket(Bracket::kAd101, q, r1, r2));
  out.d_prime = det4_columns(f0, f1, ad1, eval_bracket(Bracket::kAd100, q, r1, r2));
  return out;
}

HorizontalLine horizontal_line(const SpinRates& r) {
  const double delta = r.delta();
  if (std::abs(delta) < 1e-12) {
    throw DegenerateError("no horizontal singular line: delta = gamma - Gamma vanishes");
  }
  return HorizontalLine{r.gamma / (2.0 * delta), r.big_gamma > 1.5 * r.gamma};
}

double singular_control_2d(const SpinState& q, const SpinRates& r) {
  require_on_locus(q, r);
  const auto dp = planar_determinants(q, r);
  if (std::abs(dp.d) < 1e-12) {
    throw DegenerateError("D vanishes: singular control undefined (saturation)");
  }
  return -dp.d_prime / dp.d;
}

LineSpeed classify_singular_line(const SpinState& q, const SpinRates& r) {
  require_on_locus(q, r);
  const auto dp = planar_determinants(q, r);
  const double prod = dp.d * *dp.d_second;
  if (std::abs(prod) < 1e-14) {
    throw DegenerateError("fast/slow classification undetermined (D D'' = 0)");
  }
  return prod > 0.0 ? LineSpeed::kFast : LineSpeed::kSlow;
}

int clock_form_sign(const SpinState& q, const SpinRates& r) {
  const double d_second = *planar_determinants(q, r).d_second;
  if (std::abs(d_second) <= 1e-12) {
    throw DegenerateError("clock form undefined on the collinear set");
  }
  const double v = q.y * (r.gamma - 2.0 * r.delta() * q.z);
  if (std::abs(v) < 1e-15) return 0;
  return v > 0.0 ? 1 : -1;
}

double saturation_point(const SpinRates& r, double m) {
  const auto line = horizontal_line(r);
  if (!line.admissible_in_ball) {
    throw DegenerateError("horizontal singular line does not cut the Bloch disk");
  }
  if (!(m > 0.0)) throw DomainError("control bound must be positive");
  return r.gamma * (2.0 * r.big_gamma - r.gamma) / (2.0 * std::abs(r.delta()) * m);
}

}  // namespace nmrc
