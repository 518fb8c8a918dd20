#include "nmrc/bi_input.hpp"

#include "nmrc/errors.hpp"

#include <cmath>

namespace nmrc {

BiInputControl bi_input_order_zero(double h1, double h2, double m) {
  const double norm2 = h1 * h1 + h2 * h2;
  if (norm2 <= 1e-20) throw DegenerateError("on the switching surface H1 = H2 = 0");
  const double norm = std::sqrt(norm2);
  return {m * h1 / norm, m * h2 / norm};
}

BiInputSystem::BiInputSystem(std::vector<SpinRates> spins) : spins_(std::move(spins)) {
  if (spins_.empty()) throw DomainError("bi-input system needs at least one spin");
}

Vec BiInputSystem::drift(const Vec& x) const {
  Vec out(dim());
  for (int i = 0; i < num_spins(); ++i) {
    const auto& r = spins_[static_cast<std::size_t>(i)];
    out.segment<3>(3 * i) << -r.big_gamma * x[3 * i], -r.big_gamma * x[3 * i + 1],
        r.gamma * (1.0 - x[3 * i + 2]);
  }
  return out;
}

Vec BiInputSystem::control_field(int channel, const Vec& x) const {
  Vec out(dim());
  for (int i = 0; i < num_spins(); ++i) {
    const double xi = x[3 * i], yi = x[3 * i + 1], zi = x[3 * i + 2];
    if (channel == 1) {
      out.segment<3>(3 * i) << 0.0, -zi, yi;
    } else {
      out.segment<3>(3 * i) << zi, 0.0, -xi;
    }
  }
  return out;
}

Mat BiInputSystem::drift_jacobian() const {
  Mat a = Mat::Zero(dim(), dim());
  for (int i = 0; i < num_spins(); ++i) {
    const auto& r = spins_[static_cast<std::size_t>(i)];
    a(3 * i, 3 * i) = -r.big_gamma;
    a(3 * i + 1, 3 * i + 1) = -r.big_gamma;
    a(3 * i + 2, 3 * i + 2) = -r.gamma;
  }
  return a;
}

Mat BiInputSystem::control_jacobian(int channel) const {
  Mat a = Mat::Zero(dim(), dim());
  for (int i = 0; i < num_spins(); ++i) {
    const int b = 3 * i;
    if (channel == 1) {
      a(b + 1, b + 2) = -1.0;
      a(b + 2, b + 1) = 1.0;
    } else {
      a(b, b + 2) = 1.0;
      a(b + 2, b) = -1.0;
    }
  }
  return a;
}

BiInputControl bi_input_order_zero(const BiInputSystem& sys, const ExtremalPoint& z, double m) {
  return bi_input_order_zero(z.p.dot(sys.control_field(1, z.x)),
                             z.p.dot(sys.control_field(2, z.x)), m);
}

BiInputControl bi_input_regularized(double h1, double h2, CostKind kind, double lambda,
                                    double m) {
  const double norm = std::hypot(h1, h2);
  if (norm == 0.0) return {};
  const double rho = regularized_control(norm, kind, lambda, m);
  return {rho * h1 / norm, rho * h2 / norm};
}

Vec bi_input_regularized_rhs(const BiInputSystem& sys, const Vec& z, CostKind kind,
                             double lambda, double m) {
  const int n = sys.dim();
  const Vec x = z.head(n);
  const Vec p = z.tail(n);
  const auto u = bi_input_regularized(p.dot(sys.control_field(1, x)),
                                      p.dot(sys.control_field(2, x)), kind, lambda, m);
  Vec out(2 * n);
  out.head(n) =
      sys.drift(x) + u.u1 * sys.control_field(1, x) + u.u2 * sys.control_field(2, x);
  out.tail(n) = -(sys.drift_jacobian() + u.u1 * sys.control_jacobian(1) +
                  u.u2 * sys.control_jacobian(2))
                     .transpose() *
                p;
  return out;
}

Vec lift_to_bi_input(const Vec& z_meridian, int num_spins) {
  const int n2 = 2 * num_spins;
  const int n3 = 3 * num_spins;
  if (z_meridian.size() != 2 * n2) throw DomainError("meridian extremal has the wrong size");
  Vec out = Vec::Zero(2 * n3);
  for (int i = 0; i < num_spins; ++i) {
    out[3 * i + 1] = z_meridian[2 * i];
    out[3 * i + 2] = z_meridian[2 * i + 1];
    out[n3 + 3 * i + 1] = z_meridian[n2 + 2 * i];
    out[n3 + 3 * i + 2] = z_meridian[n2 + 2 * i + 1];
  }
  return out;
}

}  // namespace nmrc
