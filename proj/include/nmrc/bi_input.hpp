#pragma once

#include "nmrc/extremal_flow.hpp"
#include "nmrc/model.hpp"

namespace nmrc {

/// Control pair (u1, u2) acting on F1 and F2.
struct BiInputControl {
  double u1 = 0.0;
  double u2 = 0.0;
};

/// Order-zero maximizer u_i = m H_i / sqrt(H1^2 + H2^2) of H0 + u1 H1 + u2 H2
/// over the disk of radius m. Throws DegenerateError on the switching
/// surface H1^2 + H2^2 <= 1e-20.
BiInputControl bi_input_order_zero(double h1, double h2, double m = 1.0);

/// Uncoupled spins in the full Bloch ball, state (x_i, y_i, z_i) per spin,
/// driven by two controls:
///   F0 = -Gamma x d/dx - Gamma y d/dy + gamma (1 - z) d/dz
///   F1 = -z d/dy + y d/dz,   F2 = z d/dx - x d/dz.
class BiInputSystem {
 public:
  explicit BiInputSystem(std::vector<SpinRates> spins);

  int num_spins() const { return static_cast<int>(spins_.size()); }
  int dim() const { return 3 * num_spins(); }

  Vec drift(const Vec& x) const;
  Vec control_field(int channel, const Vec& x) const;  // channel 1 or 2
  Mat drift_jacobian() const;
  Mat control_jacobian(int channel) const;

 private:
  std::vector<SpinRates> spins_;
};

BiInputControl bi_input_order_zero(const BiInputSystem& sys, const ExtremalPoint& z,
                                   double m = 1.0);

/// Regularized disk law: direction (H1, H2) / |(H1, H2)| with magnitude given
/// by the scalar regularized maximizer of |H|. Reduces to the single-input
/// law when H2 = 0.
BiInputControl bi_input_regularized(double h1, double h2, CostKind kind, double lambda,
                                    double m);

/// Right-hand side of the bi-input extremal system under the regularized
/// disk law, z = (x, p) in R^{6N}.
Vec bi_input_regularized_rhs(const BiInputSystem& sys, const Vec& z, CostKind kind,
                             double lambda, double m);

/// Embeds a meridian extremal z = (q, p) with q = (y_i, z_i) into the
/// bi-input state space by setting x_i = 0 and the matching costates to 0.
Vec lift_to_bi_input(const Vec& z_meridian, int num_spins);

}  // namespace nmrc
