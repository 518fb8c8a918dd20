#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nmrc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Default maximal field amplitude, 2*pi x 32.3 Hz.
inline constexpr double kDefaultOmegaMax = kTwoPi * 32.3;
// Normalized control bound |u| <= 2*pi.
inline constexpr double kDefaultControlBound = kTwoPi;
inline constexpr double kBallTolerance = 1e-9;

/// Normalized relaxation rates of one spin species: Gamma (transverse) and
/// gamma (longitudinal), both dimensionless.
struct SpinRates {
  double big_gamma = 0.0;
  double gamma = 0.0;

  double delta() const { return gamma - big_gamma; }
};

/// Physical relaxation times (seconds) and maximal field amplitude (rad/s).
struct RelaxationParams {
  double t1 = 0.0;
  double t2 = 0.0;
  double omega_max = kDefaultOmegaMax;

  static RelaxationParams from_ms(double t1_ms, double t2_ms,
                                  double omega_max = kDefaultOmegaMax);

  // Throws DomainError if the physical invariants do not hold.
  void validate() const;
  double gamma() const;
  double big_gamma() const;
  SpinRates rates() const;
};

/// Gamma = 2 pi / (omega_max T2), gamma = 2 pi / (omega_max T1).
SpinRates normalize_params(double t1, double t2, double omega_max);

/// Physical seconds corresponding to a normalized time.
double physical_time(double normalized_time, double omega_max);

/// Point of the Bloch disk (meridian plane x = 0).
struct SpinState {
  double y = 0.0;
  double z = 1.0;

  double radius() const;
  bool in_ball(double tol = kBallTolerance) const;
  Eigen::Vector2d vec() const { return {y, z}; }
};

/// Pair of uncoupled spins; flattened as q = (y1, z1, y2, z2).
struct ProductState {
  SpinState spin1;
  SpinState spin2;

  Eigen::Vector4d flatten() const;
  static ProductState from_flat(const Eigen::Ref<const Eigen::Vector4d>& q);
};

enum class Field { kDrift, kControl };
enum class Bracket {
  kAd1,    // [F1, F0]
  kAd100,  // [[F1, F0], F0]
  kAd101,  // [[F1, F0], F1]
};

Eigen::Vector2d eval_field(Field which, const SpinState& q, const SpinRates& r);
Eigen::Vector4d eval_field(Field which, const ProductState& q,
                           const SpinRates& r1, const SpinRates& r2);
Eigen::Vector2d eval_bracket(Bracket which, const SpinState& q, const SpinRates& r);
Eigen::Vector4d eval_bracket(Bracket which, const ProductState& q,
                             const SpinRates& r1, const SpinRates& r2);

/// Block-diagonal system of N uncoupled spins driven by one control u:
/// dq/dt = F0(q) + u F1(q), state dimension 2N.
///
/// Every field and bracket is affine in the state, v(q) = M q + c, so the
/// Jacobians are constant matrices and are exposed as such.
class SpinSystem {
 public:
  explicit SpinSystem(std::vector<SpinRates> spins);
  static SpinSystem single(const SpinRates& r) { return SpinSystem({r}); }
  static SpinSystem pair(const SpinRates& r1, const SpinRates& r2) {
    return SpinSystem({r1, r2});
  }

  int num_spins() const { return static_cast<int>(spins_.size()); }
  int dim() const { return 2 * num_spins(); }
  const SpinRates& spin(int i) const { return spins_.at(static_cast<std::size_t>(i)); }

  Vec field(Field which, const Vec& x) const;
  Vec bracket(Bracket which, const Vec& x) const;
  const Mat& field_jacobian(Field which) const;
  const Mat& bracket_jacobian(Bracket which) const;

  /// Equilibrium of the free motion: every spin at (0, 1).
  Vec north_pole() const;

 private:
  std::vector<SpinRates> spins_;
  Mat jac_f0_, jac_f1_, jac_ad1_, jac_ad100_, jac_ad101_;
};

struct SpeciesPreset {
  std::string_view name;
  double t1_ms;
  double t2_ms;
};

std::span<const SpeciesPreset> species_presets();
/// Looks up a species ("fluid", "water", "grey", "white", "deoxy-blood",
/// "oxy-blood"). Throws DomainError for unknown names.
RelaxationParams species_preset(std::string_view name,
                                double omega_max = kDefaultOmegaMax);

struct PairPreset {
  std::string_view name;
  std::string_view spin1;
  std::string_view spin2;
};

std::span<const PairPreset> pair_presets();

/// Parameters of a run: one or two species sharing omega_max.
struct ModelConfig {
  RelaxationParams spin1;
  std::optional<RelaxationParams> spin2;
  double omega_max = kDefaultOmegaMax;
};

/// Resolves a species name, a pair name such as "fluid-water", or
/// "<spin1>/<spin2>" into a config.
ModelConfig config_from_preset(std::string_view name,
                               double omega_max = kDefaultOmegaMax);

/// JSON schema: {"spin1": {"t1_ms": .., "t2_ms": ..}, "spin2": {...},
/// "omega_max_hz": ..}. spin2 and omega_max_hz are optional; omega_max_hz is
/// the frequency in Hz (omega_max = 2 pi * omega_max_hz).
ModelConfig parse_model_config(std::string_view json_text);
ModelConfig read_model_config(const std::filesystem::path& path);
std::string model_config_to_json(const ModelConfig& cfg);

}  // namespace nmrc
