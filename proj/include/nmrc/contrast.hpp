#pragma once

#include "nmrc/extremal_flow.hpp"
#include "nmrc/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nmrc {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

// Residual norm below which a shooting solution is accepted.
inline constexpr double kAcceptResidual = 1e-8;

/// Contrast problem: from the north poles, bring spin 1 to the origin at
/// time T while maximizing |q2(T)|, with cost -|q2(T)|^2 + (1 - lambda) int |u|^k.
struct ShootingProblem {
  SpinRates spin1;
  SpinRates spin2;
  double transfer_time = 0.0;
  double lambda = 0.0;
  CostKind kind = CostKind::kQuadratic;
  double m = kDefaultControlBound;
  // T_min of spin 1; when positive, transfer times below it are refused.
  double t_min = 0.0;

  void validate() const;
  SpinSystem system() const { return SpinSystem::pair(spin1, spin2); }
  RegularizedLaw law() const { return {kind, lambda, m}; }
};

/// Minimum time to saturate a single spin from the north pole.
double saturation_time(const SpinRates& r, double m);

/// Problem with T = t_factor * T_min(spin1).
ShootingProblem make_problem(const SpinRates& spin1, const SpinRates& spin2, double t_factor,
                             double lambda, CostKind kind, double m = kDefaultControlBound);

struct ShootingEval {
  Vec4 residual = Vec4::Zero();
  Mat4 jacobian = Mat4::Zero();
  Vec final_state;  // (x, p) at T
};

/// (y1(T), z1(T), p_y2(T) - y2(T), p_z2(T) - z2(T)) of the regularized
/// extremal started at (north poles, p0).
Vec4 shooting_residual(const Vec4& p0, const ShootingProblem& problem);
/// Residual and, optionally, its Jacobian from the variational equations.
ShootingEval shooting_evaluate(const Vec4& p0, const ShootingProblem& problem,
                               bool with_jacobian);

struct SolveOptions {
  int max_iterations = 50;
  // Newton stops below this residual; acceptance uses kAcceptResidual.
  double tolerance = 1e-10;
};

struct ShootingSolution {
  Vec4 p0 = Vec4::Zero();
  double residual_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  Vec final_state;
  double contrast = 0.0;
  std::string diagnostic;
};

/// Damped Newton on the shooting residual. On failure the best iterate is
/// returned with converged = false and a diagnostic.
ShootingSolution solve_contrast(const ShootingProblem& problem, const Vec4& seed,
                                const SolveOptions& opts = {});

/// sqrt(y2(T)^2 + z2(T)^2).
double contrast_value(const ShootingSolution& solution);
double contrast_value(const Vec& final_state);

/// Full trajectory of the extremal with initial costate p0.
ArcResult contrast_trajectory(const ShootingProblem& problem, const Vec4& p0);

struct SeedOptions {
  int samples = 10000;
  // Costate magnitudes are drawn log-uniformly in [10^lo, 10^hi].
  double log10_min = -2.0;
  double log10_max = 1.0;
  std::uint64_t seed = 1;
  int candidates = 8;
  // Restrict the search to p2(0) = 0 (identical species).
  bool spin2_zero = false;
};

/// Random costates sorted by increasing residual norm (best `candidates`).
std::vector<Vec4> random_seeds(const ShootingProblem& problem, const SeedOptions& opts);

struct ContinuationOptions {
  double initial_step = 0.1;
  double min_step = 1e-4;
  double max_step = 0.1;
  double growth = 1.5;
  // Steps whose Newton correction exceeds this fraction of |p0| are
  // treated as branch jumps and retried with half the step.
  double max_corrector = 0.05;
  // When the step underflows (fold), restart this many times on whatever
  // branch Newton finds one initial_step further; then the path stalls.
  int max_branch_switches = 3;
  // Parameter values that the path must visit exactly (recorded as nodes).
  std::vector<double> nodes;
  SolveOptions solve;
};

struct PathEntry {
  double parameter = 0.0;
  ShootingProblem problem;
  ShootingSolution solution;
  bool node = false;
};

struct ContinuationPath {
  std::vector<PathEntry> entries;
  std::vector<std::string> log;
  bool stalled = false;

  const PathEntry& back() const { return entries.back(); }
};

using ProblemFamily = std::function<ShootingProblem(double)>;

/// Discrete continuation s0 -> s1 along a one-parameter family: each solved
/// instance, moved along the branch tangent, seeds the next; steps grow on
/// success and halve on failure or on a branch jump. When the step falls
/// below min_step the path tries to switch branch (logged as "branch
/// switch") and otherwise stalls. The seed must solve family(s0) approximately.
ContinuationPath continue_path(const ProblemFamily& family, double s0, double s1,
                               const Vec4& seed, const ContinuationOptions& opts);

/// Family varying lambda (T fixed) or T (lambda fixed).
ProblemFamily lambda_family(const ShootingProblem& base);
ProblemFamily time_family(const ShootingProblem& base);

struct SeededPath {
  ContinuationPath path;
  int candidate = -1;  // index of the random seed that reached the target
  bool reached = false;
};

/// Random search at lambda = 0 followed by the lambda path to
/// problem.lambda; candidates are tried in order of residual until one
/// reaches the target.
SeededPath seed_and_continue(const ShootingProblem& problem, const SeedOptions& seed_opts,
                             const ContinuationOptions& opts);

struct TimeNode {
  double transfer_time = 0.0;
  std::optional<ShootingSolution> solution;
};

/// Contrast at the requested transfer times, obtained by continuation in T
/// from a solved instance (upwards and downwards).
std::vector<TimeNode> time_sweep(const ShootingProblem& solved, const Vec4& p0,
                                 const std::vector<double>& times,
                                 const ContinuationOptions& opts);

/// Feasible (T1, T2) region of spin 2 in ms: a box clipped by T2 <= 2 T1.
struct Polytope {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  bool contains(double x, double y, double tol = 1e-9) const;
  /// Corners of the clipped region, counter-clockwise from (x_min, y_min).
  std::vector<std::pair<double, double>> vertices() const;
};

/// n points F_k on the edges of the polytope: every vertex, then the
/// remaining points spread over the edges in proportion to their length.
std::vector<std::pair<double, double>> boundary_points(const Polytope& poly, int n);

struct SweepOptions {
  int n_rays = 8;
  int samples = 8;
  double t_factor = 1.5;
  CostKind kind = CostKind::kPower;
  double lambda = 0.9;
  double m = kDefaultControlBound;
  SeedOptions seed;
  ContinuationOptions continuation;
  // Number of threads for the rays (0: NMRC_WORKERS or 1).
  int workers = 0;
};

struct RaySample {
  double s = 0.0;
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  double contrast = 0.0;
};

struct SweepRay {
  double angle = 0.0;
  double end_t1_ms = 0.0;
  double end_t2_ms = 0.0;
  std::vector<RaySample> samples;
  bool stalled = false;
  std::string diagnostic;
};

struct ContrastMap {
  RelaxationParams spin1;
  Polytope polytope;
  double transfer_time = 0.0;
  std::vector<SweepRay> rays;

  /// Linear interpolation on the Delaunay triangulation of all ray samples.
  /// Returns nullopt outside their convex hull.
  std::optional<double> interpolate(double t1_ms, double t2_ms) const;
};

/// Linear homotopy of the spin-2 parameters from S = spin1 (zero contrast)
/// to the n_rays points F_k of boundary_points.
ContrastMap sweep_contrast_map(const RelaxationParams& spin1, const Polytope& polytope,
                               const SweepOptions& opts);

/// Worker count from the NMRC_WORKERS environment variable (default 1).
int worker_count_from_env();

}  // namespace nmrc
