#include "nmrc/contrast.hpp"

#include "nmrc/errors.hpp"
#include "nmrc/ode.hpp"
#include "nmrc/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <opencv2/imgproc.hpp>

namespace nmrc {

namespace {

OdeOptions shooting_ode() {
  OdeOptions o;
  o.rtol = 1e-10;
  o.atol = 1e-12;
  o.record_steps = false;
  return o;
}

Vec initial_state() {
  Vec x(4);
  x << 0.0, 1.0, 0.0, 1.0;
  return x;
}

Vec4 residual_of(const Vec& z) {
  return {z[0], z[1], z[6] - z[2], z[7] - z[3]};
}

std::string format_step(const char* what, double s, double step) {
  std::ostringstream os;
  os << what << " at s=" << s << " step=" << step;
  return os.str();
}

// Tangent of the solution branch, dp0/ds = -J^{-1} dr/ds, with dr/ds by a
// forward difference in the family parameter. Zero when it cannot be formed.
Vec4 branch_tangent(const ProblemFamily& family, double s, double dir, const Vec4& p) {
  try {
    const ShootingEval e = shooting_evaluate(p, family(s), true);
    const double h = 1e-6 * std::max(1.0, std::abs(s)) * dir;
    const Vec4 drds = (shooting_residual(p, family(s + h)) - e.residual) / h;
    const Vec4 t = -e.jacobian.fullPivLu().solve(drds);
    if (t.allFinite()) return t;
  } catch (const Error&) {
  }
  return Vec4::Zero();
}

}  // namespace

void ShootingProblem::validate() const {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw DomainError("lambda must lie in [0, 1)");
  if (!(m > 0.0)) throw DomainError("control bound must be positive");
  if (!(transfer_time > 0.0)) throw DomainError("transfer time must be positive");
  if (t_min > 0.0 && transfer_time < t_min * (1.0 - 1e-12)) {
    throw DomainError("transfer time below T_min: spin 1 cannot be saturated");
  }
}

double saturation_time(const SpinRates& r, double m) { return tmin_synthesis(r, m).total_time; }

ShootingProblem make_problem(const SpinRates& spin1, const SpinRates& spin2, double t_factor,
                             double lambda, CostKind kind, double m) {
  ShootingProblem p;
  p.spin1 = spin1;
  p.spin2 = spin2;
  p.t_min = saturation_time(spin1, m);
  p.transfer_time = t_factor * p.t_min;
  p.lambda = lambda;
  p.kind = kind;
  p.m = m;
  p.validate();
  return p;
}

ShootingEval shooting_evaluate(const Vec4& p0, const ShootingProblem& problem,
                               bool with_jacobian) {
  problem.validate();
  if (!p0.allFinite()) throw DomainError("non-finite initial costate");
  const ExtremalField field(problem.system(), problem.law());
  Vec z0(8);
  z0 << initial_state(), p0;

  ShootingEval out;
  if (!with_jacobian) {
    const auto sol = integrate_ode([&](double, const Vec& z) { return field.rhs(z); }, 0.0, z0,
                                   problem.transfer_time, shooting_ode());
    out.final_state = sol.final_state();
    out.residual = residual_of(out.final_state);
    return out;
  }

  Vec y = Vec::Zero(8 + 32);
  y.head(8) = z0;
  for (int i = 0; i < 4; ++i) y[8 + 8 * i + 4 + i] = 1.0;
  auto rhs = [&](double, const Vec& v) {
    Vec d(40);
    const Vec z = v.head(8);
    d.head(8) = field.rhs(z);
    const Mat jac = field.jacobian(z);
    for (int i = 0; i < 4; ++i) d.segment(8 + 8 * i, 8) = jac * v.segment(8 + 8 * i, 8);
    return d;
  };
  const auto sol = integrate_ode(rhs, 0.0, y, problem.transfer_time, shooting_ode());
  const Vec& yf = sol.final_state();
  out.final_state = yf.head(8);
  out.residual = residual_of(out.final_state);
  for (int i = 0; i < 4; ++i) {
    const Vec d = yf.segment(8 + 8 * i, 8);
    out.jacobian.col(i) << d[0], d[1], d[6] - d[2], d[7] - d[3];
  }
  return out;
}

Vec4 shooting_residual(const Vec4& p0, const ShootingProblem& problem) {
  return shooting_evaluate(p0, problem, false).residual;
}

ShootingSolution solve_contrast(const ShootingProblem& problem, const Vec4& seed,
                                const SolveOptions& opts) {
  problem.validate();
  ShootingSolution best;
  best.p0 = seed;
  best.residual_norm = std::numeric_limits<double>::infinity();

  auto try_norm = [&](const Vec4& p) {
    try {
      return shooting_evaluate(p, problem, false).residual.norm();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  Vec4 p = seed;
  for (int k = 0; k < opts.max_iterations; ++k) {
    ShootingEval e;
    try {
      e = shooting_evaluate(p, problem, true);
    } catch (const Error& err) {
      best.diagnostic = std::string("integration failed: ") + err.what();
      break;
    }
    const double nr = e.residual.norm();
    if (nr < best.residual_norm) {
      best.p0 = p;
      best.residual_norm = nr;
      best.final_state = e.final_state;
      best.iterations = k;
    }
    if (nr < opts.tolerance) break;
    const Vec4 dp = e.jacobian.fullPivLu().solve(-e.residual);
    if (!dp.allFinite()) {
      best.diagnostic = "singular shooting Jacobian";
      break;
    }
    double a = 1.0;
    bool moved = false;
    while (a > 1e-6) {
      const Vec4 pn = p + a * dp;
      if (try_norm(pn) < (1.0 - 1e-4 * a) * nr) {
        p = pn;
        moved = true;
        break;
      }
      a *= 0.5;
    }
    if (!moved) {
      // A converged iterate may fail to decrease further at round-off level.
      if (nr >= kAcceptResidual) best.diagnostic = "line search failed";
      break;
    }
  }
  if (best.residual_norm > opts.tolerance && best.residual_norm < kAcceptResidual) {
    // Final iterate after the last accepted step.
    try {
      const auto e = shooting_evaluate(p, problem, false);
      if (e.residual.norm() < best.residual_norm) {
        best.p0 = p;
        best.residual_norm = e.residual.norm();
        best.final_state = e.final_state;
      }
    } catch (const Error&) {
    }
  }
  best.converged = best.residual_norm < kAcceptResidual;
  if (best.converged) {
    best.diagnostic.clear();
    best.contrast = contrast_value(best.final_state);
  } else if (best.diagnostic.empty()) {
    best.diagnostic = "no convergence after " + std::to_string(opts.max_iterations) + " iterations";
  }
  if (best.final_state.size() == 8) best.contrast = contrast_value(best.final_state);
  return best;
}

double contrast_value(const Vec& final_state) {
  if (final_state.size() < 4) throw DomainError("final state too short");
  return std::hypot(final_state[2], final_state[3]);
}

double contrast_value(const ShootingSolution& solution) {
  return contrast_value(solution.final_state);
}

ArcResult contrast_trajectory(const ShootingProblem& problem, const Vec4& p0) {
  problem.validate();
  ArcOptions opts;
  opts.ode.rtol = 1e-10;
  opts.ode.atol = 1e-12;
  return integrate_arc(problem.system(), {initial_state(), Vec(p0), 0.0}, problem.law(),
                       problem.transfer_time, {}, opts);
}

std::vector<Vec4> random_seeds(const ShootingProblem& problem, const SeedOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> expo(opts.log10_min, opts.log10_max);
  std::vector<std::pair<double, Vec4>> scored;
  scored.reserve(static_cast<std::size_t>(opts.samples));
  for (int i = 0; i < opts.samples; ++i) {
    Vec4 d;
    for (int k = 0; k < 4; ++k) d[k] = normal(rng);
    if (opts.spin2_zero) d.tail<2>().setZero();
    d.normalize();
    d *= std::pow(10.0, expo(rng));
    try {
      scored.emplace_back(shooting_residual(d, problem).norm(), d);
    } catch (const Error&) {
    }
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Vec4> out;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < opts.candidates; ++i) {
    out.push_back(scored[i].second);
  }
  return out;
}

ContinuationPath continue_path(const ProblemFamily& family, double s0, double s1,
                               const Vec4& seed, const ContinuationOptions& opts) {
  ContinuationPath path;
  const double dir = s1 >= s0 ? 1.0 : -1.0;
  std::vector<double> nodes;
  for (double v : opts.nodes) {
    if (dir * (v - s0) > 0.0 && dir * (s1 - v) >= 0.0) nodes.push_back(v);
  }
  std::sort(nodes.begin(), nodes.end(), [dir](double a, double b) { return dir * a < dir * b; });
  const auto is_node = [&opts](double v) {
    return std::find(opts.nodes.begin(), opts.nodes.end(), v) != opts.nodes.end();
  };

  ShootingProblem start = family(s0);
  ShootingSolution sol = solve_contrast(start, seed, opts.solve);
  if (!sol.converged) {
    path.stalled = true;
    path.log.push_back("start instance not solved: " + sol.diagnostic);
    return path;
  }
  path.entries.push_back({s0, start, sol, is_node(s0)});

  double s = s0;
  Vec4 p = sol.p0;
  Vec4 tangent = branch_tangent(family, s, dir, p);
  double step = opts.initial_step;
  std::size_t next_node = 0;
  int switches = 0;
  while (dir * (s1 - s) > 0.0) {
    double target = s + dir * step;
    if (next_node < nodes.size() && dir * (target - nodes[next_node]) >= 0.0) {
      target = nodes[next_node];
    }
    if (dir * (target - s1) > 0.0) target = s1;
    const ShootingProblem problem = family(target);
    const Vec4 predicted = p + (target - s) * tangent;
    const ShootingSolution next = solve_contrast(problem, predicted, opts.solve);
    // A corrector that lands far from the prediction has changed branch.
    const bool same_branch =
        (next.p0 - predicted).norm() <= opts.max_corrector * std::max(p.norm(), 1e-12);
    if (next.converged && same_branch) {
      const bool node = next_node < nodes.size() && target == nodes[next_node];
      if (node) ++next_node;
      s = target;
      p = next.p0;
      path.entries.push_back({s, problem, next, node || is_node(s)});
      tangent = branch_tangent(family, s, dir, p);
      step = std::min(step * opts.growth, opts.max_step);
    } else {
      path.log.push_back(format_step(next.converged ? "branch jump" : "rejected", target, step));
      step *= 0.5;
      if (step < opts.min_step) {
        // The branch ends here (a fold in s). Look for another branch one
        // full step ahead, accepting whatever Newton converges to.
        bool switched = false;
        if (switches < opts.max_branch_switches) {
          double jump = s + dir * opts.initial_step;
          if (next_node < nodes.size() && dir * (jump - nodes[next_node]) >= 0.0) {
            jump = nodes[next_node];
          }
          if (dir * (jump - s1) > 0.0) jump = s1;
          const ShootingProblem far = family(jump);
          for (const Vec4& guess : {p, Vec4(p + (jump - s) * tangent)}) {  // tangent is poor at a fold
            const ShootingSolution other = solve_contrast(far, guess, opts.solve);
            if (!other.converged) continue;
            path.log.push_back(format_step("branch switch", jump, jump - s));
            const bool node = next_node < nodes.size() && jump == nodes[next_node];
            if (node) ++next_node;
            s = jump;
            p = other.p0;
            path.entries.push_back({s, far, other, node || is_node(s)});
            tangent = branch_tangent(family, s, dir, p);
            step = opts.initial_step;
            ++switches;
            switched = true;
            break;
          }
        }
        if (!switched) {
          path.stalled = true;
          path.log.push_back(format_step("stalled", s, step));
          break;
        }
      }
    }
  }
  return path;
}

ProblemFamily lambda_family(const ShootingProblem& base) {
  return [base](double lambda) {
    ShootingProblem p = base;
    p.lambda = lambda;
    return p;
  };
}

ProblemFamily time_family(const ShootingProblem& base) {
  if (!(base.t_min > 0.0)) throw DomainError("time continuation needs T_min");
  return [base](double ratio) {
    ShootingProblem p = base;
    p.transfer_time = ratio * base.t_min;
    return p;
  };
}

SeededPath seed_and_continue(const ShootingProblem& problem, const SeedOptions& seed_opts,
                             const ContinuationOptions& opts) {
  ShootingProblem start = problem;
  start.lambda = 0.0;
  const auto seeds = random_seeds(start, seed_opts);
  SeededPath best;
  double best_lambda = -1.0;
  for (std::size_t c = 0; c < seeds.size(); ++c) {
    const ShootingSolution sol = solve_contrast(start, seeds[c], opts.solve);
    if (!sol.converged) continue;
    ContinuationPath path =
        continue_path(lambda_family(problem), 0.0, problem.lambda, sol.p0, opts);
    if (path.entries.empty()) continue;
    const double reached = path.back().parameter;
    if (!path.stalled) {
      return {std::move(path), static_cast<int>(c), true};
    }
    if (reached > best_lambda) {
      best_lambda = reached;
      best = {std::move(path), static_cast<int>(c), false};
    }
  }
  return best;
}

std::vector<TimeNode> time_sweep(const ShootingProblem& solved, const Vec4& p0,
                                 const std::vector<double>& times,
                                 const ContinuationOptions& opts) {
  if (!(solved.t_min > 0.0)) throw DomainError("time sweep needs T_min");
  const double r0 = solved.transfer_time / solved.t_min;
  std::vector<double> ratios;
  for (double t : times) ratios.push_back(t / solved.t_min);

  std::vector<TimeNode> out;
  for (double t : times) out.push_back({t, std::nullopt});
  auto record = [&](const ContinuationPath& path) {
    for (const auto& e : path.entries) {
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (e.parameter == ratios[i]) out[i].solution = e.solution;
      }
    }
  };

  ContinuationOptions o = opts;
  o.nodes = ratios;
  const auto family = time_family(solved);
  double hi = r0, lo = r0;
  for (double r : ratios) {
    hi = std::max(hi, r);
    lo = std::min(lo, r);
  }
  if (hi > r0) record(continue_path(family, r0, hi, p0, o));
  if (lo < r0) record(continue_path(family, r0, lo, p0, o));
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] == r0 && !out[i].solution) {
      const auto sol = solve_contrast(solved, p0, opts.solve);
      if (sol.converged) out[i].solution = sol;
    }
  }
  return out;
}

bool Polytope::contains(double x, double y, double tol) const {
  return x >= x_min - tol && x <= x_max + tol && y >= y_min - tol && y <= y_max + tol &&
         y <= 2.0 * x + tol;
}

namespace {

// Linear interpolation on the Delaunay triangulation of the samples, as
// griddata does.
std::optional<double> delaunay_linear(const std::vector<RaySample>& pts, double x, double y) {
  if (pts.empty()) return std::nullopt;
  double x0 = pts[0].t1_ms, x1 = x0, y0 = pts[0].t2_ms, y1 = y0;
  for (const auto& q : pts) {
    x0 = std::min(x0, q.t1_ms);
    x1 = std::max(x1, q.t1_ms);
    y0 = std::min(y0, q.t2_ms);
    y1 = std::max(y1, q.t2_ms);
  }
  // Subdiv2D's virtual outer vertices sit just outside its rectangle and
  // steal the thin triangles along the hull unless the rectangle is much
  // larger than the data.
  const double half = 50.0 * std::max({x1 - x0, y1 - y0, 1.0});
  const int left = static_cast<int>(std::floor(0.5 * (x0 + x1) - half));
  const int top = static_cast<int>(std::floor(0.5 * (y0 + y1) - half));
  const int side = static_cast<int>(std::ceil(2.0 * half)) + 2;
  cv::Subdiv2D subdiv(cv::Rect(left, top, side, side));
  std::map<std::pair<float, float>, std::size_t> index;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const cv::Point2f q(static_cast<float>(pts[i].t1_ms), static_cast<float>(pts[i].t2_ms));
    if (index.emplace(std::pair{q.x, q.y}, i).second) subdiv.insert(q);
  }
  for (const auto& q : pts) {
    if (std::hypot(q.t1_ms - x, q.t2_ms - y) < 1e-9) return q.contrast;
  }
  std::vector<cv::Vec6f> tris;
  subdiv.getTriangleList(tris);
  for (const auto& t : tris) {
    const RaySample* v[3];
    bool inner = true;
    for (int j = 0; j < 3 && inner; ++j) {
      const auto it = index.find({t[2 * j], t[2 * j + 1]});
      inner = it != index.end();  // triangles on the virtual outer vertices are dropped
      if (inner) v[j] = &pts[it->second];
    }
    if (!inner) continue;
    const double ax = v[0]->t1_ms, ay = v[0]->t2_ms;
    const double e1x = v[1]->t1_ms - ax, e1y = v[1]->t2_ms - ay;
    const double e2x = v[2]->t1_ms - ax, e2y = v[2]->t2_ms - ay;
    const double det = e1x * e2y - e1y * e2x;
    if (std::abs(det) < 1e-12) continue;
    const double b1 = ((x - ax) * e2y - (y - ay) * e2x) / det;
    const double b2 = (e1x * (y - ay) - e1y * (x - ax)) / det;
    const double tol = 1e-9;
    if (b1 < -tol || b2 < -tol || b1 + b2 > 1.0 + tol) continue;
    return (1.0 - b1 - b2) * v[0]->contrast + b1 * v[1]->contrast + b2 * v[2]->contrast;
  }
  return std::nullopt;
}

}  // namespace

std::vector<std::pair<double, double>> Polytope::vertices() const {
  // Box clipped by T2 <= 2 T1, counter-clockwise from (x_min, y_min).
  const std::vector<std::pair<double, double>> box{
      {x_min, y_min}, {x_max, y_min}, {x_max, y_max}, {x_min, y_max}};
  auto g = [](const std::pair<double, double>& q) { return q.second - 2.0 * q.first; };
  std::vector<std::pair<double, double>> out;
  auto push = [&](std::pair<double, double> q) {
    if (out.empty() || std::hypot(q.first - out.back().first, q.second - out.back().second) > 1e-9) {
      out.push_back(q);
    }
  };
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto& a = box[i];
    const auto& b = box[(i + 1) % box.size()];
    if (g(a) <= 0.0) push(a);
    if ((g(a) < 0.0 && g(b) > 0.0) || (g(a) > 0.0 && g(b) < 0.0)) {
      const double w = g(a) / (g(a) - g(b));
      push({a.first + w * (b.first - a.first), a.second + w * (b.second - a.second)});
    }
  }
  while (out.size() > 1 && std::hypot(out.front().first - out.back().first,
                                      out.front().second - out.back().second) <= 1e-9) {
    out.pop_back();
  }
  return out;
}

std::vector<std::pair<double, double>> boundary_points(const Polytope& poly, int n) {
  const auto v = poly.vertices();
  if (v.size() < 3) throw DomainError("empty polytope");
  if (n < 1) throw DomainError("need at least one boundary point");
  const std::size_t m = v.size();
  std::vector<double> len(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % m];
    len[i] = std::hypot(b.first - a.first, b.second - a.second);
    total += len[i];
  }
  // Points per edge, vertex included; the rest by largest remainder.
  std::vector<int> count(m, 0);
  std::vector<double> share(m);
  int left = n;
  if (n >= static_cast<int>(m)) {
    std::fill(count.begin(), count.end(), 1);
    left -= static_cast<int>(m);
  }
  const int spread = left;
  for (std::size_t i = 0; i < m; ++i) {
    share[i] = spread * len[i] / total;
    const int extra = static_cast<int>(std::floor(share[i]));
    count[i] += extra;
    share[i] -= extra;
    left -= extra;
  }
  while (left > 0) {
    const auto i = static_cast<std::size_t>(std::max_element(share.begin(), share.end()) - share.begin());
    ++count[i];
    share[i] -= 1.0;
    --left;
  }
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % m];
    for (int j = 0; j < count[i]; ++j) {
      const double w = static_cast<double>(j) / count[i];
      out.push_back({a.first + w * (b.first - a.first), a.second + w * (b.second - a.second)});
    }
  }
  return out;
}

std::optional<double> ContrastMap::interpolate(double t1_ms, double t2_ms) const {
  std::vector<RaySample> pts;
  for (const auto& r : rays) pts.insert(pts.end(), r.samples.begin(), r.samples.end());
  return delaunay_linear(pts, t1_ms, t2_ms);
}

int worker_count_from_env() {
  if (const char* env = std::getenv("NMRC_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

ContrastMap sweep_contrast_map(const RelaxationParams& spin1, const Polytope& polytope,
                               const SweepOptions& opts) {
  spin1.validate();
  if (opts.n_rays < 1 || opts.samples < 1) throw DomainError("need at least one ray and sample");
  const double sx = spin1.t1 * 1e3, sy = spin1.t2 * 1e3;
  if (!polytope.contains(sx, sy)) throw DomainError("spin 1 lies outside the polytope");

  const SpinRates r1 = spin1.rates();
  const ShootingProblem at_s = make_problem(r1, r1, opts.t_factor, opts.lambda, opts.kind, opts.m);
  SeedOptions seed = opts.seed;
  seed.spin2_zero = true;
  const SeededPath base = seed_and_continue(at_s, seed, opts.continuation);
  if (!base.reached) throw SolverError("no solution at the identical-species point S");
  const Vec4 p_s = base.path.back().solution.p0;

  ContrastMap map;
  map.spin1 = spin1;
  map.polytope = polytope;
  map.transfer_time = at_s.transfer_time;
  const auto ends = boundary_points(polytope, opts.n_rays);
  map.rays.resize(ends.size());

  ContinuationOptions co = opts.continuation;
  co.initial_step = std::min(co.initial_step, 1.0 / opts.samples);
  co.max_step = std::min(co.max_step, 1.0 / opts.samples);
  co.nodes.clear();
  for (int j = 1; j <= opts.samples; ++j) co.nodes.push_back(static_cast<double>(j) / opts.samples);

  auto run_ray = [&](std::size_t k) {
    SweepRay& ray = map.rays[k];
    ray.end_t1_ms = ends[k].first;
    ray.end_t2_ms = ends[k].second;
    const double reach = std::hypot(ray.end_t1_ms - sx, ray.end_t2_ms - sy);
    ray.angle = std::atan2(ray.end_t2_ms - sy, ray.end_t1_ms - sx);
    const double dx = reach > 0.0 ? (ray.end_t1_ms - sx) / reach : 0.0;
    const double dy = reach > 0.0 ? (ray.end_t2_ms - sy) / reach : 0.0;
    ray.samples.push_back({0.0, sx, sy, 0.0});
    if (reach <= 0.0) {
      ray.diagnostic = "zero-length ray";
      return;
    }
    const double omega = spin1.omega_max;
    auto family = [&, dx, dy, reach](double s) {
      ShootingProblem p = at_s;
      const double t1 = sx + s * reach * dx;
      const double t2 = std::min(sy + s * reach * dy, 2.0 * t1);  // rounding on the T2 = 2 T1 edge
      p.spin2 = RelaxationParams::from_ms(t1, t2, omega).rates();
      return p;
    };
    try {
      const ContinuationPath path = continue_path(family, 0.0, 1.0, p_s, co);
      for (const auto& e : path.entries) {
        if (!e.node) continue;
        ray.samples.push_back({e.parameter, sx + e.parameter * reach * dx,
                               sy + e.parameter * reach * dy, e.solution.contrast});
      }
      ray.stalled = path.stalled;
      if (path.stalled && !path.log.empty()) ray.diagnostic = path.log.back();
    } catch (const Error& e) {
      ray.stalled = true;
      ray.diagnostic = e.what();
    }
  };

  const int workers = std::max(1, opts.workers > 0 ? opts.workers : worker_count_from_env());
  if (workers == 1) {
    for (std::size_t k = 0; k < map.rays.size(); ++k) run_ray(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < map.rays.size(); k = next++) run_ray(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  return map;
}

}  // namespace nmrc
