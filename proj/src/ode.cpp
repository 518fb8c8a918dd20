#include "nmrc/ode.hpp"

#include "nmrc/errors.hpp"

#include <algorithm>
#include <cmath>

namespace nmrc {

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

struct Step {
  Vec y;
  Vec f;  // derivative at the new point (FSAL stage)
  double err = 0.0;
  bool finite = true;
};

double scaled_norm(const Vec& v, const Vec& y0, const Vec& y1, const OdeOptions& o) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double sc = o.atol + o.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = v[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(1, v.size())));
}

// One step of signed size h from (t, y) with k1 = f(t, y).
Step dp_step(const OdeRhs& f, double t, const Vec& y, const Vec& k1, double h,
             const OdeOptions& o) {
  const Vec k2 = f(t + c2 * h, y + h * (a21 * k1));
  const Vec k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
  const Vec k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
  const Vec k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
  const Vec k6 =
      f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
  Step s;
  s.y = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  s.f = f(t + h, s.y);
  const Vec errv = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * s.f);
  s.finite = s.y.allFinite() && s.f.allFinite() && errv.allFinite();
  s.err = s.finite ? scaled_norm(errv, y, s.y, o) : std::numeric_limits<double>::infinity();
  return s;
}

double initial_step(const OdeRhs& f, double t0, const Vec& y0, const Vec& f0, int dir,
                    const OdeOptions& o) {
  const double d0 = scaled_norm(y0, y0, y0, o);
  const double d1 = scaled_norm(f0, y0, y0, o);
  const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  const Vec y1 = y0 + dir * h0 * f0;
  const Vec f1 = f(t0 + dir * h0, y1);
  if (!f1.allFinite()) return h0 * 1e-3;
  const double d2 = scaled_norm(f1 - f0, y0, y0, o) / h0;
  const double dm = std::max(d1, d2);
  const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
  return std::min(100.0 * h0, h1);
}

bool crossed(double g0, double g1, int direction) {
  if (g0 == 0.0 || std::isnan(g0) || std::isnan(g1)) return false;
  const bool rising = g0 < 0.0 && g1 >= 0.0;
  const bool falling = g0 > 0.0 && g1 <= 0.0;
  if (direction > 0) return rising;
  if (direction < 0) return falling;
  return rising || falling;
}

}  // namespace

Vec hermite_interpolate(double t0, const Vec& y0, const Vec& f0, double t1, const Vec& y1,
                        const Vec& f1, double t) {
  const double h = t1 - t0;
  if (h == 0.0) return y0;
  const double s = (t - t0) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * f0 + (-2 * s3 + 3 * s2) * y1 +
         (s3 - s2) * h * f1;
}

Vec OdeSolution::interpolate(double time) const {
  if (t.empty()) throw SolverError("empty ODE solution");
  if (t.size() == 1) return y.front();
  const bool forward = t.back() >= t.front();
  auto cmp = [forward](double a, double b) { return forward ? a < b : a > b; };
  auto it = std::upper_bound(t.begin(), t.end(), time, cmp);
  std::size_t i = static_cast<std::size_t>(std::distance(t.begin(), it));
  i = std::clamp<std::size_t>(i, 1, t.size() - 1);
  return hermite_interpolate(t[i - 1], y[i - 1], dy[i - 1], t[i], y[i], dy[i], time);
}

OdeSolution integrate_ode(const OdeRhs& f, double t0, const Vec& y0, double t_end,
                          const OdeOptions& opts, std::span<const OdeEvent> events,
                          const StepHook& hook) {
  OdeSolution sol;
  double t = t0;
  Vec y = y0;
  Vec k1 = f(t, y);
  if (!k1.allFinite()) throw SolverError("non-finite derivative at the initial state");
  sol.t.push_back(t);
  sol.y.push_back(y);
  sol.dy.push_back(k1);
  if (t_end == t0) return sol;

  const int dir = t_end > t0 ? 1 : -1;
  double h = opts.initial_step > 0.0 ? opts.initial_step : initial_step(f, t, y, k1, dir, opts);
  h = std::min(h, opts.max_step);

  std::vector<double> g_prev(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) g_prev[i] = events[i].g(t, y);

  while (dir * (t_end - t) > 0.0) {
    if (sol.steps + sol.rejected >= opts.max_steps) {
      throw SolverError("ODE integration exceeded the maximal number of steps");
    }
    const double remaining = std::abs(t_end - t);
    h = std::min({h, remaining, opts.max_step});
    // Avoid a sliver step at the very end.
    if (remaining - h < 1e-12 * std::max(1.0, std::abs(t))) h = remaining;
    if (h < opts.min_step * std::max(1.0, std::abs(t)) && h < remaining) {
      if (!opts.stop_on_underflow) {
        throw SolverError("ODE step size underflow at t = " + std::to_string(t));
      }
      sol.underflow = true;
      if (sol.t.back() != t) {
        sol.t.push_back(t);
        sol.y.push_back(y);
        sol.dy.push_back(k1);
      }
      break;
    }

    Step s = dp_step(f, t, y, k1, dir * h, opts);
    if (!s.finite || s.err > 1.0) {
      const double fac = s.finite ? std::max(0.2, 0.9 * std::pow(s.err, -0.2)) : 0.25;
      h *= fac;
      ++sol.rejected;
      continue;
    }

    const double t_new = (h == remaining) ? t_end : t + dir * h;
    if (hook) {
      hook(t_new, s.y);
      s.f = f(t_new, s.y);
    }

    // Event detection on the accepted step.
    struct Candidate {
      std::size_t index;
      double time;
    };
    std::vector<Candidate> found;
    std::vector<double> g_new(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
      g_new[i] = events[i].g(t_new, s.y);
      if (!crossed(g_prev[i], g_new[i], events[i].direction)) continue;
      double lo = t, hi = t_new, glo = g_prev[i];
      for (int it = 0; it < 200 && std::abs(hi - lo) > opts.event_time_tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double gm = events[i].g(mid, hermite_interpolate(t, y, k1, t_new, s.y, s.f, mid));
        if ((glo < 0.0) == (gm < 0.0) && gm != 0.0) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      found.push_back({i, hi});
    }
    std::sort(found.begin(), found.end(), [dir](const Candidate& a, const Candidate& b) {
      return dir > 0 ? a.time < b.time : a.time > b.time;
    });

    bool stop = false;
    for (const auto& c : found) {
      // Re-integrate from the step start to the root for an accurate state.
      Step part = dp_step(f, t, y, k1, c.time - t, opts);
      if (hook) hook(c.time, part.y);
      sol.hits.push_back({c.index, c.time, part.y});
      if (events[c.index].terminal) {
        sol.t.push_back(c.time);
        sol.y.push_back(part.y);
        sol.dy.push_back(f(c.time, part.y));
        sol.stopped_by_event = true;
        ++sol.steps;
        stop = true;
        break;
      }
    }
    if (stop) break;

    t = t_new;
    y = std::move(s.y);
    k1 = std::move(s.f);
    g_prev = std::move(g_new);
    ++sol.steps;
    if (opts.record_steps || dir * (t_end - t) <= 0.0) {
      sol.t.push_back(t);
      sol.y.push_back(y);
      sol.dy.push_back(k1);
    }
    const double fac = s.err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(s.err, -0.2), 0.2, 5.0);
    h *= fac;
  }
  if (!opts.record_steps && sol.t.size() > 2) {
    sol.t.erase(sol.t.begin() + 1, sol.t.end() - 1);
    sol.y.erase(sol.y.begin() + 1, sol.y.end() - 1);
    sol.dy.erase(sol.dy.begin() + 1, sol.dy.end() - 1);
  }
  return sol;
}

}  // namespace nmrc
