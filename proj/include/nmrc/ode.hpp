#pragma once

#include "nmrc/model.hpp"

#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace nmrc {

struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double initial_step = 0.0;  // 0 selects a step automatically
  double max_step = std::numeric_limits<double>::infinity();
  // Step-size underflow threshold, relative to max(1, |t|).
  double min_step = 1e-13;
  std::size_t max_steps = 2'000'000;
  // Event roots are bisected until the bracket is narrower than this.
  double event_time_tol = 1e-10;
  bool record_steps = true;
  // Return the partial solution instead of throwing on step-size underflow.
  bool stop_on_underflow = false;
};

struct OdeEvent {
  std::function<double(double t, const Vec& y)> g;
  bool terminal = true;
  int direction = 0;  // +1: rising zero only, -1: falling only, 0: both
};

struct OdeEventHit {
  std::size_t event_index = 0;
  double t = 0.0;
  Vec y;
};

/// Accepted steps (t, y, dy/dt) and the event log. When record_steps is off
/// only the initial and final states are kept.
struct OdeSolution {
  std::vector<double> t;
  std::vector<Vec> y;
  std::vector<Vec> dy;
  std::vector<OdeEventHit> hits;
  bool stopped_by_event = false;
  bool underflow = false;
  std::size_t steps = 0;
  std::size_t rejected = 0;

  const Vec& final_state() const { return y.back(); }
  double final_time() const { return t.back(); }
  /// Cubic Hermite interpolation through the recorded steps.
  Vec interpolate(double time) const;
};

using OdeRhs = std::function<Vec(double t, const Vec& y)>;
// Applied to every accepted state (used to re-project onto invariant sets).
using StepHook = std::function<void(double t, Vec& y)>;

/// Embedded Dormand-Prince 5(4) pair with adaptive steps, cubic Hermite dense
/// output and event location by bisection. t_end < t0 integrates backwards.
/// Throws SolverError when max_steps is exceeded and on step-size underflow
/// unless stop_on_underflow is set.
OdeSolution integrate_ode(const OdeRhs& f, double t0, const Vec& y0, double t_end,
                          const OdeOptions& opts = {},
                          std::span<const OdeEvent> events = {},
                          const StepHook& hook = {});

Vec hermite_interpolate(double t0, const Vec& y0, const Vec& f0, double t1, const Vec& y1,
                        const Vec& f1, double t);

}  // namespace nmrc
