#include "nmrc/cli.hpp"

#include "nmrc/conjugate.hpp"
#include "nmrc/contrast.hpp"
#include "nmrc/errors.hpp"
#include "nmrc/extremal_flow.hpp"
#include "nmrc/geometry.hpp"
#include "nmrc/model.hpp"
#include "nmrc/phantom.hpp"
#include "nmrc/synthesis.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>

namespace nmrc::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

template <class F>
json attempt(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return json{{"error", e.what()}};
  }
}

struct ModelOptions {
  std::string preset;
  std::string config;
  double omega_hz = 32.3;
  double m = kTwoPi;
  std::string out_dir = ".";
};

void add_model_options(CLI::App* app, ModelOptions& o, std::string default_preset) {
  o.preset = std::move(default_preset);
  app->add_option("--preset", o.preset, "species (fluid, grey, ...), pair (fluid-water) or a/b")
      ->capture_default_str();
  app->add_option("--config", o.config, "JSON model config (overrides --preset)")
      ->check(CLI::ExistingFile);
  app->add_option("--omega-hz", o.omega_hz, "maximal field amplitude / 2 pi, Hz")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--m", o.m, "normalized control bound")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--out-dir", o.out_dir, "directory for artifacts")->capture_default_str();
}

ModelConfig resolve_model(const ModelOptions& o) {
  if (!o.config.empty()) return read_model_config(o.config);
  return config_from_preset(o.preset, kTwoPi * o.omega_hz);
}

const RelaxationParams& require_spin2(const ModelConfig& cfg) {
  if (!cfg.spin2) throw UsageError("this command needs a pair of species (e.g. fluid-water)");
  return *cfg.spin2;
}

// Echo of the run, hashed into every artifact.
struct Run {
  json config;
  std::string hash;
  fs::path dir;

  Run(const std::string& command, const ModelOptions* model, json args) {
    config["command"] = command;
    config["args"] = std::move(args);
    if (model != nullptr) {
      config["model"] = json::parse(model_config_to_json(resolve_model(*model)));
      config["m"] = model->m;
      dir = model->out_dir;
    }
    hash = config_hash(config.dump());
  }

  fs::path artifact(const std::string& name) const {
    if (!dir.empty()) fs::create_directories(dir);
    return dir / name;
  }

  void write_json(const std::string& name, const json& j) const {
    std::ofstream f(artifact(name));
    if (!f) throw UsageError("cannot write " + name);
    f << j.dump(2) << "\n";
  }

  json summary(json body) const {
    body["config"] = config;
    body["config_hash"] = hash;
    return body;
  }
};

class Csv {
 public:
  Csv(const Run& run, const std::string& name, const std::vector<std::string>& header)
      : f_(run.artifact(name)) {
    if (!f_) throw UsageError("cannot write " + name);
    f_ << "# config " << run.hash << "\n";
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) f_ << (i ? "," : "") << cells[i];
    f_ << "\n";
  }
  void values(const std::vector<double>& v) {
    std::vector<std::string> cells;
    cells.reserve(v.size());
    for (double x : v) cells.push_back(num(x));
    row(cells);
  }

 private:
  std::ofstream f_;
};

std::vector<std::string> state_columns(int n, const std::string& prefix) {
  std::vector<std::string> cols;
  for (int i = 0; i < n / 2; ++i) {
    cols.push_back(prefix + "y" + std::to_string(i + 1));
    cols.push_back(prefix + "z" + std::to_string(i + 1));
  }
  return cols;
}

json state_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json arc_summary(const ArcResult& arc) {
  json events = json::array();
  for (const auto& e : arc.events) {
    events.push_back({{"kind", to_string(e.kind)}, {"label", e.label}, {"t", e.t},
                      {"x", state_json(e.x)}});
  }
  return {{"law", describe(arc.law)},
          {"termination", to_string(arc.termination)},
          {"t_start", arc.front().t},
          {"t_end", arc.back().t},
          {"initial_state", state_json(arc.front().x)},
          {"final_state", state_json(arc.back().x)},
          {"events", events}};
}

// ---------------------------------------------------------------- normalize

struct NormalizeArgs {
  double t1_ms = 0.0;
  double t2_ms = 0.0;
  double omega_hz = 32.3;
};

json cmd_normalize(const NormalizeArgs& a, int&) {
  const auto p = RelaxationParams::from_ms(a.t1_ms, a.t2_ms, kTwoPi * a.omega_hz);
  p.validate();
  const SpinRates r = p.rates();
  json j{{"Gamma", r.big_gamma}, {"gamma", r.gamma}, {"delta", r.delta()},
         {"t1_ms", a.t1_ms},     {"t2_ms", a.t2_ms}, {"omega_max", p.omega_max}};
  j["horizontal_line"] = attempt([&] {
    const auto h = horizontal_line(r);
    return json{{"z0", h.z0}, {"admissible", h.admissible_in_ball}};
  });
  return j;
}

// ------------------------------------------------------------ geometry probe

struct ProbeArgs {
  ModelOptions model;
  std::vector<double> state;
};

json cmd_probe(const ProbeArgs& a, int&) {
  const ModelConfig cfg = resolve_model(a.model);
  const SpinRates r1 = cfg.spin1.rates();
  json j;
  if (a.state.size() == 2) {
    const SpinState q{a.state[0], a.state[1]};
    const auto loc = singular_locus(q, r1);
    j["locus"] = {{"det", loc.det_value},
                  {"on_vertical", loc.on_vertical},
                  {"on_horizontal", loc.on_horizontal},
                  {"z0", optional_json(loc.z0)}};
    const auto d = planar_determinants(q, r1);
    j["determinants"] = {{"D", d.d}, {"D_prime", d.d_prime}, {"D_second", optional_json(d.d_second)}};
    j["singular_control"] = attempt([&] { return json(singular_control_2d(q, r1)); });
    j["line_speed"] = attempt([&] {
      return json(classify_singular_line(q, r1) == LineSpeed::kFast ? "fast" : "slow");
    });
    j["clock_form_sign"] = attempt([&] { return json(clock_form_sign(q, r1)); });
    j["saturation_point"] = attempt([&] { return json(saturation_point(r1, a.model.m)); });
    j["in_ball"] = q.in_ball();
  } else if (a.state.size() == 4) {
    const SpinRates r2 = require_spin2(cfg).rates();
    const ProductState q{{a.state[0], a.state[1]}, {a.state[2], a.state[3]}};
    const auto d = two_spin_determinants(q, r1, r2);
    j["determinants"] = {{"D", d.d}, {"D_prime", d.d_prime}};
    j["singular_control"] = attempt([&] {
      if (std::abs(d.d) < 1e-12) throw DegenerateError("D vanishes");
      return json(-d.d_prime / d.d);
    });
    j["in_ball"] = q.spin1.in_ball() && q.spin2.in_ball();
  } else {
    throw UsageError("--state needs 2 (y,z) or 4 (y1,z1,y2,z2) values");
  }
  j["state"] = a.state;
  return j;
}

// --------------------------------------------------------------------- flow

struct FlowArgs {
  ModelOptions model;
  std::string law = "bang";
  int sign = 1;
  double lambda = 0.0;
  std::vector<double> state;
  std::vector<double> costate;
  double duration = 0.0;
};

ControlLaw parse_law(const std::string& name, int sign, double lambda, double m) {
  if (name == "bang") return BangLaw{sign, m};
  if (name == "singular") return SingularLaw{};
  if (name == "quadratic") return RegularizedLaw{CostKind::kQuadratic, lambda, m};
  if (name == "power") return RegularizedLaw{CostKind::kPower, lambda, m};
  throw UsageError("unknown law '" + name + "'");
}

json cmd_flow(const FlowArgs& a, int&) {
  const ModelConfig cfg = resolve_model(a.model);
  std::vector<SpinRates> spins{cfg.spin1.rates()};
  if (cfg.spin2) spins.push_back(cfg.spin2->rates());
  const SpinSystem sys(spins);
  const int n = sys.dim();
  Vec x = a.state.empty() ? sys.north_pole() : Eigen::Map<const Vec>(a.state.data(), a.state.size()).eval();
  if (x.size() != n || static_cast<int>(a.costate.size()) != n) {
    throw UsageError("--state and --costate need " + std::to_string(n) + " values");
  }
  const Vec p = Eigen::Map<const Vec>(a.costate.data(), n);
  const ControlLaw law = parse_law(a.law, a.sign, a.lambda, a.model.m);
  std::vector<ArcEvent> events;
  if (a.law == "bang") {
    ArcEvent sw = switch_event(sys);
    sw.terminal = false;
    events.push_back(sw);
  }
  const ArcResult arc = integrate_arc(sys, {x, p, 0.0}, law, a.duration, events);
  const ExtremalField field(sys, law);

  const Run run("flow", &a.model,
                {{"law", a.law}, {"sign", a.sign}, {"lambda", a.lambda}, {"state", state_json(x)},
                 {"costate", a.costate}, {"duration", a.duration}});
  std::vector<std::string> header{"t"};
  for (const auto& c : state_columns(n, "")) header.push_back(c);
  for (const auto& c : state_columns(n, "p_")) header.push_back(c);
  header.push_back("u");
  header.push_back("H");
  Csv csv(run, "flow.csv", header);
  double h0 = 0.0, drift = 0.0;
  for (std::size_t i = 0; i < arc.samples.size(); ++i) {
    const auto& s = arc.samples[i];
    Vec z(2 * n);
    z << s.x, s.p;
    const double h = field.hamiltonian(z);
    if (i == 0) h0 = h;
    drift = std::max(drift, std::abs(h - h0));
    std::vector<double> row{s.t};
    for (int k = 0; k < n; ++k) row.push_back(s.x[k]);
    for (int k = 0; k < n; ++k) row.push_back(s.p[k]);
    row.push_back(s.u);
    row.push_back(h);
    csv.values(row);
  }
  json summary = arc_summary(arc);
  summary["hamiltonian_drift"] = drift;
  run.write_json("flow_events.json", summary["events"]);
  return run.summary(summary);
}

// ------------------------------------------------------------ singular-flow

struct SingularFlowArgs {
  ModelOptions model;
  int rays = 32;
  double duration = 40.0;
};

json cmd_singular_flow(const SingularFlowArgs& a, int&) {
  const ModelConfig cfg = resolve_model(a.model);
  const SpinRates r1 = cfg.spin1.rates();
  const SpinRates r2 = require_spin2(cfg).rates();
  const Run run("singular-flow", &a.model, {{"rays", a.rays}, {"duration", a.duration}});
  Csv csv(run, "singular_flow.csv", {"ray", "angle", "t", "y1", "z1", "y2", "z2", "u", "exploded"});
  json rays = json::array();
  for (int k = 0; k < a.rays; ++k) {
    const double angle = std::numbers::pi * k / a.rays;  // angle and angle + pi coincide
    json entry{{"ray", k}, {"angle", angle}};
    try {
      const SingularRay ray = singular_ray(r1, r2, angle, a.duration);
      double min_q1 = std::numeric_limits<double>::infinity();
      for (const auto& s : ray.arc.samples) {
        min_q1 = std::min(min_q1, std::hypot(s.x[0], s.x[1]));
        csv.values({static_cast<double>(k), angle, s.t, s.x[0], s.x[1], s.x[2], s.x[3], s.u,
                    ray.exploded ? 1.0 : 0.0});
      }
      entry["exploded"] = ray.exploded;
      entry["end_time"] = ray.arc.back().t;
      entry["saturation_time"] = optional_json(ray.saturation_time);
      entry["min_q1"] = min_q1;
      entry["final_state"] = state_json(ray.arc.back().x);
    } catch (const SolverError& e) {
      entry["error"] = e.what();
    }
    rays.push_back(entry);
  }
  json summary{{"rays", rays}, {"start", state_json(singular_ray_start(r1, r2, 0.0).x)}};
  run.write_json("singular_flow.json", summary);
  return run.summary(summary);
}

// ---------------------------------------------------------------- conjugate

struct ConjugateArgs {
  ModelOptions model;
  int rays = 8;
  int ray = -1;
  double duration = 40.0;
};

json cmd_conjugate(const ConjugateArgs& a, int&) {
  const ModelConfig cfg = resolve_model(a.model);
  const SpinRates r1 = cfg.spin1.rates();
  const SpinRates r2 = require_spin2(cfg).rates();
  if (a.ray >= a.rays) throw UsageError("--ray must be below --rays");
  const Run run("conjugate", &a.model,
                {{"rays", a.rays}, {"ray", a.ray}, {"duration", a.duration}});
  const ExtremalField field(SpinSystem::pair(r1, r2), SingularLaw{});
  json out = json::array();
  for (int k = 0; k < a.rays; ++k) {
    if (a.ray >= 0 && k != a.ray) continue;
    const double angle = std::numbers::pi * k / a.rays;
    json entry{{"ray", k}, {"angle", angle}};
    try {
      const ExtremalPoint start = singular_ray_start(r1, r2, angle);
      const ConjugateReport rep =
          first_conjugate_time(field, start.packed(), a.duration, ConjugateMode::kSingular);
      Csv csv(run, "conjugate_ray" + std::to_string(k) + ".csv", {"t", "det", "sigma_min"});
      for (const auto& s : rep.indicator) csv.values({s.t, s.det, s.sigma_min});
      const SingularRay ray = singular_ray(r1, r2, angle, a.duration);
      entry["t_c"] = optional_json(rep.first_conjugate_time);
      entry["saturation_time"] = optional_json(ray.saturation_time);
      entry["end_time"] = rep.end_time;
      entry["stopped_early"] = rep.stopped_early;
      if (ray.saturation_time) {
        entry["precedes_saturation"] =
            rep.first_conjugate_time && *rep.first_conjugate_time < *ray.saturation_time;
      }
    } catch (const Error& e) {
      entry["error"] = e.what();
    }
    out.push_back(entry);
  }
  json summary{{"rays", out}};
  run.write_json("conjugate.json", summary);
  return run.summary(summary);
}

// ---------------------------------------------------------------- synthesis

struct SynthesisArgs {
  ModelOptions model;
  bool compare_ir = false;
};

json policy_json(const SynthesisPolicy& pol, double omega) {
  json arcs = json::array();
  for (const auto& a : pol.arcs) {
    arcs.push_back({{"label", a.label},
                    {"law", describe(a.arc.law)},
                    {"duration", a.duration()},
                    {"start", state_json(a.arc.front().x)},
                    {"end", state_json(a.arc.back().x)}});
  }
  const SpinState f = pol.final_state();
  return {{"total_time", pol.total_time},
          {"physical_time_s", physical_time(pol.total_time, omega)},
          {"arcs", arcs},
          {"final_state", {f.y, f.z}},
          {"y_exit", pol.y_exit},
          {"costate_jump", pol.costate_jump}};
}

void policy_csv(const Run& run, const std::string& name, const SynthesisPolicy& pol) {
  Csv csv(run, name, {"arc", "t", "y", "z", "p_y", "p_z", "u"});
  double offset = 0.0;
  for (const auto& a : pol.arcs) {
    const double t0 = a.arc.front().t;
    for (const auto& s : a.arc.samples) {
      csv.row({a.label, num(offset + s.t - t0), num(s.x[0]), num(s.x[1]), num(s.p[0]),
               num(s.p[1]), num(s.u)});
    }
    offset += a.duration();
  }
}

json cmd_synthesis(const SynthesisArgs& a, int&) {
  const ModelConfig cfg = resolve_model(a.model);
  const SpinRates r = cfg.spin1.rates();
  const Run run("synthesis", &a.model, {{"compare_ir", a.compare_ir}});
  const SynthesisPolicy pol = tmin_synthesis(r, a.model.m);
  json summary{{"policy", policy_json(pol, cfg.omega_max)}};
  policy_csv(run, "synthesis.csv", pol);
  if (a.compare_ir) {
    const SynthesisPolicy ir = inversion_recovery(r, a.model.m);
    summary["inversion_recovery"] = policy_json(ir, cfg.omega_max);
    summary["tmin_faster"] = pol.total_time < ir.total_time;
    summary["time_ratio"] = ir.total_time / pol.total_time;
    policy_csv(run, "synthesis_ir.csv", ir);
  }
  run.write_json("synthesis.json", summary);
  return run.summary(summary);
}

// ----------------------------------------------------------------- contrast

struct ContrastArgs {
  ModelOptions model;
  std::string cost = "quadratic";
  double lambda = 0.9;
  double t_factor = 1.5;
  int samples = 10000;
  int candidates = 8;
  std::uint64_t seed = 1;
  // path
  int nodes = 12;
  double t_lo = 1.01;
  double t_hi = 2.0;
  // sweep
  int rays = 8;
  int ray_samples = 8;
  std::vector<double> t1_range;  // empty: box of the preset
  std::vector<double> t2_range;
  std::vector<double> probe_t1;
  std::vector<double> probe_t2;
  int grid = 0;
  int workers = 0;
};

CostKind parse_cost(const std::string& s) {
  if (s == "quadratic") return CostKind::kQuadratic;
  if (s == "power") return CostKind::kPower;
  throw UsageError("unknown cost '" + s + "'");
}

json contrast_args_json(const ContrastArgs& a) {
  return {{"cost", a.cost},       {"lambda", a.lambda},       {"t_factor", a.t_factor},
          {"samples", a.samples}, {"candidates", a.candidates}, {"seed", a.seed}};
}

SeedOptions seed_options(const ContrastArgs& a) {
  SeedOptions s;
  s.samples = a.samples;
  s.candidates = a.candidates;
  s.seed = a.seed;
  return s;
}

json solution_json(const ShootingProblem& pb, const ShootingSolution& sol, double omega) {
  const Vec& f = sol.final_state;
  return {{"p0", {sol.p0[0], sol.p0[1], sol.p0[2], sol.p0[3]}},
          {"contrast", sol.contrast},
          {"residual", sol.residual_norm},
          {"converged", sol.converged},
          {"lambda", pb.lambda},
          {"transfer_time", pb.transfer_time},
          {"t_min", pb.t_min},
          {"physical_time_s", physical_time(pb.transfer_time, omega)},
          {"final_state", {f[0], f[1], f[2], f[3]}},
          {"q1_norm", std::hypot(f[0], f[1])}};
}

// Random search plus lambda path; exit code 1 when the target is missed.
std::optional<PathEntry> solve_seeded(const ContrastArgs& a, const ShootingProblem& pb,
                                      json& summary, int& code) {
  const SeededPath sp = seed_and_continue(pb, seed_options(a), {});
  summary["candidate"] = sp.candidate;
  summary["lambda_reached"] = sp.path.entries.empty() ? json(nullptr) : json(sp.path.back().parameter);
  summary["lambda_path_log"] = sp.path.log;
  if (!sp.reached) {
    summary["error"] = "lambda continuation did not reach the target";
    code = kExitSolverFailure;
    return std::nullopt;
  }
  return sp.path.back();
}

json cmd_contrast_solve(const ContrastArgs& a, int& code) {
  const ModelConfig cfg = resolve_model(a.model);
  const ShootingProblem pb = make_problem(cfg.spin1.rates(), require_spin2(cfg).rates(),
                                          a.t_factor, a.lambda, parse_cost(a.cost), a.model.m);
  const Run run("contrast solve", &a.model, contrast_args_json(a));
  json summary;
  const auto entry = solve_seeded(a, pb, summary, code);
  if (entry) {
    summary["solution"] = solution_json(pb, entry->solution, cfg.omega_max);
    const ArcResult arc = contrast_trajectory(pb, entry->solution.p0);
    Csv csv(run, "contrast_trajectory.csv",
            {"t", "y1", "z1", "y2", "z2", "p_y1", "p_z1", "p_y2", "p_z2", "u"});
    for (const auto& s : arc.samples) {
      csv.values({s.t, s.x[0], s.x[1], s.x[2], s.x[3], s.p[0], s.p[1], s.p[2], s.p[3], s.u});
    }
  }
  run.write_json("contrast_solve.json", summary);
  return run.summary(summary);
}

json cmd_contrast_path(const ContrastArgs& a, int& code) {
  if (a.nodes < 2 || !(a.t_lo < a.t_hi)) throw UsageError("need --nodes >= 2 and --t-lo < --t-hi");
  const ModelConfig cfg = resolve_model(a.model);
  const ShootingProblem pb = make_problem(cfg.spin1.rates(), require_spin2(cfg).rates(),
                                          a.t_factor, a.lambda, parse_cost(a.cost), a.model.m);
  json args = contrast_args_json(a);
  args["nodes"] = a.nodes;
  args["t_lo"] = a.t_lo;
  args["t_hi"] = a.t_hi;
  const Run run("contrast path", &a.model, args);
  json summary;
  const auto entry = solve_seeded(a, pb, summary, code);
  if (entry) {
    std::vector<double> times;
    for (int i = 0; i < a.nodes; ++i) {
      times.push_back(pb.t_min * (a.t_lo + (a.t_hi - a.t_lo) * i / (a.nodes - 1)));
    }
    ContinuationOptions co;
    co.initial_step = co.max_step = 1.0 / 16.0;
    co.min_step = 1e-4;
    const auto nodes = time_sweep(entry->problem, entry->solution.p0, times, co);
    Csv csv(run, "contrast_path.csv", {"T", "T_over_Tmin", "contrast", "residual", "reached"});
    json rows = json::array();
    std::optional<double> best, best_ratio;
    int reached = 0;
    for (const auto& node : nodes) {
      const double ratio = node.transfer_time / pb.t_min;
      if (node.solution) {
        ++reached;
        csv.values({node.transfer_time, ratio, node.solution->contrast,
                    node.solution->residual_norm, 1.0});
        if (!best || node.solution->contrast > *best) {
          best = node.solution->contrast;
          best_ratio = ratio;
        }
      } else {
        csv.row({num(node.transfer_time), num(ratio), "", "", "0"});
      }
      rows.push_back({{"T_over_Tmin", ratio},
                      {"contrast", node.solution ? json(node.solution->contrast) : json(nullptr)}});
    }
    summary["t_min"] = pb.t_min;
    summary["nodes"] = rows;
    summary["reached"] = reached;
    summary["max_contrast"] = optional_json(best);
    summary["argmax_T_over_Tmin"] = optional_json(best_ratio);
    if (reached == 0) code = kExitSolverFailure;
  }
  run.write_json("contrast_path.json", summary);
  return run.summary(summary);
}

// Default spin-2 boxes for maps around these species.
Polytope default_sweep_box(const ModelOptions& o) {
  if (o.config.empty()) {
    if (o.preset == "fluid") return {80, 4000, 160, 4000};
    if (o.preset == "grey") return {45, 1500, 90, 1500};
    if (o.preset == "deoxy-blood") return {20, 2000, 40, 2000};
  }
  return {20, 4000, 20, 4000};
}

json cmd_contrast_sweep(ContrastArgs a, int& code) {
  const Polytope box = default_sweep_box(a.model);
  if (a.t1_range.empty()) a.t1_range = {box.x_min, box.x_max};
  if (a.t2_range.empty()) a.t2_range = {box.y_min, box.y_max};
  if (a.t1_range.size() != 2 || a.t2_range.size() != 2) {
    throw UsageError("--t1-range and --t2-range need two values");
  }
  if (a.probe_t1.size() != a.probe_t2.size()) {
    throw UsageError("--probe-t1 and --probe-t2 need the same number of values");
  }
  const ModelConfig cfg = resolve_model(a.model);
  const Polytope poly{a.t1_range[0], a.t1_range[1], a.t2_range[0], a.t2_range[1]};
  SweepOptions so;
  so.n_rays = a.rays;
  so.samples = a.ray_samples;
  so.t_factor = a.t_factor;
  so.kind = parse_cost(a.cost);
  so.lambda = a.lambda;
  so.m = a.model.m;
  so.seed = seed_options(a);
  so.workers = a.workers;
  json args = contrast_args_json(a);
  args["rays"] = a.rays;
  args["ray_samples"] = a.ray_samples;
  args["t1_range"] = a.t1_range;
  args["t2_range"] = a.t2_range;
  args["grid"] = a.grid;
  const Run run("contrast sweep", &a.model, args);

  json summary;
  ContrastMap map;
  try {
    map = sweep_contrast_map(cfg.spin1, poly, so);
  } catch (const SolverError& e) {
    summary["error"] = e.what();
    code = kExitSolverFailure;
    run.write_json("contrast_sweep.json", summary);
    return run.summary(summary);
  }
  Csv csv(run, "contrast_sweep.csv", {"T1_ms", "T2_ms", "contrast", "ray", "s"});
  json rays = json::array();
  for (std::size_t k = 0; k < map.rays.size(); ++k) {
    const auto& ray = map.rays[k];
    for (const auto& s : ray.samples) {
      csv.values({s.t1_ms, s.t2_ms, s.contrast, static_cast<double>(k), s.s});
    }
    rays.push_back({{"angle", ray.angle},
                    {"end", {ray.end_t1_ms, ray.end_t2_ms}},
                    {"samples", ray.samples.size()},
                    {"stalled", ray.stalled},
                    {"diagnostic", ray.diagnostic}});
  }
  if (a.grid > 1) {
    Csv grid(run, "contrast_grid.csv", {"T1_ms", "T2_ms", "contrast"});
    for (int i = 0; i < a.grid; ++i) {
      for (int j = 0; j < a.grid; ++j) {
        const double t1 = poly.x_min + (poly.x_max - poly.x_min) * i / (a.grid - 1);
        const double t2 = poly.y_min + (poly.y_max - poly.y_min) * j / (a.grid - 1);
        if (!poly.contains(t1, t2)) continue;
        if (const auto v = map.interpolate(t1, t2)) grid.values({t1, t2, *v});
      }
    }
  }
  json probes = json::array();
  for (std::size_t i = 0; i < a.probe_t1.size(); ++i) {
    probes.push_back({{"t1_ms", a.probe_t1[i]},
                      {"t2_ms", a.probe_t2[i]},
                      {"contrast", optional_json(map.interpolate(a.probe_t1[i], a.probe_t2[i]))}});
  }
  summary["transfer_time"] = map.transfer_time;
  summary["rays"] = rays;
  summary["probes"] = probes;
  run.write_json("contrast_sweep.json", summary);
  return run.summary(summary);
}

// ------------------------------------------------------------------ phantom

struct PhantomArgs {
  std::string solution;
  double q1_level = -1.0;
  double q2_level = -1.0;
  int resolution = 256;
  PhantomGeometry geometry;
  std::string out_dir = ".";
};

json cmd_phantom(const PhantomArgs& a, int&) {
  double q1 = a.q1_level, q2 = a.q2_level;
  if (!a.solution.empty()) {
    std::ifstream f(a.solution);
    if (!f) throw UsageError("cannot read " + a.solution);
    const json j = json::parse(f);
    const json& sol = j.contains("solution") ? j.at("solution") : j;
    const auto fs = sol.at("final_state").get<std::vector<double>>();
    if (fs.size() < 4) throw UsageError("final_state needs four values");
    q1 = std::hypot(fs[0], fs[1]);
    q2 = std::hypot(fs[2], fs[3]);
  } else if (q1 < 0.0 || q2 < 0.0) {
    throw UsageError("give --solution or both --q1-level and --q2-level");
  }
  Run run("phantom", nullptr,
                {{"q1_level", q1}, {"q2_level", q2}, {"resolution", a.resolution},
                 {"disk_radius", a.geometry.disk_radius}, {"ring_outer", a.geometry.ring_outer},
                 {"separator", a.geometry.separator}});
  run.dir = a.out_dir;
  write_pgm(render_phantom(q1, q2, a.geometry, a.resolution), run.artifact("phantom.pgm"));
  write_pgm(render_reference(a.geometry, a.resolution), run.artifact("phantom_reference.pgm"));
  return run.summary({{"disk_gray", gray_level(q1)},
                          {"ring_gray", gray_level(q2)},
                          {"disk_level", q1},
                          {"ring_level", q2}});
}

}  // namespace

std::string config_hash(std::string_view canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"NMR contrast optimal control toolkit", "nmrc"};
  app.require_subcommand(1);
  std::function<json(int&)> action;

  NormalizeArgs norm;
  auto* c_norm = app.add_subcommand("normalize", "normalized rates from T1, T2");
  c_norm->add_option("--t1-ms", norm.t1_ms, "T1 in ms")->required()->check(CLI::PositiveNumber);
  c_norm->add_option("--t2-ms", norm.t2_ms, "T2 in ms")->required()->check(CLI::PositiveNumber);
  c_norm->add_option("--omega-hz", norm.omega_hz, "omega_max / 2 pi, Hz")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_norm->callback([&] { action = [&](int& c) { return cmd_normalize(norm, c); }; });

  ProbeArgs probe;
  auto* c_geo = app.add_subcommand("geometry", "singular loci and determinants");
  c_geo->require_subcommand(1);
  auto* c_probe = c_geo->add_subcommand("probe", "evaluate loci at a state");
  add_model_options(c_probe, probe.model, "fluid");
  c_probe->add_option("--state", probe.state, "y,z or y1,z1,y2,z2")->required()->delimiter(',');
  c_probe->callback([&] { action = [&](int& c) { return cmd_probe(probe, c); }; });

  FlowArgs flow;
  auto* c_flow = app.add_subcommand("flow", "integrate one extremal arc");
  add_model_options(c_flow, flow.model, "fluid");
  c_flow->add_option("--law", flow.law, "bang | singular | quadratic | power")
      ->check(CLI::IsMember({"bang", "singular", "quadratic", "power"}))
      ->capture_default_str();
  c_flow->add_option("--sign", flow.sign, "bang sign")->check(CLI::IsMember({-1, 1}));
  c_flow->add_option("--lambda", flow.lambda, "regularization parameter")->check(CLI::Range(0.0, 0.999999));
  c_flow->add_option("--state", flow.state, "initial state (default north poles)")->delimiter(',');
  c_flow->add_option("--costate", flow.costate, "initial costate")->required()->delimiter(',');
  c_flow->add_option("--duration", flow.duration, "normalized duration")->required();
  c_flow->callback([&] { action = [&](int& c) { return cmd_flow(flow, c); }; });

  SingularFlowArgs sflow;
  auto* c_sflow = app.add_subcommand("singular-flow", "two-spin singular flow from the post-bang point");
  add_model_options(c_sflow, sflow.model, "fluid-water");
  c_sflow->add_option("--rays", sflow.rays, "number of costate angles")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_sflow->add_option("--duration", sflow.duration, "normalized duration")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_sflow->callback([&] { action = [&](int& c) { return cmd_singular_flow(sflow, c); }; });

  ConjugateArgs conj;
  auto* c_conj = app.add_subcommand("conjugate", "first conjugate times along singular rays");
  add_model_options(c_conj, conj.model, "fluid-water");
  c_conj->add_option("--rays", conj.rays, "number of costate angles")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_conj->add_option("--ray", conj.ray, "single ray index (default all)");
  c_conj->add_option("--duration", conj.duration, "normalized duration")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_conj->callback([&] { action = [&](int& c) { return cmd_conjugate(conj, c); }; });

  SynthesisArgs syn;
  auto* c_syn = app.add_subcommand("synthesis", "time-minimal saturation of one spin");
  add_model_options(c_syn, syn.model, "fluid");
  c_syn->add_flag("--compare-ir", syn.compare_ir, "add the inversion-recovery baseline");
  c_syn->callback([&] { action = [&](int& c) { return cmd_synthesis(syn, c); }; });

  ContrastArgs con_solve, con_path, con_sweep;
  auto* c_con = app.add_subcommand("contrast", "contrast problem by indirect shooting");
  c_con->require_subcommand(1);
  // One argument block per subcommand so that per-command defaults stay apart.
  auto add_contrast = [&](CLI::App* sub, ContrastArgs& con, const std::string& cost) {
    add_model_options(sub, con.model, "fluid-water");
    con.cost = cost;
    sub->add_option("--cost", con.cost, "quadratic | power")
        ->check(CLI::IsMember({"quadratic", "power"}))
        ->capture_default_str();
    sub->add_option("--lambda", con.lambda, "target regularization parameter")
        ->check(CLI::Range(0.0, 0.999999))
        ->capture_default_str();
    sub->add_option("--t-factor", con.t_factor, "T / T_min")->capture_default_str();
    sub->add_option("--samples", con.samples, "random costates at lambda = 0")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--candidates", con.candidates, "seeds tried on the lambda path")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--seed", con.seed, "random seed")->capture_default_str();
  };
  auto* c_solve = c_con->add_subcommand("solve", "single instance");
  add_contrast(c_solve, con_solve, "quadratic");
  c_solve->callback([&] { action = [&](int& c) { return cmd_contrast_solve(con_solve, c); }; });
  auto* c_path = c_con->add_subcommand("path", "lambda path then sweep in T");
  add_contrast(c_path, con_path, "quadratic");
  c_path->add_option("--nodes", con_path.nodes, "T nodes")->capture_default_str();
  c_path->add_option("--t-lo", con_path.t_lo, "lowest T / T_min")->capture_default_str();
  c_path->add_option("--t-hi", con_path.t_hi, "highest T / T_min")->capture_default_str();
  c_path->callback([&] { action = [&](int& c) { return cmd_contrast_path(con_path, c); }; });
  auto* c_sweep = c_con->add_subcommand("sweep", "contrast map over spin-2 relaxation times");
  add_contrast(c_sweep, con_sweep, "power");
  c_sweep->add_option("--rays", con_sweep.rays, "rays from spin 1")->capture_default_str();
  c_sweep->add_option("--ray-samples", con_sweep.ray_samples, "samples per ray")->capture_default_str();
  c_sweep->add_option("--t1-range", con_sweep.t1_range, "T1 bounds in ms (default: preset box)")->delimiter(',');
  c_sweep->add_option("--t2-range", con_sweep.t2_range, "T2 bounds in ms")->delimiter(',');
  c_sweep->add_option("--probe-t1", con_sweep.probe_t1, "probe T1 values (ms)")->delimiter(',');
  c_sweep->add_option("--probe-t2", con_sweep.probe_t2, "probe T2 values (ms)")->delimiter(',');
  c_sweep->add_option("--grid", con_sweep.grid, "interpolated grid size per axis");
  c_sweep->add_option("--workers", con_sweep.workers, "threads (default NMRC_WORKERS or 1)");
  c_sweep->callback([&] { action = [&](int& c) { return cmd_contrast_sweep(con_sweep, c); }; });

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "render the two-region phantom as PGM");
  c_ph->add_option("--solution", ph.solution, "JSON written by contrast solve")
      ->check(CLI::ExistingFile);
  c_ph->add_option("--q1-level", ph.q1_level, "inner disk level in [0, 1]");
  c_ph->add_option("--q2-level", ph.q2_level, "ring level in [0, 1]");
  c_ph->add_option("--resolution", ph.resolution, "image side in pixels")->capture_default_str();
  c_ph->add_option("--disk-radius", ph.geometry.disk_radius, "fraction of half-width");
  c_ph->add_option("--ring-outer", ph.geometry.ring_outer, "fraction of half-width");
  c_ph->add_option("--out-dir", ph.out_dir, "directory for artifacts")->capture_default_str();
  c_ph->callback([&] { action = [&](int& c) { return cmd_phantom(ph, c); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  int code = kExitOk;
  try {
    const json summary = action(code);
    out << summary.dump(2) << "\n";
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "invalid JSON: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "solver failure: " << e.what() << "\n";
    return kExitSolverFailure;
  }
  return code;
}

}  // namespace nmrc::cli
