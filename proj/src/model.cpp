#include "nmrc/model.hpp"

#include "json.hpp"
#include "nmrc/errors.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nmrc {

namespace {

constexpr std::array<SpeciesPreset, 6> kSpecies{{
    {"fluid", 2000.0, 200.0},
    {"water", 2500.0, 2500.0},
    {"grey", 920.0, 100.0},
    {"white", 780.0, 90.0},
    {"deoxy-blood", 1350.0, 50.0},
    {"oxy-blood", 1300.0, 200.0},
}};

constexpr std::array<PairPreset, 3> kPairs{{
    {"fluid-water", "fluid", "water"},
    {"grey-white", "grey", "white"},
    {"deoxy-oxy", "deoxy-blood", "oxy-blood"},
}};

// Per-spin closed forms, indices (y, z).
Eigen::Vector2d field2(Field which, double y, double z, const SpinRates& r) {
  switch (which) {
    case Field::kDrift:
      return {-r.big_gamma * y, r.gamma * (1.0 - z)};
    case Field::kControl:
      return {-z, y};
  }
  return Eigen::Vector2d::Zero();
}

Eigen::Vector2d bracket2(Bracket which, double y, double z, const SpinRates& r) {
  const double g = r.gamma;
  const double G = r.big_gamma;
  const double d = r.delta();
  switch (which) {
    case Bracket::kAd1:
      return {-g + d * z, d * y};
    case Bracket::kAd100:
      return {g * (g - 2.0 * G) - d * d * z, d * d * y};
    case Bracket::kAd101:
      return {2.0 * d * y, g - 2.0 * d * z};
  }
  return Eigen::Vector2d::Zero();
}

Eigen::Matrix2d field_jac2(Field which, const SpinRates& r) {
  Eigen::Matrix2d m;
  if (which == Field::kDrift) {
    m << -r.big_gamma, 0.0, 0.0, -r.gamma;
  } else {
    m << 0.0, -1.0, 1.0, 0.0;
  }
  return m;
}

Eigen::Matrix2d bracket_jac2(Bracket which, const SpinRates& r) {
  const double d = r.delta();
  Eigen::Matrix2d m;
  switch (which) {
    case Bracket::kAd1:
      m << 0.0, d, d, 0.0;
      break;
    case Bracket::kAd100:
      m << 0.0, -d * d, d * d, 0.0;
      break;
    case Bracket::kAd101:
      m << 2.0 * d, 0.0, 0.0, -2.0 * d;
      break;
  }
  return m;
}

RelaxationParams spin_from_json(const nlohmann::json& j, double omega_max) {
  if (j.is_string()) return species_preset(j.get<std::string>(), omega_max);
  if (!j.is_object() || !j.contains("t1_ms") || !j.contains("t2_ms")) {
    throw DomainError("spin entry needs a preset name or {t1_ms, t2_ms}");
  }
  auto p = RelaxationParams::from_ms(j.at("t1_ms").get<double>(),
                                     j.at("t2_ms").get<double>(), omega_max);
  p.validate();
  return p;
}

}  // namespace

RelaxationParams RelaxationParams::from_ms(double t1_ms, double t2_ms, double omega_max) {
  return RelaxationParams{t1_ms * 1e-3, t2_ms * 1e-3, omega_max};
}

void RelaxationParams::validate() const {
  if (!(t1 > 0.0) || !(t2 > 0.0) || !(omega_max > 0.0)) {
    throw DomainError("relaxation times and omega_max must be positive");
  }
  if (t2 > 2.0 * t1) {
    throw DomainError("relaxation times violate T2 <= 2 T1");
  }
}

double RelaxationParams::gamma() const { return kTwoPi / (omega_max * t1); }
double RelaxationParams::big_gamma() const { return kTwoPi / (omega_max * t2); }

SpinRates RelaxationParams::rates() const {
  validate();
  return SpinRates{big_gamma(), gamma()};
}

SpinRates normalize_params(double t1, double t2, double omega_max) {
  return RelaxationParams{t1, t2, omega_max}.rates();
}

double physical_time(double normalized_time, double omega_max) {
  return normalized_time * kTwoPi / omega_max;
}

double SpinState::radius() const { return std::hypot(y, z); }

bool SpinState::in_ball(double tol) const { return y * y + z * z <= 1.0 + tol; }

Eigen::Vector4d ProductState::flatten() const {
  return {spin1.y, spin1.z, spin2.y, spin2.z};
}

ProductState ProductState::from_flat(const Eigen::Ref<const Eigen::Vector4d>& q) {
  return ProductState{{q[0], q[1]}, {q[2], q[3]}};
}

Eigen::Vector2d eval_field(Field which, const SpinState& q, const SpinRates& r) {
  return field2(which, q.y, q.z, r);
}

Eigen::Vector4d eval_field(Field which, const ProductState& q, const SpinRates& r1,
                           const SpinRates& r2) {
  Eigen::Vector4d out;
  out << eval_field(which, q.spin1, r1), eval_field(which, q.spin2, r2);
  return out;
}

Eigen::Vector2d eval_bracket(Bracket which, const SpinState& q, const SpinRates& r) {
  return bracket2(which, q.y, q.z, r);
}

Eigen::Vector4d eval_bracket(Bracket which, const ProductState& q, const SpinRates& r1,
                             const SpinRates& r2) {
  Eigen::Vector4d out;
  out << eval_bracket(which, q.spin1, r1), eval_bracket(which, q.spin2, r2);
  return out;
}

SpinSystem::SpinSystem(std::vector<SpinRates> spins) : spins_(std::move(spins)) {
  if (spins_.empty()) throw DomainError("spin system needs at least one spin");
  const int n = dim();
  jac_f0_ = Mat::Zero(n, n);
  jac_f1_ = Mat::Zero(n, n);
  jac_ad1_ = Mat::Zero(n, n);
  jac_ad100_ = Mat::Zero(n, n);
  jac_ad101_ = Mat::Zero(n, n);
  for (int i = 0; i < num_spins(); ++i) {
    const auto& r = spins_[static_cast<std::size_t>(i)];
    jac_f0_.block<2, 2>(2 * i, 2 * i) = field_jac2(Field::kDrift, r);
    jac_f1_.block<2, 2>(2 * i, 2 * i) = field_jac2(Field::kControl, r);
    jac_ad1_.block<2, 2>(2 * i, 2 * i) = bracket_jac2(Bracket::kAd1, r);
    jac_ad100_.block<2, 2>(2 * i, 2 * i) = bracket_jac2(Bracket::kAd100, r);
    jac_ad101_.block<2, 2>(2 * i, 2 * i) = bracket_jac2(Bracket::kAd101, r);
  }
}

Vec SpinSystem::field(Field which, const Vec& x) const {
  Vec out(dim());
  for (int i = 0; i < num_spins(); ++i) {
    out.segment<2>(2 * i) =
        field2(which, x[2 * i], x[2 * i + 1], spins_[static_cast<std::size_t>(i)]);
  }
  return out;
}

Vec SpinSystem::bracket(Bracket which, const Vec& x) const {
  Vec out(dim());
  for (int i = 0; i < num_spins(); ++i) {
    out.segment<2>(2 * i) =
        bracket2(which, x[2 * i], x[2 * i + 1], spins_[static_cast<std::size_t>(i)]);
  }
  return out;
}

const Mat& SpinSystem::field_jacobian(Field which) const {
  return which == Field::kDrift ? jac_f0_ : jac_f1_;
}

const Mat& SpinSystem::bracket_jacobian(Bracket which) const {
  switch (which) {
    case Bracket::kAd1:
      return jac_ad1_;
    case Bracket::kAd100:
      return jac_ad100_;
    case Bracket::kAd101:
      return jac_ad101_;
  }
  return jac_ad1_;
}

Vec SpinSystem::north_pole() const {
  Vec x = Vec::Zero(dim());
  for (int i = 0; i < num_spins(); ++i) x[2 * i + 1] = 1.0;
  return x;
}

std::span<const SpeciesPreset> species_presets() { return kSpecies; }
std::span<const PairPreset> pair_presets() { return kPairs; }

RelaxationParams species_preset(std::string_view name, double omega_max) {
  for (const auto& s : kSpecies) {
    if (s.name == name) return RelaxationParams::from_ms(s.t1_ms, s.t2_ms, omega_max);
  }
  throw DomainError("unknown species preset '" + std::string(name) + "'");
}

ModelConfig config_from_preset(std::string_view name, double omega_max) {
  ModelConfig cfg;
  cfg.omega_max = omega_max;
  for (const auto& p : kPairs) {
    if (p.name == name) {
      cfg.spin1 = species_preset(p.spin1, omega_max);
      cfg.spin2 = species_preset(p.spin2, omega_max);
      return cfg;
    }
  }
  if (const auto slash = name.find('/'); slash != std::string_view::npos) {
    cfg.spin1 = species_preset(name.substr(0, slash), omega_max);
    cfg.spin2 = species_preset(name.substr(slash + 1), omega_max);
    return cfg;
  }
  cfg.spin1 = species_preset(name, omega_max);
  return cfg;
}

ModelConfig parse_model_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError(std::string("invalid model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  if (j.contains("omega_max_hz")) cfg.omega_max = kTwoPi * j.at("omega_max_hz").get<double>();
  if (j.contains("preset")) {
    cfg = config_from_preset(j.at("preset").get<std::string>(), cfg.omega_max);
  }
  if (j.contains("spin1")) cfg.spin1 = spin_from_json(j.at("spin1"), cfg.omega_max);
  if (j.contains("spin2")) cfg.spin2 = spin_from_json(j.at("spin2"), cfg.omega_max);
  if (cfg.spin1.t1 <= 0.0) throw DomainError("model config is missing spin1");
  cfg.spin1.validate();
  if (cfg.spin2) cfg.spin2->validate();
  return cfg;
}

ModelConfig read_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["omega_max_hz"] = cfg.omega_max / kTwoPi;
  j["spin1"] = {{"t1_ms", cfg.spin1.t1 * 1e3}, {"t2_ms", cfg.spin1.t2 * 1e3}};
  if (cfg.spin2) j["spin2"] = {{"t1_ms", cfg.spin2->t1 * 1e3}, {"t2_ms", cfg.spin2->t2 * 1e3}};
  return j.dump();
}

}  // namespace nmrc
