#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "starsim/common.hpp"

namespace starsim {

enum class Region { reflection, transmission };
enum class SensingPattern { interleaved, block };
enum class Implementation { se, mse, pse };

inline const char* to_string(Region r) {
  return r == Region::reflection ? "reflection" : "transmission";
}
inline const char* to_string(SensingPattern p) {
  return p == SensingPattern::interleaved ? "interleaved" : "block";
}
inline const char* to_string(Implementation i) {
  switch (i) {
    case Implementation::se: return "se";
    case Implementation::mse: return "mse";
    default: return "pse";
  }
}

struct UserSpec {
  double azimuth_deg = 0.0;
  double elevation_deg = 30.0;
  double distance_m = 20.0;
  Region region = Region::reflection;
  double tx_power_dbm = 23.0;

  double tx_power_w() const { return dbm_to_watts(tx_power_dbm); }
  bool operator==(const UserSpec&) const = default;
};

struct TargetSpec {
  double azimuth_deg = 0.0;
  double elevation_deg = 30.0;
  double distance_m = 10.0;
  cdouble rcs_gain{12.0, 0.0};
  Region region = Region::reflection;

  bool operator==(const TargetSpec&) const = default;
};

struct PathlossSpec {
  double ref_gain_db = -30.0;  // gain at 1 m
  double exp_bs_stars = 2.2;
  double exp_user_stars = 2.4;
  double exp_stars_target = 2.0;

  bool operator==(const PathlossSpec&) const = default;
};

/// Where the surface sees the BS: direction and range used for the
/// BS<->STARS hop. Not part of the placement the case study reports, so it
/// carries documented defaults.
struct BsPlacement {
  double azimuth_deg = 90.0;
  double elevation_deg = 45.0;
  double distance_m = 300.0;

  bool operator==(const BsPlacement&) const = default;
};

/// Full experiment description. Angles are kept in degrees and powers in
/// dBm exactly as they appear in scenario files; accessors convert to the
/// radians/watts used by the numerics, so a parse/serialize cycle is exact.
struct ScenarioConfig {
  int bs_antennas = 20;  // N_t, ULA
  int stars_rows = 4;
  int stars_cols = 5;
  int sensing_element_count = 4;  // M_s
  SensingPattern sensing_pattern = SensingPattern::interleaved;
  Implementation implementation = Implementation::se;
  std::vector<UserSpec> users;
  std::vector<TargetSpec> targets;
  double bs_power_budget_dbm = 30.0;       // P
  double noise_power_sensing_dbm = -80.0;  // sigma^2 at sensing elements
  double noise_power_bs_dbm = -94.0;       // sigma_b^2
  double qos_rate = 0.5;                   // R_min, bits/s/Hz
  PathlossSpec pathloss;
  double rician_kappa = 10.0;
  int snapshots = 64;  // L
  bool user_echo_enabled = false;
  Region phase = Region::reflection;  // active phase for single-phase runs
  BsPlacement bs_placement;
  double pse_rho = 0.5;                // shared power-split ratio (PSE)
  bool mse_free_sensing_count = false; // MSE search may vary M_s in [1, M-1]

  int total_stars_elements() const { return stars_rows * stars_cols; }
  int passive_element_count() const { return total_stars_elements() - sensing_element_count; }
  double bs_power_w() const { return dbm_to_watts(bs_power_budget_dbm); }
  double noise_sensing_w() const { return dbm_to_watts(noise_power_sensing_dbm); }
  double noise_bs_w() const { return dbm_to_watts(noise_power_bs_dbm); }

  bool operator==(const ScenarioConfig&) const = default;

  void validate() const;
};

/// Element coordinates in half-wavelength units. ULA elements sit on the
/// y axis, UPA elements on the integer grid (x = column, y = row).
struct ArrayGeometry {
  enum class Kind { ula, upa };
  Kind kind = Kind::upa;
  std::vector<std::array<double, 2>> positions;

  static ArrayGeometry ula(int n) {
    ArrayGeometry g;
    g.kind = Kind::ula;
    g.positions.reserve(static_cast<std::size_t>(n));
    for (int m = 0; m < n; ++m) g.positions.push_back({0.0, static_cast<double>(m)});
    return g;
  }

  static ArrayGeometry upa(int rows, int cols) {
    ArrayGeometry g;
    g.kind = Kind::upa;
    g.positions.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        g.positions.push_back({static_cast<double>(c), static_cast<double>(r)});
    return g;
  }

  /// Subset of elements, preserving order.
  ArrayGeometry subset(const std::vector<int>& indices) const {
    ArrayGeometry g;
    g.kind = kind;
    g.positions.reserve(indices.size());
    for (int i : indices) g.positions.push_back(positions.at(static_cast<std::size_t>(i)));
    return g;
  }

  int size() const { return static_cast<int>(positions.size()); }
};

/// Far-field steering vector: entry m = exp(j*pi*(x_m*u + y_m*v)) with
/// u = sin(el)cos(az), v = sin(el)sin(az).
inline Eigen::VectorXcd steering_vector(const ArrayGeometry& geom, double azimuth_rad,
                                        double elevation_rad) {
  if (geom.positions.empty()) throw ConfigError("steering_vector: geometry has no elements");
  if (!(elevation_rad > 0.0) || elevation_rad > kPi / 2.0 + 1e-12)
    throw DomainError("steering_vector: elevation must lie in (0, pi/2]");
  const double u = std::sin(elevation_rad) * std::cos(azimuth_rad);
  const double v = std::sin(elevation_rad) * std::sin(azimuth_rad);
  Eigen::VectorXcd a(geom.size());
  for (int m = 0; m < geom.size(); ++m) {
    const auto& p = geom.positions[static_cast<std::size_t>(m)];
    a(m) = std::polar(1.0, kPi * (p[0] * u + p[1] * v));
  }
  return a;
}

/// Analytic angle derivatives of the steering vector, (d/d az, d/d el).
inline std::pair<Eigen::VectorXcd, Eigen::VectorXcd> steering_derivatives(
    const ArrayGeometry& geom, double azimuth_rad, double elevation_rad) {
  Eigen::VectorXcd a = steering_vector(geom, azimuth_rad, elevation_rad);
  const double se = std::sin(elevation_rad), ce = std::cos(elevation_rad);
  const double ca = std::cos(azimuth_rad), sa = std::sin(azimuth_rad);
  // u = se*ca, v = se*sa
  const double du_daz = -se * sa, dv_daz = se * ca;
  const double du_del = ce * ca, dv_del = ce * sa;
  Eigen::VectorXcd daz(geom.size()), del(geom.size());
  for (int m = 0; m < geom.size(); ++m) {
    const auto& p = geom.positions[static_cast<std::size_t>(m)];
    daz(m) = kJ * kPi * (p[0] * du_daz + p[1] * dv_daz) * a(m);
    del(m) = kJ * kPi * (p[0] * du_del + p[1] * dv_del) * a(m);
  }
  return {std::move(daz), std::move(del)};
}

inline ArrayGeometry stars_geometry(const ScenarioConfig& cfg) {
  return ArrayGeometry::upa(cfg.stars_rows, cfg.stars_cols);
}

inline ArrayGeometry bs_geometry(const ScenarioConfig& cfg) {
  return ArrayGeometry::ula(cfg.bs_antennas);
}

inline void ScenarioConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (bs_antennas < 1) fail("bs_antennas: must be >= 1");
  if (stars_rows < 1) fail("stars_rows: must be >= 1");
  if (stars_cols < 1) fail("stars_cols: must be >= 1");
  const int m = total_stars_elements();
  if (sensing_element_count < 0 || sensing_element_count > m) {
    std::ostringstream os;
    os << "sensing_element_count: must lie in [0, " << m << "] (got " << sensing_element_count
       << ")";
    fail(os.str());
  }
  if (snapshots < 1) fail("snapshots: must be >= 1");
  if (qos_rate < 0.0) fail("qos_rate: must be >= 0");
  if (rician_kappa < 0.0) fail("rician_kappa: must be >= 0");
  if (pse_rho < 0.0 || pse_rho > 1.0) fail("pse_rho: must lie in [0, 1]");
  if (bs_placement.distance_m <= 0.0) fail("bs_placement.distance: must be > 0");
  auto check_angles = [&fail](const std::string& what, double az, double el, double dist) {
    if (az < 0.0 || az >= 360.0) fail(what + ".azimuth: must lie in [0, 360)");
    if (!(el > 0.0) || el > 90.0) fail(what + ".elevation: must lie in (0, 90]");
    if (dist <= 0.0) fail(what + ".distance: must be > 0");
  };
  for (std::size_t i = 0; i < users.size(); ++i)
    check_angles("users[" + std::to_string(i) + "]", users[i].azimuth_deg,
                 users[i].elevation_deg, users[i].distance_m);
  for (std::size_t i = 0; i < targets.size(); ++i)
    check_angles("targets[" + std::to_string(i) + "]", targets[i].azimuth_deg,
                 targets[i].elevation_deg, targets[i].distance_m);
  check_angles("bs_placement", bs_placement.azimuth_deg, bs_placement.elevation_deg,
               bs_placement.distance_m);
}

/// The case-study scenario: 20-antenna BS, 20-element STARS (4x5), two
/// targets at 10 m in the directions (342, 30) and (18, 30), four users on
/// the 20 m circle, QoS 0.5 bits/s/Hz. User positions are a fixed choice
/// (two per region) so runs are reproducible.
inline ScenarioConfig default_paper_scenario() {
  ScenarioConfig cfg;
  // Region assignment keeps the two phases statistically alike: the
  // reflection set {30, 150} mirrors the transmission set {210, 330}
  // about the targets' symmetry axis.
  cfg.users = {
      {30.0, 30.0, 20.0, Region::reflection, 23.0},
      {150.0, 30.0, 20.0, Region::reflection, 23.0},
      {210.0, 30.0, 20.0, Region::transmission, 23.0},
      {330.0, 30.0, 20.0, Region::transmission, 23.0},
  };
  cfg.targets = {
      {342.0, 30.0, 10.0, cdouble{12.0, 0.0}, Region::reflection},
      {18.0, 30.0, 10.0, cdouble{12.0, 0.0}, Region::transmission},
  };
  return cfg;
}

// ---------------------------------------------------------------------------
// Scenario file I/O. Files are JSON with angles in degrees and powers in
// dBm; complex values are [re, im] pairs. Every field is optional and
// defaults to the case-study value.

namespace detail {

inline Region region_from_string(const std::string& s, const std::string& field) {
  if (s == "reflection") return Region::reflection;
  if (s == "transmission") return Region::transmission;
  throw ConfigError(field + ": unknown region '" + s + "' (expected reflection|transmission)");
}

inline SensingPattern pattern_from_string(const std::string& s, const std::string& field) {
  if (s == "interleaved") return SensingPattern::interleaved;
  if (s == "block") return SensingPattern::block;
  throw ConfigError(field + ": unknown pattern '" + s + "' (expected interleaved|block)");
}

inline Implementation implementation_from_string(const std::string& s, const std::string& field) {
  if (s == "se" || s == "SE") return Implementation::se;
  if (s == "mse" || s == "MSE") return Implementation::mse;
  if (s == "pse" || s == "PSE") return Implementation::pse;
  throw ConfigError(field + ": unknown implementation '" + s + "' (expected se|mse|pse)");
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(key + ": has the wrong type");
  }
}

inline cdouble complex_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(field + ": complex values are [re, im] pairs");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("scenario: top level must be a JSON object");

  ScenarioConfig d = default_paper_scenario();
  ScenarioConfig cfg;
  using detail::get_or;
  cfg.bs_antennas = get_or(j, "bs_antennas", d.bs_antennas);
  cfg.stars_rows = get_or(j, "stars_rows", d.stars_rows);
  cfg.stars_cols = get_or(j, "stars_cols", d.stars_cols);
  cfg.sensing_element_count = get_or(j, "sensing_element_count", d.sensing_element_count);
  cfg.sensing_pattern = j.contains("sensing_pattern")
                            ? detail::pattern_from_string(j.at("sensing_pattern").get<std::string>(),
                                                          "sensing_pattern")
                            : d.sensing_pattern;
  cfg.implementation = j.contains("implementation")
                           ? detail::implementation_from_string(
                                 j.at("implementation").get<std::string>(), "implementation")
                           : d.implementation;
  cfg.bs_power_budget_dbm = get_or(j, "bs_power_budget", d.bs_power_budget_dbm);
  cfg.noise_power_sensing_dbm = get_or(j, "noise_power_sensing", d.noise_power_sensing_dbm);
  cfg.noise_power_bs_dbm = get_or(j, "noise_power_bs", d.noise_power_bs_dbm);
  cfg.qos_rate = get_or(j, "qos_rate", d.qos_rate);
  cfg.rician_kappa = get_or(j, "rician_kappa", d.rician_kappa);
  cfg.snapshots = get_or(j, "snapshots", d.snapshots);
  cfg.user_echo_enabled = get_or(j, "user_echo_enabled", d.user_echo_enabled);
  cfg.pse_rho = get_or(j, "pse_rho", d.pse_rho);
  cfg.mse_free_sensing_count = get_or(j, "mse_free_sensing_count", d.mse_free_sensing_count);
  cfg.phase = j.contains("phase")
                  ? detail::region_from_string(j.at("phase").get<std::string>(), "phase")
                  : d.phase;

  if (j.contains("pathloss")) {
    const auto& p = j.at("pathloss");
    cfg.pathloss.ref_gain_db = get_or(p, "ref_gain_db", d.pathloss.ref_gain_db);
    cfg.pathloss.exp_bs_stars = get_or(p, "exp_bs_stars", d.pathloss.exp_bs_stars);
    cfg.pathloss.exp_user_stars = get_or(p, "exp_user_stars", d.pathloss.exp_user_stars);
    cfg.pathloss.exp_stars_target = get_or(p, "exp_stars_target", d.pathloss.exp_stars_target);
  }
  if (j.contains("bs_placement")) {
    const auto& b = j.at("bs_placement");
    cfg.bs_placement.azimuth_deg = get_or(b, "azimuth", d.bs_placement.azimuth_deg);
    cfg.bs_placement.elevation_deg = get_or(b, "elevation", d.bs_placement.elevation_deg);
    cfg.bs_placement.distance_m = get_or(b, "distance", d.bs_placement.distance_m);
  }

  if (j.contains("users")) {
    cfg.users.clear();
    const auto& arr = j.at("users");
    if (!arr.is_array()) throw ConfigError("users: must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& u = arr[i];
      const std::string field = "users[" + std::to_string(i) + "]";
      for (const char* req : {"azimuth", "elevation", "distance", "region"})
        if (!u.contains(req)) throw ConfigError(field + "." + req + ": missing required field");
      UserSpec spec;
      spec.azimuth_deg = u.at("azimuth").get<double>();
      spec.elevation_deg = u.at("elevation").get<double>();
      spec.distance_m = u.at("distance").get<double>();
      spec.region = detail::region_from_string(u.at("region").get<std::string>(), field + ".region");
      spec.tx_power_dbm = detail::get_or(u, "tx_power", 23.0);
      cfg.users.push_back(spec);
    }
  } else {
    cfg.users = d.users;
  }

  if (j.contains("targets")) {
    cfg.targets.clear();
    const auto& arr = j.at("targets");
    if (!arr.is_array()) throw ConfigError("targets: must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& t = arr[i];
      const std::string field = "targets[" + std::to_string(i) + "]";
      for (const char* req : {"azimuth", "elevation", "distance", "region"})
        if (!t.contains(req)) throw ConfigError(field + "." + req + ": missing required field");
      TargetSpec spec;
      spec.azimuth_deg = t.at("azimuth").get<double>();
      spec.elevation_deg = t.at("elevation").get<double>();
      spec.distance_m = t.at("distance").get<double>();
      spec.region = detail::region_from_string(t.at("region").get<std::string>(), field + ".region");
      spec.rcs_gain = t.contains("rcs_gain") ? detail::complex_from_json(t.at("rcs_gain"),
                                                                         field + ".rcs_gain")
                                             : cdouble{12.0, 0.0};
      cfg.targets.push_back(spec);
    }
  } else {
    cfg.targets = d.targets;
  }

  cfg.validate();
  return cfg;
}

inline std::string serialize_scenario(const ScenarioConfig& cfg) {
  nlohmann::json j;
  j["bs_antennas"] = cfg.bs_antennas;
  j["stars_rows"] = cfg.stars_rows;
  j["stars_cols"] = cfg.stars_cols;
  j["sensing_element_count"] = cfg.sensing_element_count;
  j["sensing_pattern"] = to_string(cfg.sensing_pattern);
  j["implementation"] = to_string(cfg.implementation);
  j["bs_power_budget"] = cfg.bs_power_budget_dbm;
  j["noise_power_sensing"] = cfg.noise_power_sensing_dbm;
  j["noise_power_bs"] = cfg.noise_power_bs_dbm;
  j["qos_rate"] = cfg.qos_rate;
  j["rician_kappa"] = cfg.rician_kappa;
  j["snapshots"] = cfg.snapshots;
  j["user_echo_enabled"] = cfg.user_echo_enabled;
  j["pse_rho"] = cfg.pse_rho;
  j["mse_free_sensing_count"] = cfg.mse_free_sensing_count;
  j["phase"] = to_string(cfg.phase);
  j["pathloss"] = {{"ref_gain_db", cfg.pathloss.ref_gain_db},
                   {"exp_bs_stars", cfg.pathloss.exp_bs_stars},
                   {"exp_user_stars", cfg.pathloss.exp_user_stars},
                   {"exp_stars_target", cfg.pathloss.exp_stars_target}};
  j["bs_placement"] = {{"azimuth", cfg.bs_placement.azimuth_deg},
                       {"elevation", cfg.bs_placement.elevation_deg},
                       {"distance", cfg.bs_placement.distance_m}};
  j["users"] = nlohmann::json::array();
  for (const auto& u : cfg.users)
    j["users"].push_back({{"azimuth", u.azimuth_deg},
                          {"elevation", u.elevation_deg},
                          {"distance", u.distance_m},
                          {"region", to_string(u.region)},
                          {"tx_power", u.tx_power_dbm}});
  j["targets"] = nlohmann::json::array();
  for (const auto& t : cfg.targets)
    j["targets"].push_back({{"azimuth", t.azimuth_deg},
                            {"elevation", t.elevation_deg},
                            {"distance", t.distance_m},
                            {"region", to_string(t.region)},
                            {"rcs_gain", {t.rcs_gain.real(), t.rcs_gain.imag()}}});
  return j.dump(2);
}

}  // namespace starsim
