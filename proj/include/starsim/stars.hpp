#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "starsim/scene.hpp"

namespace starsim {

/// A surface side. Reflection coefficients mediate same-side propagation
/// (the BS and the reflection region share a side); transmission
/// coefficients mediate cross-side propagation.
using Side = Region;

enum class ElementRole { passive, sensing };

/// Per-element surface state. Amplitude pairs obey energy conservation:
/// beta_t^2 + beta_r^2 <= 1 - rho, with equality for the lossless modes all
/// constructors here produce. SE/MSE sensing elements capture everything
/// (beta_t = beta_r = 0, rho = 1); PSE elements split every incident signal.
struct StarsProfile {
  Implementation implementation = Implementation::se;
  std::vector<ElementRole> roles;
  Eigen::VectorXd beta_t, beta_r;
  Eigen::VectorXd phi_t, phi_r;  // radians, [0, 2*pi)
  Eigen::VectorXd rho;           // power fraction diverted to sensing (PSE)

  int size() const { return static_cast<int>(roles.size()); }

  std::vector<int> sensing_indices() const {
    std::vector<int> out;
    for (int m = 0; m < size(); ++m)
      if (roles[static_cast<std::size_t>(m)] == ElementRole::sensing) out.push_back(m);
    return out;
  }

  std::vector<int> passive_indices() const {
    std::vector<int> out;
    for (int m = 0; m < size(); ++m)
      if (roles[static_cast<std::size_t>(m)] == ElementRole::passive) out.push_back(m);
    return out;
  }

  bool operator==(const StarsProfile& o) const {
    return implementation == o.implementation && roles == o.roles && beta_t == o.beta_t &&
           beta_r == o.beta_r && phi_t == o.phi_t && phi_r == o.phi_r && rho == o.rho;
  }
};

/// Sensing element placement within the aperture.
///   interleaved: raster indices floor(i*M/M_s)
///   block:       the first M_s indices
inline std::vector<ElementRole> assign_roles(int total, int sensing_count,
                                             SensingPattern pattern) {
  if (sensing_count < 0 || sensing_count > total) {
    std::ostringstream os;
    os << "assign_roles: sensing count " << sensing_count << " out of range [0, " << total << "]";
    throw ConfigError(os.str());
  }
  std::vector<ElementRole> roles(static_cast<std::size_t>(total), ElementRole::passive);
  if (sensing_count == 0) return roles;
  if (pattern == SensingPattern::block) {
    for (int i = 0; i < sensing_count; ++i) roles[static_cast<std::size_t>(i)] = ElementRole::sensing;
  } else {
    for (int i = 0; i < sensing_count; ++i) {
      int idx = static_cast<int>((static_cast<long long>(i) * total) / sensing_count);
      roles[static_cast<std::size_t>(idx)] = ElementRole::sensing;
    }
  }
  return roles;
}

namespace detail {

inline double element_energy_budget(const StarsProfile& p, int m) {
  return p.implementation == Implementation::pse ? 1.0 - p.rho(m) : 1.0;
}

}  // namespace detail

/// Throws ConstraintError listing every element that radiates more energy
/// than it receives (beta_t^2 + beta_r^2 > budget) or carries an
/// out-of-range coefficient.
inline void validate_profile(const StarsProfile& p) {
  constexpr double tol = 1e-9;
  std::vector<int> bad;
  for (int m = 0; m < p.size(); ++m) {
    bool ok = p.beta_t(m) >= -tol && p.beta_r(m) >= -tol && p.beta_t(m) <= 1.0 + tol &&
              p.beta_r(m) <= 1.0 + tol && p.rho(m) >= -tol && p.rho(m) <= 1.0 + tol;
    const double e = p.beta_t(m) * p.beta_t(m) + p.beta_r(m) * p.beta_r(m);
    ok = ok && e <= detail::element_energy_budget(p, m) + tol;
    if (p.implementation != Implementation::pse &&
        p.roles[static_cast<std::size_t>(m)] == ElementRole::sensing)
      ok = ok && std::abs(p.beta_t(m)) <= tol && std::abs(p.beta_r(m)) <= tol;
    if (!ok) bad.push_back(m);
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "profile infeasible at element(s)";
    for (int m : bad) os << ' ' << m;
    throw ConstraintError(os.str());
  }
}

/// Diagonal of the passive response for one side. Sensing elements (SE/MSE)
/// contribute zero; PSE amplitudes already carry the sqrt(1-rho) split.
inline Eigen::VectorXcd passive_diagonal(const StarsProfile& p, Side side) {
  validate_profile(p);
  Eigen::VectorXcd diag(p.size());
  for (int m = 0; m < p.size(); ++m) {
    const double beta = side == Side::reflection ? p.beta_r(m) : p.beta_t(m);
    const double phi = side == Side::reflection ? p.phi_r(m) : p.phi_t(m);
    diag(m) = std::polar(beta, phi);
  }
  return diag;
}

inline Eigen::MatrixXcd passive_matrix(const StarsProfile& p, Side side) {
  return passive_diagonal(p, side).asDiagonal();
}

/// Amplitude with which each element feeds the sensing module: 1 at SE/MSE
/// sensing elements, sqrt(rho) everywhere for PSE. Paired with
/// capture_indices(); entries align with that index list.
inline std::vector<int> capture_indices(const StarsProfile& p) {
  if (p.implementation == Implementation::pse) {
    std::vector<int> all(static_cast<std::size_t>(p.size()));
    for (int m = 0; m < p.size(); ++m) all[static_cast<std::size_t>(m)] = m;
    return all;
  }
  return p.sensing_indices();
}

inline Eigen::VectorXd capture_amplitudes(const StarsProfile& p) {
  const std::vector<int> idx = capture_indices(p);
  Eigen::VectorXd amp(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    amp(static_cast<Eigen::Index>(i)) =
        p.implementation == Implementation::pse ? std::sqrt(p.rho(idx[i])) : 1.0;
  return amp;
}

/// Wraps phases into [0, 2*pi), clamps rho to [0, 1], and rescales each
/// amplitude pair radially down onto beta_t^2 + beta_r^2 <= budget.
/// Idempotent; never increases the radiated energy of an element.
inline StarsProfile project_feasible(StarsProfile p) {
  for (int m = 0; m < p.size(); ++m) {
    p.phi_t(m) = wrap_two_pi(p.phi_t(m));
    p.phi_r(m) = wrap_two_pi(p.phi_r(m));
    p.rho(m) = std::clamp(p.rho(m), 0.0, 1.0);
    p.beta_t(m) = std::max(p.beta_t(m), 0.0);
    p.beta_r(m) = std::max(p.beta_r(m), 0.0);
    if (p.implementation != Implementation::pse &&
        p.roles[static_cast<std::size_t>(m)] == ElementRole::sensing) {
      p.beta_t(m) = 0.0;
      p.beta_r(m) = 0.0;
      continue;
    }
    const double budget = detail::element_energy_budget(p, m);
    const double e = p.beta_t(m) * p.beta_t(m) + p.beta_r(m) * p.beta_r(m);
    // The slack keeps the projection bitwise idempotent.
    if (e > budget * (1.0 + 1e-12)) {
      const double scale = e > 0.0 ? std::sqrt(budget / e) : 0.0;
      p.beta_t(m) *= scale;
      p.beta_r(m) *= scale;
    }
  }
  return p;
}

/// Lossless full-reflection or full-transmission profile for one phase.
/// SE/MSE: passive elements put all energy on the active side; sensing
/// elements absorb. PSE: every element splits rho to the sensing module and
/// radiates the rest on the active side.
inline StarsProfile make_full_mode_profile(const ScenarioConfig& cfg, Side active_side) {
  const int m_total = cfg.total_stars_elements();
  StarsProfile p;
  p.implementation = cfg.implementation;
  p.beta_t = Eigen::VectorXd::Zero(m_total);
  p.beta_r = Eigen::VectorXd::Zero(m_total);
  p.phi_t = Eigen::VectorXd::Zero(m_total);
  p.phi_r = Eigen::VectorXd::Zero(m_total);
  if (cfg.implementation == Implementation::pse) {
    p.roles.assign(static_cast<std::size_t>(m_total), ElementRole::passive);
    p.rho = Eigen::VectorXd::Constant(m_total, cfg.pse_rho);
    const double beta = std::sqrt(1.0 - cfg.pse_rho);
    for (int m = 0; m < m_total; ++m)
      (active_side == Side::reflection ? p.beta_r : p.beta_t)(m) = beta;
  } else {
    p.roles = assign_roles(m_total, cfg.sensing_element_count, cfg.sensing_pattern);
    p.rho = Eigen::VectorXd::Zero(m_total);
    for (int m = 0; m < m_total; ++m) {
      if (p.roles[static_cast<std::size_t>(m)] == ElementRole::sensing) {
        p.rho(m) = 1.0;  // all incident power captured
        continue;
      }
      (active_side == Side::reflection ? p.beta_r : p.beta_t)(m) = 1.0;
    }
  }
  return p;
}

/// One time-division phase: which region is served, which target is sensed,
/// and the passive mode of the surface.
struct PhaseSpec {
  Region served_region = Region::reflection;
  int target_id = 0;
  Side passive_mode = Side::reflection;
};

/// The two-phase protocol: full-reflection serving the reflection region
/// while sensing the reflection-side target, then the transmission mirror.
/// Sides without a target are skipped; no target at all is an error.
inline std::vector<PhaseSpec> phase_schedule(const ScenarioConfig& cfg) {
  if (cfg.targets.empty()) throw ScheduleError("phase_schedule: scenario has no targets");
  std::vector<PhaseSpec> phases;
  for (Region side : {Region::reflection, Region::transmission}) {
    for (std::size_t k = 0; k < cfg.targets.size(); ++k) {
      if (cfg.targets[k].region == side) {
        phases.push_back({side, static_cast<int>(k), side});
        break;  // one sensed target per phase
      }
    }
  }
  if (phases.empty())
    throw ScheduleError("phase_schedule: no target on any scheduled side");
  return phases;
}

// --- profile dump/restore (optimizer checkpointing) ---

inline std::string profile_to_json(const StarsProfile& p) {
  nlohmann::json j;
  j["implementation"] = to_string(p.implementation);
  j["roles"] = nlohmann::json::array();
  for (auto r : p.roles) j["roles"].push_back(r == ElementRole::sensing ? "sensing" : "passive");
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["beta_t"] = vec(p.beta_t);
  j["beta_r"] = vec(p.beta_r);
  j["phi_t"] = vec(p.phi_t);
  j["phi_r"] = vec(p.phi_r);
  j["rho"] = vec(p.rho);
  return j.dump(2);
}

inline StarsProfile profile_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  StarsProfile p;
  p.implementation =
      detail::implementation_from_string(j.at("implementation").get<std::string>(), "implementation");
  for (const auto& r : j.at("roles"))
    p.roles.push_back(r.get<std::string>() == "sensing" ? ElementRole::sensing
                                                        : ElementRole::passive);
  auto vec = [&j](const char* key) {
    auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
  };
  p.beta_t = vec("beta_t");
  p.beta_r = vec("beta_r");
  p.phi_t = vec("phi_t");
  p.phi_r = vec("phi_r");
  p.rho = vec("rho");
  if (p.beta_t.size() != static_cast<Eigen::Index>(p.roles.size()))
    throw ConfigError("profile: field lengths disagree");
  return p;
}

}  // namespace starsim
