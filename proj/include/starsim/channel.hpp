#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include <json.hpp>

#include "starsim/rng.hpp"
#include "starsim/scene.hpp"

namespace starsim {

/// Distance-power-law gain: 10^(ref_gain_db/10) * d^(-exponent).
inline double pathloss_gain(double distance_m, double exponent, double ref_gain_db) {
  if (distance_m <= 0.0) throw DomainError("pathloss_gain: distance must be > 0");
  return db_to_pow(ref_gain_db) * std::pow(distance_m, -exponent);
}

/// All complex links of one scenario realization.
///   bs_to_stars     G, M x N_t, Rician
///   user_to_stars   h_u, length M, Rician
///   target_steering d_k, length M, LoS steering scaled by the one-way
///                   STARS->target amplitude gain
struct ChannelSet {
  Eigen::MatrixXcd bs_to_stars;
  std::vector<Eigen::VectorXcd> user_to_stars;
  std::vector<Eigen::VectorXcd> target_steering;
  std::uint64_t realization_seed = 0;
};

/// Complex echo gain of target k: rcs * one-way amplitude gain, so that
/// alpha_k together with the scaled steering d_k carries exactly the
/// two-way STARS<->target attenuation.
inline cdouble target_echo_gain(const ScenarioConfig& cfg, int target_id) {
  const auto& t = cfg.targets.at(static_cast<std::size_t>(target_id));
  const double pl = pathloss_gain(t.distance_m, cfg.pathloss.exp_stars_target,
                                  cfg.pathloss.ref_gain_db);
  return t.rcs_gain * std::sqrt(pl);
}

/// Deterministic LoS component of the BS->STARS matrix (before Rician
/// mixing): sqrt(pathloss) * a_stars * a_bs^T. Column norms are
/// sqrt(M) * one-way amplitude gain.
inline Eigen::MatrixXcd bs_to_stars_los(const ScenarioConfig& cfg) {
  const ArrayGeometry stars = stars_geometry(cfg);
  const ArrayGeometry bs = bs_geometry(cfg);
  const double az = deg2rad(cfg.bs_placement.azimuth_deg);
  const double el = deg2rad(cfg.bs_placement.elevation_deg);
  const Eigen::VectorXcd a_stars = steering_vector(stars, az, el);
  // Departure angle at the BS array is the reversed bearing.
  const double az_rev = wrap_two_pi(az + kPi);
  const Eigen::VectorXcd a_bs = steering_vector(bs, az_rev, el);
  const double amp = std::sqrt(pathloss_gain(cfg.bs_placement.distance_m,
                                             cfg.pathloss.exp_bs_stars, cfg.pathloss.ref_gain_db));
  return amp * (a_stars * a_bs.transpose());
}

namespace detail {

// kappa at or above this threshold degenerates the Rician mix to pure LoS.
inline constexpr double kLosKappaThreshold = 1e12;

inline Eigen::MatrixXcd rician_matrix(const Eigen::MatrixXcd& los, double kappa, CounterRng rng) {
  if (kappa >= kLosKappaThreshold) return los;
  const double c_los = std::sqrt(kappa / (kappa + 1.0));
  const double c_sc = std::sqrt(1.0 / (kappa + 1.0));
  // Per-entry scattered power matches the per-entry LoS power, so
  // E|entry|^2 equals the pathloss gain after mixing.
  double amp = los.cwiseAbs().mean();
  Eigen::MatrixXcd out(los.rows(), los.cols());
  for (Eigen::Index c = 0; c < los.cols(); ++c)
    for (Eigen::Index r = 0; r < los.rows(); ++r)
      out(r, c) = c_los * los(r, c) + c_sc * amp * rng.cnormal();
  return out;
}

}  // namespace detail

/// Synthesizes every link for one (config, seed) pair. Pure function: the
/// same inputs give a bitwise-identical ChannelSet.
inline ChannelSet synthesize_channels(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ChannelSet ch;
  ch.realization_seed = seed;

  ch.bs_to_stars = detail::rician_matrix(bs_to_stars_los(cfg), cfg.rician_kappa,
                                         CounterRng::derive(seed, "bs_stars"));

  const ArrayGeometry stars = stars_geometry(cfg);
  ch.user_to_stars.reserve(cfg.users.size());
  for (std::size_t u = 0; u < cfg.users.size(); ++u) {
    const auto& user = cfg.users[u];
    const double amp = std::sqrt(pathloss_gain(user.distance_m, cfg.pathloss.exp_user_stars,
                                               cfg.pathloss.ref_gain_db));
    const Eigen::VectorXcd los =
        amp * steering_vector(stars, deg2rad(user.azimuth_deg), deg2rad(user.elevation_deg));
    ch.user_to_stars.push_back(
        detail::rician_matrix(los, cfg.rician_kappa, CounterRng::derive(seed, "user_stars", u)));
  }

  ch.target_steering.reserve(cfg.targets.size());
  for (const auto& t : cfg.targets) {
    const double amp = std::sqrt(pathloss_gain(t.distance_m, cfg.pathloss.exp_stars_target,
                                               cfg.pathloss.ref_gain_db));
    ch.target_steering.push_back(
        amp * steering_vector(stars, deg2rad(t.azimuth_deg), deg2rad(t.elevation_deg)));
  }
  return ch;
}

// --- channel dump (golden-test interface); complex entries as [re, im] ---

namespace detail {

inline nlohmann::json cvec_to_json(const Eigen::VectorXcd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back({v(i).real(), v(i).imag()});
  return arr;
}

inline nlohmann::json cmat_to_json(const Eigen::MatrixXcd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::VectorXcd cvec_from_json(const nlohmann::json& arr) {
  Eigen::VectorXcd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = {arr[i][0].get<double>(), arr[i][1].get<double>()};
  return v;
}

inline Eigen::MatrixXcd cmat_from_json(const nlohmann::json& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXcd m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = {
          rows[r][c][0].get<double>(), rows[r][c][1].get<double>()};
  return m;
}

}  // namespace detail

inline std::string channels_to_json(const ChannelSet& ch) {
  nlohmann::json j;
  j["realization_seed"] = ch.realization_seed;
  j["bs_to_stars"] = detail::cmat_to_json(ch.bs_to_stars);
  j["user_to_stars"] = nlohmann::json::array();
  for (const auto& h : ch.user_to_stars) j["user_to_stars"].push_back(detail::cvec_to_json(h));
  j["target_steering"] = nlohmann::json::array();
  for (const auto& d : ch.target_steering)
    j["target_steering"].push_back(detail::cvec_to_json(d));
  return j.dump(2);
}

inline ChannelSet channels_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ChannelSet ch;
  ch.realization_seed = j.at("realization_seed").get<std::uint64_t>();
  ch.bs_to_stars = detail::cmat_from_json(j.at("bs_to_stars"));
  for (const auto& h : j.at("user_to_stars")) ch.user_to_stars.push_back(detail::cvec_from_json(h));
  for (const auto& d : j.at("target_steering"))
    ch.target_steering.push_back(detail::cvec_from_json(d));
  return ch;
}

}  // namespace starsim
