#pragma once

#include <Eigen/Dense>
#include <vector>

#include "starsim/channel.hpp"
#include "starsim/stars.hpp"

namespace starsim {

/// Uplink rate summary for the users active in one phase. Entries align
/// with user_ids. feasible <=> every active user meets the QoS rate.
struct RateReport {
  std::vector<int> user_ids;
  Eigen::VectorXd sinr;
  Eigen::VectorXd rate;       // log2(1 + sinr)
  Eigen::VectorXd qos_slack;  // rate - R_min
  double min_rate = 0.0;
  bool feasible = true;
};

/// Reciprocal uplink cascade user -> STARS -> BS: f_u = G^T Theta h_u with
/// the active side's coefficients. The user must sit in the served region.
inline Eigen::VectorXcd cascaded_uplink_channel(const ChannelSet& channels,
                                                const StarsProfile& profile,
                                                const ScenarioConfig& cfg, int user_id) {
  const auto& user = cfg.users.at(static_cast<std::size_t>(user_id));
  if (user.region != cfg.phase)
    throw ScheduleError("cascaded_uplink_channel: user " + std::to_string(user_id) +
                        " is not in the served region of the active phase");
  const Eigen::VectorXcd theta = passive_diagonal(profile, cfg.phase);
  const Eigen::VectorXcd& h = channels.user_to_stars.at(static_cast<std::size_t>(user_id));
  return channels.bs_to_stars.transpose() * theta.cwiseProduct(h);
}

inline std::vector<int> active_user_ids(const ScenarioConfig& cfg) {
  std::vector<int> ids;
  for (std::size_t u = 0; u < cfg.users.size(); ++u)
    if (cfg.users[u].region == cfg.phase) ids.push_back(static_cast<int>(u));
  return ids;
}

/// Per-user MMSE combining:
///   sinr_u = p_u f_u^H (sum_{v != u} p_v f_v f_v^H + sigma_b^2 I)^-1 f_u.
/// The BS's own sensing waveform is known there and assumed perfectly
/// cancelled, so the report does not depend on the transmit covariance.
inline RateReport uplink_sinrs(const ChannelSet& channels, const StarsProfile& profile,
                               const ScenarioConfig& cfg) {
  RateReport report;
  report.user_ids = active_user_ids(cfg);
  const int n_active = static_cast<int>(report.user_ids.size());
  if (n_active == 0) throw ScheduleError("uplink_sinrs: no active user in the served region");

  const int nt = cfg.bs_antennas;
  std::vector<Eigen::VectorXcd> f(report.user_ids.size());
  for (std::size_t i = 0; i < report.user_ids.size(); ++i)
    f[i] = cascaded_uplink_channel(channels, profile, cfg, report.user_ids[i]);

  // Woodbury through the (K-1) x (K-1) interference Gram per user: with
  // X_u = [sqrt(p_v) f_v]_{v != u} and A_u = X_u X_u^H + n I,
  //   sinr_u = x_u^H A_u^-1 x_u
  //          = (1/n) [ G_uu - g_u^H (n I + G_u)^-1 g_u ],
  // which needs only K^2 inner products of length N_t and stays stable at
  // high sinr (no complement subtraction).
  const double noise = cfg.noise_bs_w();
  Eigen::MatrixXcd x(nt, n_active);
  for (int i = 0; i < n_active; ++i) {
    const double p = cfg.users[static_cast<std::size_t>(report.user_ids[static_cast<std::size_t>(i)])].tx_power_w();
    x.col(i) = std::sqrt(p) * f[static_cast<std::size_t>(i)];
  }
  const Eigen::MatrixXcd gram = x.adjoint() * x;

  report.sinr.resize(n_active);
  report.rate.resize(n_active);
  report.qos_slack.resize(n_active);
  for (int i = 0; i < n_active; ++i) {
    const int k_int = n_active - 1;
    Eigen::MatrixXcd gu(k_int, k_int);
    Eigen::VectorXcd gi(k_int);
    for (int r = 0, rr = 0; r < n_active; ++r) {
      if (r == i) continue;
      gi(rr) = gram(r, i);
      for (int c = 0, cc = 0; c < n_active; ++c) {
        if (c == i) continue;
        gu(rr, cc) = gram(r, c);
        ++cc;
      }
      ++rr;
    }
    double quad = gram(i, i).real();
    if (k_int > 0) {
      gu += noise * Eigen::MatrixXcd::Identity(k_int, k_int);
      quad -= (gi.adjoint() * gu.ldlt().solve(gi)).value().real();
    }
    report.sinr(i) = std::max(quad / noise, 0.0);
    report.rate(i) = std::log2(1.0 + report.sinr(i));
    report.qos_slack(i) = report.rate(i) - cfg.qos_rate;
  }
  report.min_rate = report.rate.minCoeff();
  report.feasible = report.qos_slack.minCoeff() >= -1e-9;
  return report;
}

}  // namespace starsim
