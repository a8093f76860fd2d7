#pragma once

#include <Eigen/Dense>
#include <array>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "starsim/channel.hpp"
#include "starsim/comms.hpp"
#include "starsim/parallel.hpp"
#include "starsim/stars.hpp"

namespace starsim {

/// 4x4 Fisher information over (azimuth rad, elevation rad, Re alpha,
/// Im alpha) for one sensed target.
struct FisherInfo {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Zero();
  int target_id = 0;
  int snapshots_used = 0;
};

struct RootCrb {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct EchoSnapshots {
  Eigen::MatrixXcd data;  // M_s x L
  double truth_azimuth_deg = 0.0;
  double truth_elevation_deg = 0.0;
  cdouble truth_alpha{0.0, 0.0};
  std::uint64_t seed = 0;
};

struct AngleEstimate {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct MonteCarloRmse {
  double rmse_az_deg = 0.0;
  double rmse_el_deg = 0.0;
};

struct EchoSnrComparison {
  double snr_at_stars_db = 0.0;
  double snr_at_bs_db = 0.0;
};

namespace detail {

// Noiseless echo at the capturing elements for target k at snapshot l:
//   mu_l = alpha * a_s(az, el) * q_l
//   q_l  = d(az, el)^T Theta_ill G x_l  +  sum_u sqrt(p_u) c_u s_ul
// a_s is the steering vector at the capturing elements scaled by the
// capture amplitudes, Theta_ill connects the BS side to the target's side,
// and c_u = d^T Theta_conn h_u with Theta_conn connecting the user's side
// to the target's side (the same-side bounce uses the reflection pair, the
// cross-side hop the transmission pair). Uplink symbols are pilots known to
// the sensing processor, so user terms add information.
//
// Every derivative of mu_l is of the form T_i x_l + sum_u sqrt(p_u) g_iu s_ul,
// which with sum_l x_l x_l^H = L R_x and unit-power orthogonal symbols gives
// the closed form
//   FIM_ij = (2L/sigma^2) Re[ tr(T_i^H T_j R_x) + sum_u p_u g_iu^H g_ju ].
struct EchoModel {
  Eigen::VectorXcd a_s, das_az, das_el;  // capture-scaled subarray steering
  Eigen::VectorXcd w, e_az, e_el;        // BS illumination functionals (N_t)
  std::vector<cdouble> c, c_az, c_el;    // user illumination scalars
  std::vector<double> user_power_w;
  cdouble alpha{0.0, 0.0};
  double sigma2 = 0.0;
  int snapshots = 0;
  int capture_count = 0;
  std::vector<int> capture_idx;
};

inline EchoModel build_echo_model(const ScenarioConfig& cfg, const ChannelSet& channels,
                                  const StarsProfile& profile, int target_id) {
  if (target_id < 0 || target_id >= static_cast<int>(cfg.targets.size()))
    throw DomainError("sensing: target_id out of range");
  const auto& target = cfg.targets[static_cast<std::size_t>(target_id)];

  EchoModel m;
  m.capture_idx = capture_indices(profile);
  m.capture_count = static_cast<int>(m.capture_idx.size());
  if (m.capture_count == 0)
    throw SensingError("sensing: profile has no sensing elements");
  m.alpha = target_echo_gain(cfg, target_id);
  m.sigma2 = cfg.noise_sensing_w();
  m.snapshots = cfg.snapshots;

  const ArrayGeometry stars = stars_geometry(cfg);
  const double az = deg2rad(target.azimuth_deg);
  const double el = deg2rad(target.elevation_deg);
  const Eigen::VectorXcd a = steering_vector(stars, az, el);
  const auto [da_az, da_el] = steering_derivatives(stars, az, el);

  // One-way STARS->target amplitude, taken from the realized channel set.
  const Eigen::VectorXcd& d_ch = channels.target_steering.at(static_cast<std::size_t>(target_id));
  const double amp = d_ch.cwiseAbs().mean();
  const Eigen::VectorXcd d = amp * a;
  const Eigen::VectorXcd dd_az = amp * da_az;
  const Eigen::VectorXcd dd_el = amp * da_el;

  const Eigen::VectorXd cap = capture_amplitudes(profile);
  m.a_s.resize(m.capture_count);
  m.das_az.resize(m.capture_count);
  m.das_el.resize(m.capture_count);
  for (int i = 0; i < m.capture_count; ++i) {
    const int idx = m.capture_idx[static_cast<std::size_t>(i)];
    m.a_s(i) = cap(i) * a(idx);
    m.das_az(i) = cap(i) * da_az(idx);
    m.das_el(i) = cap(i) * da_el(idx);
  }

  const Eigen::VectorXcd theta_ill = passive_diagonal(profile, target.region);
  m.w = channels.bs_to_stars.transpose() * theta_ill.cwiseProduct(d);
  m.e_az = channels.bs_to_stars.transpose() * theta_ill.cwiseProduct(dd_az);
  m.e_el = channels.bs_to_stars.transpose() * theta_ill.cwiseProduct(dd_el);

  if (cfg.user_echo_enabled) {
    for (std::size_t u = 0; u < cfg.users.size(); ++u) {
      const auto& user = cfg.users[u];
      if (user.region != cfg.phase) continue;  // silent in this phase
      const Side conn_side =
          user.region == target.region ? Side::reflection : Side::transmission;
      const Eigen::VectorXcd conn = passive_diagonal(profile, conn_side);
      const Eigen::VectorXcd& h = channels.user_to_stars[u];
      m.c.push_back((d.array() * conn.array() * h.array()).sum());
      m.c_az.push_back((dd_az.array() * conn.array() * h.array()).sum());
      m.c_el.push_back((dd_el.array() * conn.array() * h.array()).sum());
      m.user_power_w.push_back(user.tx_power_w());
    }
  }
  return m;
}

/// Precomputes everything in the echo model that does not depend on the
/// surface phases, so a phase search can rebuild models cheaply. Roles,
/// capture amplitudes, and rho must stay fixed across at() calls.
class EchoModelBuilder {
 public:
  EchoModelBuilder(const ScenarioConfig& cfg, const ChannelSet& channels,
                   const StarsProfile& shape, int target_id)
      : cfg_(&cfg), channels_(&channels), target_id_(target_id) {
    const auto& target = cfg.targets.at(static_cast<std::size_t>(target_id));
    template_model_ = build_echo_model(cfg, channels, shape, target_id);
    const ArrayGeometry stars = stars_geometry(cfg);
    const double az = deg2rad(target.azimuth_deg);
    const double el = deg2rad(target.elevation_deg);
    const double amp =
        channels.target_steering.at(static_cast<std::size_t>(target_id)).cwiseAbs().mean();
    d_ = amp * steering_vector(stars, az, el);
    auto [da, de] = steering_derivatives(stars, az, el);
    dd_az_ = amp * da;
    dd_el_ = amp * de;
    target_region_ = target.region;
    if (cfg.user_echo_enabled) {
      for (std::size_t u = 0; u < cfg.users.size(); ++u)
        if (cfg.users[u].region == cfg.phase) active_users_.push_back(static_cast<int>(u));
    }
  }

  EchoModel at(const StarsProfile& profile) const {
    EchoModel m = template_model_;  // geometry, alpha, noise, capture parts
    const Eigen::VectorXcd theta_ill = passive_diagonal(profile, target_region_);
    const Eigen::MatrixXcd& g = channels_->bs_to_stars;
    m.w = g.transpose() * theta_ill.cwiseProduct(d_);
    m.e_az = g.transpose() * theta_ill.cwiseProduct(dd_az_);
    m.e_el = g.transpose() * theta_ill.cwiseProduct(dd_el_);
    m.c.clear();
    m.c_az.clear();
    m.c_el.clear();
    m.user_power_w.clear();
    for (int u : active_users_) {
      const auto& user = cfg_->users[static_cast<std::size_t>(u)];
      const Side conn_side =
          user.region == target_region_ ? Side::reflection : Side::transmission;
      const Eigen::VectorXcd conn = passive_diagonal(profile, conn_side);
      const Eigen::VectorXcd& h = channels_->user_to_stars[static_cast<std::size_t>(u)];
      m.c.push_back((d_.array() * conn.array() * h.array()).sum());
      m.c_az.push_back((dd_az_.array() * conn.array() * h.array()).sum());
      m.c_el.push_back((dd_el_.array() * conn.array() * h.array()).sum());
      m.user_power_w.push_back(user.tx_power_w());
    }
    return m;
  }

 private:
  const ScenarioConfig* cfg_;
  const ChannelSet* channels_;
  int target_id_;
  EchoModel template_model_;
  Eigen::VectorXcd d_, dd_az_, dd_el_;
  Region target_region_ = Region::reflection;
  std::vector<int> active_users_;
};

/// Derivative coefficient matrices T_i (one per parameter) and user vectors.
struct FimParts {
  std::array<Eigen::MatrixXcd, 4> T;
  std::array<std::vector<Eigen::VectorXcd>, 4> g;
  double prefactor = 0.0;  // 2L / sigma^2
};

inline FimParts build_fim_parts(const EchoModel& m) {
  FimParts parts;
  parts.prefactor = 2.0 * static_cast<double>(m.snapshots) / m.sigma2;
  parts.T[0] = m.alpha * (m.das_az * m.w.transpose() + m.a_s * m.e_az.transpose());
  parts.T[1] = m.alpha * (m.das_el * m.w.transpose() + m.a_s * m.e_el.transpose());
  parts.T[2] = m.a_s * m.w.transpose();
  parts.T[3] = kJ * parts.T[2];
  for (std::size_t u = 0; u < m.c.size(); ++u) {
    parts.g[0].push_back(m.alpha * (m.das_az * m.c[u] + m.a_s * m.c_az[u]));
    parts.g[1].push_back(m.alpha * (m.das_el * m.c[u] + m.a_s * m.c_el[u]));
    parts.g[2].push_back(m.a_s * m.c[u]);
    parts.g[3].push_back(kJ * (m.a_s * m.c[u]));
  }
  return parts;
}

inline Eigen::Matrix4d fim_from_parts(const FimParts& parts, const EchoModel& m,
                                      const Eigen::MatrixXcd& r_x) {
  std::array<Eigen::MatrixXcd, 4> tr;
  for (int j = 0; j < 4; ++j) tr[static_cast<std::size_t>(j)] = parts.T[static_cast<std::size_t>(j)] * r_x;
  Eigen::Matrix4d fim;
  for (int i = 0; i < 4; ++i) {
    for (int j = i; j < 4; ++j) {
      cdouble acc = (parts.T[static_cast<std::size_t>(i)].conjugate().cwiseProduct(
                         tr[static_cast<std::size_t>(j)]))
                        .sum();
      for (std::size_t u = 0; u < m.user_power_w.size(); ++u)
        acc += m.user_power_w[u] *
               parts.g[static_cast<std::size_t>(i)][u].dot(parts.g[static_cast<std::size_t>(j)][u]);
      fim(i, j) = parts.prefactor * acc.real();
      fim(j, i) = fim(i, j);
    }
  }
  return fim;
}

/// Bilinear forms x^T R y-bar of the illumination functionals (R Hermitian).
struct FimBilinears {
  cdouble rww;      // w^T R w-bar
  cdouble r_az_w;   // e_az^T R w-bar
  cdouble r_el_w;
  cdouble r_w_az;   // w^T R e_az-bar
  cdouble r_w_el;
  cdouble r_az_az;
  cdouble r_el_el;
  cdouble r_el_az;  // e_el^T R e_az-bar
};

/// FIM through the rank-2 structure of the derivative matrices:
/// T_i = s_i * (A_i w^T + a_s e_i^T) with A_i, e_i zero for the alpha
/// parameters. Only the bilinears depend on R_x.
inline Eigen::Matrix4d fim_from_bilinears(const EchoModel& m, const FimBilinears& bl) {
  const cdouble rww = bl.rww;
  const cdouble r_az_w = bl.r_az_w;
  const cdouble r_el_w = bl.r_el_w;
  const cdouble r_w_az = bl.r_w_az;
  const cdouble r_w_el = bl.r_w_el;
  const cdouble r_az_az = bl.r_az_az;
  const cdouble r_el_el = bl.r_el_el;
  const cdouble r_el_az = bl.r_el_az;

  const cdouble caa = m.a_s.dot(m.a_s);
  const cdouble c_az_a = m.das_az.dot(m.a_s);  // A_az^H a_s
  const cdouble c_el_a = m.das_el.dot(m.a_s);
  const cdouble c_az_az = m.das_az.dot(m.das_az);
  const cdouble c_el_el = m.das_el.dot(m.das_el);
  const cdouble c_az_el = m.das_az.dot(m.das_el);

  const double alpha2 = std::norm(m.alpha);

  Eigen::Matrix4d fim;
  const cdouble j1{0.0, 1.0};
  // tr(T_i^H T_j R) for T_i = s_i (A_i w^T + a_s e_i^T) expands to
  //   (A_i^H A_j)(w^T R w-bar) + (A_i^H a)(e_j^T R w-bar)
  // + (a^H A_j)(w^T R e_i-bar) + (a^H a)(e_j^T R e_i-bar).
  fim(0, 0) = (alpha2 * (c_az_az * rww + c_az_a * r_az_w +
                         std::conj(c_az_a) * std::conj(r_az_w) + caa * r_az_az))
                  .real();
  fim(1, 1) = (alpha2 * (c_el_el * rww + c_el_a * r_el_w +
                         std::conj(c_el_a) * std::conj(r_el_w) + caa * r_el_el))
                  .real();
  fim(0, 1) = (alpha2 * (c_az_el * rww + c_az_a * r_el_w + std::conj(c_el_a) * r_w_az +
                         caa * r_el_az))
                  .real();
  // alpha block: T_re = a_s w^T, T_im = j a_s w^T
  fim(2, 2) = (caa * rww).real();
  fim(3, 3) = fim(2, 2);
  fim(2, 3) = (caa * rww * j1).real();
  // angle-alpha cross terms (A_j = 0, e_j = w for the alpha parameters)
  const cdouble az_re = std::conj(m.alpha) * (c_az_a * rww + caa * r_w_az);
  const cdouble el_re = std::conj(m.alpha) * (c_el_a * rww + caa * r_w_el);
  fim(0, 2) = az_re.real();
  fim(0, 3) = (az_re * j1).real();
  fim(1, 2) = el_re.real();
  fim(1, 3) = (el_re * j1).real();

  // User-echo terms: g_i = s_i (A_i c_u + a_s c'_iu), g_re = a_s c_u.
  for (std::size_t u = 0; u < m.user_power_w.size(); ++u) {
    const double p = m.user_power_w[u];
    const cdouble cu = m.c[u], cz = m.c_az[u], ce = m.c_el[u];
    auto g_dot = [&](cdouble ai_aj, cdouble ai_a, cdouble a_aj, cdouble ci_conj, cdouble cj,
                     cdouble ci2_conj, cdouble cj2) {
      // (A_i c_i + a_s c2_i)^H (A_j c_j + a_s c2_j)
      return ai_aj * ci_conj * cj + ai_a * ci_conj * cj2 + a_aj * ci2_conj * cj +
             caa * ci2_conj * cj2;
    };
    const cdouble uaz_az = alpha2 * g_dot(c_az_az, c_az_a, std::conj(c_az_a), std::conj(cu), cu,
                                          std::conj(cz), cz);
    const cdouble uel_el = alpha2 * g_dot(c_el_el, c_el_a, std::conj(c_el_a), std::conj(cu), cu,
                                          std::conj(ce), ce);
    const cdouble uaz_el = alpha2 * g_dot(c_az_el, c_az_a, std::conj(c_el_a), std::conj(cu), cu,
                                          std::conj(cz), ce);
    const cdouble uaz_re =
        std::conj(m.alpha) * (c_az_a * std::conj(cu) * cu + caa * std::conj(cz) * cu);
    const cdouble uel_re =
        std::conj(m.alpha) * (c_el_a * std::conj(cu) * cu + caa * std::conj(ce) * cu);
    const double ure_re = (caa * std::conj(cu) * cu).real();
    fim(0, 0) += p * uaz_az.real();
    fim(1, 1) += p * uel_el.real();
    fim(0, 1) += p * uaz_el.real();
    fim(0, 2) += p * uaz_re.real();
    fim(0, 3) += p * (uaz_re * j1).real();
    fim(1, 2) += p * uel_re.real();
    fim(1, 3) += p * (uel_re * j1).real();
    fim(2, 2) += p * ure_re;
    fim(3, 3) += p * ure_re;
    fim(2, 3) += p * (caa * std::conj(cu) * cu * j1).real();
  }

  fim(1, 0) = fim(0, 1);
  fim(2, 0) = fim(0, 2);
  fim(3, 0) = fim(0, 3);
  fim(2, 1) = fim(1, 2);
  fim(3, 1) = fim(1, 3);
  fim(3, 2) = fim(2, 3);
  const double prefactor = 2.0 * static_cast<double>(m.snapshots) / m.sigma2;
  return prefactor * fim;
}

inline Eigen::Matrix4d fim_from_model(const EchoModel& m, const Eigen::MatrixXcd& r_x) {
  const Eigen::VectorXcd rw = r_x * m.w.conjugate();
  const Eigen::VectorXcd re_az = r_x * m.e_az.conjugate();
  const Eigen::VectorXcd re_el = r_x * m.e_el.conjugate();
  FimBilinears bl;
  bl.rww = m.w.transpose() * rw;
  bl.r_az_w = m.e_az.transpose() * rw;
  bl.r_el_w = m.e_el.transpose() * rw;
  bl.r_w_az = m.w.transpose() * re_az;
  bl.r_w_el = m.w.transpose() * re_el;
  bl.r_az_az = m.e_az.transpose() * re_az;
  bl.r_el_el = m.e_el.transpose() * re_el;
  bl.r_el_az = m.e_el.transpose() * re_az;
  return fim_from_bilinears(m, bl);
}

/// FIM for a covariance given as a weighted sum of dyads sum_k c_k v_k v_k^H.
/// Every bilinear x^T R y-bar reduces to per-dyad scalars x^T v_k, so the
/// cost is O(K N) instead of O(N^2).
inline Eigen::Matrix4d fim_from_dyads(const EchoModel& m,
                                      const std::vector<Eigen::VectorXcd>& dyads,
                                      const std::vector<double>& coefs) {
  FimBilinears bl{};
  for (std::size_t k = 0; k < dyads.size(); ++k) {
    const cdouble pw = m.w.transpose() * dyads[k];
    const cdouble pa = m.e_az.transpose() * dyads[k];
    const cdouble pe = m.e_el.transpose() * dyads[k];
    const double c = coefs[k];
    bl.rww += c * pw * std::conj(pw);
    bl.r_az_w += c * pa * std::conj(pw);
    bl.r_el_w += c * pe * std::conj(pw);
    bl.r_w_az += c * pw * std::conj(pa);
    bl.r_w_el += c * pw * std::conj(pe);
    bl.r_az_az += c * pa * std::conj(pa);
    bl.r_el_el += c * pe * std::conj(pe);
    bl.r_el_az += c * pe * std::conj(pa);
  }
  return fim_from_bilinears(m, bl);
}

inline void check_covariance(const ScenarioConfig& cfg, const Eigen::MatrixXcd& r_x) {
  if (r_x.rows() != cfg.bs_antennas || r_x.cols() != cfg.bs_antennas)
    throw DomainError("sensing: transmit covariance has the wrong shape");
  const double tr = r_x.real().trace();
  if (tr > cfg.bs_power_w() + 1e-9)
    throw DomainError("sensing: transmit covariance exceeds the power budget");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es((r_x + r_x.adjoint()) / 2.0);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale)
    throw DomainError("sensing: transmit covariance is not positive semidefinite");
}

}  // namespace detail

/// Closed-form FIM per the echo model. Linear in R_x when the user echo is
/// disabled. Symmetric PSD by construction.
inline FisherInfo fisher_information(const ScenarioConfig& cfg, const ChannelSet& channels,
                                     const StarsProfile& profile, const Eigen::MatrixXcd& r_x,
                                     int target_id) {
  detail::check_covariance(cfg, r_x);
  const detail::EchoModel m = detail::build_echo_model(cfg, channels, profile, target_id);
  FisherInfo info;
  info.matrix = detail::fim_from_model(m, r_x);
  info.target_id = target_id;
  info.snapshots_used = cfg.snapshots;
  return info;
}

/// Degree-based root CRB of the two angle parameters:
/// (180/pi) * sqrt([FIM^-1]_{ii}).
inline RootCrb root_crb_degrees(const FisherInfo& fim) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(fim.matrix);
  const double max_eig = es.eigenvalues().maxCoeff();
  const double min_eig = es.eigenvalues().minCoeff();
  if (!(max_eig > 0.0) || min_eig <= max_eig * 1e-13)
    throw UnidentifiableTargetError(
        "root_crb_degrees: Fisher information is singular; target parameters are not "
        "jointly identifiable");
  const Eigen::Matrix4d inv = fim.matrix.inverse();
  RootCrb crb;
  crb.azimuth_deg = rad2deg(std::sqrt(inv(0, 0)));
  crb.elevation_deg = rad2deg(std::sqrt(inv(1, 1)));
  return crb;
}

/// L noisy snapshots drawn from the echo model: waveform x_l ~ CN(0, R_x),
/// unit-modulus user symbols, additive CN(0, sigma^2 I) noise.
/// Deterministic in (inputs, seed).
inline EchoSnapshots echo_snapshots(const ScenarioConfig& cfg, const ChannelSet& channels,
                                    const StarsProfile& profile, const Eigen::MatrixXcd& r_x,
                                    int target_id, std::uint64_t seed) {
  detail::check_covariance(cfg, r_x);
  const detail::EchoModel m = detail::build_echo_model(cfg, channels, profile, target_id);
  const auto& target = cfg.targets[static_cast<std::size_t>(target_id)];

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es((r_x + r_x.adjoint()) / 2.0);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXcd sqrt_r =
      es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().adjoint();

  const int nt = cfg.bs_antennas;
  const int n_users = static_cast<int>(m.c.size());
  CounterRng wave_rng = CounterRng::derive(seed, "waveform");
  CounterRng sym_rng = CounterRng::derive(seed, "user_symbols");
  CounterRng noise_rng = CounterRng::derive(seed, "noise");
  const double noise_amp = std::sqrt(m.sigma2);

  EchoSnapshots snaps;
  snaps.data.resize(m.capture_count, cfg.snapshots);
  snaps.truth_azimuth_deg = target.azimuth_deg;
  snaps.truth_elevation_deg = target.elevation_deg;
  snaps.truth_alpha = m.alpha;
  snaps.seed = seed;

  Eigen::VectorXcd xi(nt);
  for (int l = 0; l < cfg.snapshots; ++l) {
    for (int n = 0; n < nt; ++n) xi(n) = wave_rng.cnormal();
    cdouble q = (m.w.transpose() * (sqrt_r * xi)).value();
    for (int u = 0; u < n_users; ++u) {
      const cdouble s = std::polar(1.0, 2.0 * kPi * sym_rng.uniform01());
      q += std::sqrt(m.user_power_w[static_cast<std::size_t>(u)]) *
           m.c[static_cast<std::size_t>(u)] * s;
    }
    snaps.data.col(l) = m.alpha * q * m.a_s;
    for (int i = 0; i < m.capture_count; ++i)
      snaps.data(i, l) += noise_amp * noise_rng.cnormal();
  }
  return snaps;
}

/// 2D MUSIC with a one-dimensional signal subspace: argmax of the
/// pseudo-spectrum over an (az, el) grid at resolution grid_deg, then one
/// local quadratic interpolation step on the null-spectrum. `weights`
/// scales the steering entries (capture amplitudes); empty means uniform.
inline AngleEstimate music_estimate(const EchoSnapshots& snaps, const ArrayGeometry& geom,
                                    double grid_deg,
                                    const Eigen::VectorXd& weights = Eigen::VectorXd()) {
  const int ms = static_cast<int>(snaps.data.rows());
  const int l = static_cast<int>(snaps.data.cols());
  if (ms < 2) throw SensingError("music_estimate: subspace undefined with fewer than 2 elements");
  if (geom.size() != ms) throw DomainError("music_estimate: geometry does not match data");
  if (grid_deg <= 0.0 || grid_deg > 45.0)
    throw DomainError("music_estimate: grid resolution out of range");
  if (l < ms)
    std::cerr << "music_estimate: warning: fewer snapshots (" << l << ") than elements (" << ms
              << ")\n";

  Eigen::VectorXd wts = weights.size() == 0 ? Eigen::VectorXd::Ones(ms) : weights;
  if (wts.size() != ms) throw DomainError("music_estimate: weights do not match data");

  const Eigen::MatrixXcd cov = snaps.data * snaps.data.adjoint() / static_cast<double>(l);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
  // Eigenvalues ascend; everything but the last vector spans noise.
  const Eigen::MatrixXcd noise_basis = es.eigenvectors().leftCols(ms - 1);
  const Eigen::MatrixXcd projector = noise_basis * noise_basis.adjoint();

  const int n_az = static_cast<int>(std::lround(360.0 / grid_deg));
  const int n_el = static_cast<int>(std::floor(90.0 / grid_deg + 1e-9));
  auto null_spectrum = [&](double az_deg, double el_deg) {
    const Eigen::VectorXcd a =
        wts.cast<cdouble>().cwiseProduct(steering_vector(geom, deg2rad(az_deg), deg2rad(el_deg)));
    const double denom = std::real(a.dot(projector * a));
    const double norm = std::real(a.dot(a));
    return denom / norm;
  };

  Eigen::MatrixXd null_grid(n_az, n_el);
  int best_i = 0, best_j = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_az; ++i) {
    const double az = i * grid_deg;
    for (int j = 0; j < n_el; ++j) {
      const double el = (j + 1) * grid_deg;
      const double val = null_spectrum(az, el);
      null_grid(i, j) = val;
      if (val < best) {
        best = val;
        best_i = i;
        best_j = j;
      }
    }
  }

  // One local quadratic interpolation step on the null spectrum around the
  // grid minimum. The 2D fit (9-point stencil with cross term) matters: the
  // null surface is a tilted ellipse, and independent 1D parabolas would
  // inherit a bias from slicing it off-center. Azimuth wraps; at an
  // elevation boundary the elevation stays on the grid.
  double az_est = best_i * grid_deg;
  double el_est = (best_j + 1) * grid_deg;
  const bool el_interior = best_j > 0 && best_j < n_el - 1;
  const int im = (best_i + n_az - 1) % n_az;
  const int ip = (best_i + 1) % n_az;
  const double f0 = null_grid(best_i, best_j);
  const double fm0 = null_grid(im, best_j);
  const double fp0 = null_grid(ip, best_j);
  // A center sample this deep below its neighbours is an exact null; any
  // interpolation would only bias it.
  if (f0 > 1e-9 * std::min(fm0, fp0)) {
    double da = 0.0, de = 0.0;
    bool solved = false;
    if (el_interior) {
      const double f0m = null_grid(best_i, best_j - 1);
      const double f0p = null_grid(best_i, best_j + 1);
      const double fmm = null_grid(im, best_j - 1);
      const double fmp = null_grid(im, best_j + 1);
      const double fpm = null_grid(ip, best_j - 1);
      const double fpp = null_grid(ip, best_j + 1);
      const double ga = (fp0 - fm0) / 2.0;
      const double ge = (f0p - f0m) / 2.0;
      const double haa = fp0 - 2.0 * f0 + fm0;
      const double hee = f0p - 2.0 * f0 + f0m;
      const double hae = (fpp - fpm - fmp + fmm) / 4.0;
      const double det = haa * hee - hae * hae;
      if (haa > 0.0 && det > 0.0) {
        da = -(hee * ga - hae * ge) / det;
        de = -(haa * ge - hae * ga) / det;
        solved = true;
      }
    }
    if (!solved) {
      const double curv = fm0 - 2.0 * f0 + fp0;
      if (curv > 0.0) da = 0.5 * (fm0 - fp0) / curv;
      if (el_interior) {
        const double f0m = null_grid(best_i, best_j - 1);
        const double f0p = null_grid(best_i, best_j + 1);
        const double curv_e = f0m - 2.0 * f0 + f0p;
        if (curv_e > 0.0) de = 0.5 * (f0m - f0p) / curv_e;
      }
    }
    da = std::clamp(da, -1.0, 1.0);
    de = std::clamp(de, -1.0, 1.0);
    az_est += da * grid_deg;
    el_est += de * grid_deg;
    if (az_est < 0.0) az_est += 360.0;
    if (az_est >= 360.0) az_est -= 360.0;
    el_est = std::clamp(el_est, grid_deg, 90.0);
  }
  return {az_est, el_est};
}

/// Null-spectrum grid dump (azimuth_deg, elevation_deg, music_db rows) for
/// offline inspection of the estimator surface.
inline std::string music_spectrum_csv(const EchoSnapshots& snaps, const ArrayGeometry& geom,
                                      double grid_deg,
                                      const Eigen::VectorXd& weights = Eigen::VectorXd()) {
  const int ms = static_cast<int>(snaps.data.rows());
  if (ms < 2) throw SensingError("music_spectrum_csv: subspace undefined");
  Eigen::VectorXd wts = weights.size() == 0 ? Eigen::VectorXd::Ones(ms) : weights;
  const Eigen::MatrixXcd cov =
      snaps.data * snaps.data.adjoint() / static_cast<double>(snaps.data.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
  const Eigen::MatrixXcd noise_basis = es.eigenvectors().leftCols(ms - 1);
  const Eigen::MatrixXcd projector = noise_basis * noise_basis.adjoint();
  std::ostringstream os;
  os << "azimuth_deg,elevation_deg,music_db\n";
  const int n_az = static_cast<int>(std::lround(360.0 / grid_deg));
  const int n_el = static_cast<int>(std::floor(90.0 / grid_deg + 1e-9));
  for (int i = 0; i < n_az; ++i) {
    for (int j = 0; j < n_el; ++j) {
      const double az = i * grid_deg, el = (j + 1) * grid_deg;
      const Eigen::VectorXcd a =
          wts.cast<cdouble>().cwiseProduct(steering_vector(geom, deg2rad(az), deg2rad(el)));
      const double denom =
          std::max(std::real(a.dot(projector * a)) / std::real(a.dot(a)), 1e-300);
      os << az << ',' << el << ',' << -pow_to_db(denom) << '\n';
    }
  }
  return os.str();
}

/// Estimator RMSE over independently seeded trials; trial seeds derive from
/// the master seed by index, so the result does not depend on scheduling.
inline MonteCarloRmse monte_carlo_rmse(const ScenarioConfig& cfg, const ChannelSet& channels,
                                       const StarsProfile& profile, const Eigen::MatrixXcd& r_x,
                                       int target_id, int trials, std::uint64_t master_seed,
                                       double grid_deg = 1.0) {
  if (trials < 1) throw DomainError("monte_carlo_rmse: trials must be >= 1");
  const ArrayGeometry sub = stars_geometry(cfg).subset(capture_indices(profile));
  const Eigen::VectorXd wts = capture_amplitudes(profile);
  const auto& target = cfg.targets.at(static_cast<std::size_t>(target_id));

  std::vector<double> err_az(static_cast<std::size_t>(trials));
  std::vector<double> err_el(static_cast<std::size_t>(trials));
  parallel_for(trials, [&](int t) {
    const std::uint64_t seed = derive_seed(master_seed, "mc_trial", static_cast<std::uint64_t>(t));
    const EchoSnapshots snaps = echo_snapshots(cfg, channels, profile, r_x, target_id, seed);
    const AngleEstimate est = music_estimate(snaps, sub, grid_deg, wts);
    err_az[static_cast<std::size_t>(t)] = angle_diff_deg(est.azimuth_deg, target.azimuth_deg);
    err_el[static_cast<std::size_t>(t)] = est.elevation_deg - target.elevation_deg;
  });

  double sum_az = 0.0, sum_el = 0.0;
  for (int t = 0; t < trials; ++t) {
    sum_az += err_az[static_cast<std::size_t>(t)] * err_az[static_cast<std::size_t>(t)];
    sum_el += err_el[static_cast<std::size_t>(t)] * err_el[static_cast<std::size_t>(t)];
  }
  return {std::sqrt(sum_az / trials), std::sqrt(sum_el / trials)};
}

/// Mean echo SNR per receive element for the two candidate receivers.
/// At the surface: snr = E sum_l ||mu_l||^2 / (L M_s sigma^2). The
/// hypothetical BS receiver hears the same echo after the passive side
/// re-radiates it (power fraction f = sum_m (beta_t^2 + beta_r^2)/M) and an
/// extra STARS->BS hop, against its own noise floor.
inline EchoSnrComparison echo_snr_comparison(const ScenarioConfig& cfg, const ChannelSet& channels,
                                             const StarsProfile& profile,
                                             const Eigen::MatrixXcd& r_x, int target_id) {
  detail::check_covariance(cfg, r_x);
  const detail::EchoModel m = detail::build_echo_model(cfg, channels, profile, target_id);

  // Mean |q_l|^2 over snapshots.
  double illum = (m.w.transpose() * r_x * m.w.conjugate()).value().real();
  for (std::size_t u = 0; u < m.c.size(); ++u)
    illum += m.user_power_w[u] * std::norm(m.c[u]);
  const double alpha2 = std::norm(m.alpha);

  const double stars_linear =
      alpha2 * m.a_s.squaredNorm() * illum / (m.capture_count * m.sigma2);

  const int m_total = cfg.total_stars_elements();
  double reradiated = 0.0;
  for (int i = 0; i < m_total; ++i)
    reradiated += profile.beta_t(i) * profile.beta_t(i) + profile.beta_r(i) * profile.beta_r(i);
  const double f = reradiated / m_total;
  const double hop = pathloss_gain(cfg.bs_placement.distance_m, cfg.pathloss.exp_bs_stars,
                                   cfg.pathloss.ref_gain_db);
  // ||a_full||^2 / M = 1 for unit-modulus steering.
  const double bs_linear = f * hop * alpha2 * illum / cfg.noise_bs_w();

  EchoSnrComparison out;
  out.snr_at_stars_db = pow_to_db(stars_linear);
  out.snr_at_bs_db = pow_to_db(bs_linear);
  return out;
}

}  // namespace starsim
