#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "starsim/sensing.hpp"

namespace starsim {

/// Joint optimization outcome for one phase. objective_trace holds the
/// root-CRB (azimuth, degrees) of each accepted outer iterate and is
/// non-increasing; exploration that was rejected or ran before feasibility
/// was reached is summarized in wall_notes instead.
struct OptimResult {
  Eigen::MatrixXcd r_x;
  StarsProfile profile;
  std::vector<double> objective_trace;
  RateReport rates;
  bool converged = false;
  int outer_iterations = 0;
  bool feasible = false;
  std::vector<std::string> wall_notes;
  double root_crb_az_deg = std::numeric_limits<double>::quiet_NaN();
  double root_crb_el_deg = std::numeric_limits<double>::quiet_NaN();
  int target_id = 0;
  Region phase = Region::reflection;
  double best_rho = -1.0;  // PSE only
};

struct OptimOptions {
  int max_outer = 20;
  double outer_rel_tol = 1e-5;
  int cov_max_steps = 500;
  double cov_rel_tol = 1e-7;
  int phase_max_steps = 300;
  double phase_rel_tol = 1e-6;
  double phase_fd_step = 1e-6;  // radians; gradients by central differences
  int phase_sweeps = 24;        // coordinate sweeps around the gradient stage
  int restarts = 4;
  int joint_paths = 3;          // independent alternation paths, best kept
  double penalty_init = 10.0;
  int penalty_max_rounds = 10;
  std::optional<Eigen::MatrixXcd> warm_r;
  std::optional<StarsProfile> warm_profile;
};

/// Nearest PSD matrix under the trace budget: symmetrize, clamp negative
/// eigenvalues, then rescale the spectrum radially if the trace exceeds P.
inline Eigen::MatrixXcd project_psd_trace(const Eigen::MatrixXcd& h, double power_budget) {
  const double asym = (h - h.adjoint()).norm();
  if (asym > 1e-8 * std::max(1.0, h.norm()))
    std::cerr << "project_psd_trace: warning: input asymmetry " << asym << "\n";
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es((h + h.adjoint()) / 2.0);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  const double tr = lam.sum();
  if (tr > power_budget && tr > 0.0) lam *= power_budget / tr;
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
}

/// First target on the active side.
inline int phase_target_id(const ScenarioConfig& cfg) {
  for (std::size_t k = 0; k < cfg.targets.size(); ++k)
    if (cfg.targets[k].region == cfg.phase) return static_cast<int>(k);
  throw ScheduleError("no target on the active phase's side");
}

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Azimuth root-CRB; +inf where the FIM is singular (rejected by searches).
/// Trusts the caller to pass a projected covariance.
inline double crb_objective(const ScenarioConfig& cfg, const ChannelSet& ch,
                            const StarsProfile& profile, const Eigen::MatrixXcd& r_x,
                            int target_id) {
  const Eigen::Matrix4d fim =
      fim_from_model(build_echo_model(cfg, ch, profile, target_id), r_x);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(fim);
  if (!(es.eigenvalues().maxCoeff() > 0.0) ||
      es.eigenvalues().minCoeff() <= es.eigenvalues().maxCoeff() * 1e-13)
    return kInf;
  return rad2deg(std::sqrt(fim.inverse()(0, 0)));
}

/// Penalized constraint violation. The target sits a hair inside the
/// feasible set: the quadratic penalty has zero slope at its own boundary,
/// so penalizing against R_min itself would only reach the constraint
/// asymptotically across escalation rounds.
inline double qos_violation(const RateReport& rates, double r_min) {
  const double margin = 1e-4 * std::max(r_min, 1.0);
  double v = 0.0;
  for (Eigen::Index i = 0; i < rates.rate.size(); ++i)
    v += std::pow(std::max(0.0, r_min + margin - rates.rate(i)), 2);
  return v;
}

/// Rate report for the active users; a sensing-only phase has no QoS
/// constraint and reports min_rate = +inf.
inline RateReport rates_or_empty(const ScenarioConfig& cfg, const ChannelSet& ch,
                                 const StarsProfile& profile) {
  if (active_user_ids(cfg).empty()) {
    RateReport r;
    r.min_rate = kInf;
    r.feasible = true;
    return r;
  }
  return uplink_sinrs(ch, profile, cfg);
}

/// Gradient of the azimuth root-CRB with respect to the Hermitian transmit
/// covariance, via d(F^-1)_11 = -(s1' dF s1) and the closed form of F.
inline Eigen::MatrixXcd crb_gradient_r(const FimParts& parts, const EchoModel& model,
                                       const Eigen::MatrixXcd& r_x) {
  const Eigen::Matrix4d fim = fim_from_parts(parts, model, r_x);
  const Eigen::Matrix4d inv = fim.inverse();
  const Eigen::Vector4d s1 = inv.col(0);
  Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(parts.T[0].rows(), parts.T[0].cols());
  for (int i = 0; i < 4; ++i) b += s1(i) * parts.T[static_cast<std::size_t>(i)];
  const double s11 = inv(0, 0);
  const double scale = -rad2deg(1.0) * parts.prefactor / (2.0 * std::sqrt(s11));
  return scale * (b.adjoint() * b);
}

}  // namespace detail

/// Projected gradient descent of the azimuth root-CRB over the transmit
/// covariance (analytic gradient, backtracking line search starting at 1.0,
/// radial PSD/trace projection). The profile is held fixed; accepted steps
/// never worsen the objective.
inline Eigen::MatrixXcd optimize_covariance(const ScenarioConfig& cfg, const ChannelSet& ch,
                                            const StarsProfile& profile,
                                            const Eigen::MatrixXcd& r_init,
                                            const OptimOptions& opts = {},
                                            int target_id_override = -1) {
  const int target_id = target_id_override >= 0 ? target_id_override : phase_target_id(cfg);
  const double power = cfg.bs_power_w();
  const detail::EchoModel model = detail::build_echo_model(cfg, ch, profile, target_id);
  const detail::FimParts parts = detail::build_fim_parts(model);

  auto objective = [&](const Eigen::MatrixXcd& r) {
    const Eigen::Matrix4d fim = detail::fim_from_model(model, r);
    const double var = fim.inverse()(0, 0);
    if (!std::isfinite(var) || var <= 0.0) return detail::kInf;
    return rad2deg(std::sqrt(var));
  };

  Eigen::MatrixXcd r = project_psd_trace(r_init, power);
  double obj = objective(r);
  if (!std::isfinite(obj)) {
    // Unidentifiable at the initial point: restart from the matched
    // rank-one illumination, v = (d^T Theta G)^H.
    const Eigen::VectorXcd v = model.w.conjugate();
    const double n2 = v.squaredNorm();
    if (n2 > 0.0) {
      r = power * (v * v.adjoint()) / n2;
      obj = objective(r);
    }
    if (!std::isfinite(obj)) return r;  // no illumination at all
  }

  double trial_step = 1.0;
  for (int it = 0; it < opts.cov_max_steps; ++it) {
    const Eigen::MatrixXcd grad = detail::crb_gradient_r(parts, model, r);
    double step = trial_step;
    bool accepted = false;
    while (step >= 1e-12) {
      const Eigen::MatrixXcd cand = project_psd_trace(r - step * grad, power);
      const double cand_obj = objective(cand);
      if (cand_obj < obj) {
        const double rel = (obj - cand_obj) / std::max(obj, 1e-300);
        r = cand;
        obj = cand_obj;
        accepted = true;
        trial_step = std::min(step * 2.0, 1e6);
        if (rel < opts.cov_rel_tol) it = opts.cov_max_steps;  // converged
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }

  // The objective is non-increasing under a radial power scale-up, so the
  // optimum uses the full budget; apply the scale explicitly.
  const double tr = r.real().trace();
  if (tr > 0.0 && tr < power) {
    const Eigen::MatrixXcd scaled = (power / tr) * r;
    if (objective(scaled) <= obj) r = scaled;
  }
  return r;
}

/// Penalized phase search over the active side's radiating elements:
///   J(phi) = rootCRB_az + penalty * sum_u max(0, R_min - rate_u)^2,
/// central finite-difference gradient, backtracking line search, retraction
/// by project_feasible. Runs `restarts` seeded descents (the given profile
/// plus random-phase profiles) and keeps the best.
inline StarsProfile optimize_phases(const ScenarioConfig& cfg, const ChannelSet& ch,
                                    const StarsProfile& profile_init, const Eigen::MatrixXcd& r_x,
                                    double penalty_weight, const OptimOptions& opts = {},
                                    std::uint64_t seed = 0, int target_id_override = -1,
                                    int restarts_override = -1) {
  const int target_id = target_id_override >= 0 ? target_id_override : phase_target_id(cfg);
  const int restarts = restarts_override >= 0 ? restarts_override : opts.restarts;
  const Side side = cfg.phase;

  // Variable set: phases of the elements that radiate on the active side.
  std::vector<int> vars;
  for (int m = 0; m < profile_init.size(); ++m) {
    if (profile_init.implementation == Implementation::pse ||
        profile_init.roles[static_cast<std::size_t>(m)] == ElementRole::passive)
      vars.push_back(m);
  }
  if (vars.empty()) return profile_init;

  auto phases_of = [&](const StarsProfile& p) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(vars.size()));
    for (std::size_t i = 0; i < vars.size(); ++i)
      x(static_cast<Eigen::Index>(i)) =
          side == Side::reflection ? p.phi_r(vars[i]) : p.phi_t(vars[i]);
    return x;
  };
  auto with_phases = [&](const StarsProfile& base, const Eigen::VectorXd& x) {
    StarsProfile p = base;
    for (std::size_t i = 0; i < vars.size(); ++i)
      (side == Side::reflection ? p.phi_r : p.phi_t)(vars[i]) = x(static_cast<Eigen::Index>(i));
    return project_feasible(p);
  };

  // The sensing part of the objective is evaluated with the covariance
  // adapted to the candidate profile: the best of the caller's R_x and a
  // two-beam family spanning the matched beam (w) and the azimuth
  // difference beam (the component of e_az orthogonal to w). Judging a
  // profile only at the caller's R traps the search in the basin that R
  // was shaped for; the following covariance step can only improve on the
  // family, so accepted outer iterates still descend the true objective.
  const double power = cfg.bs_power_w();
  static constexpr std::array<double, 5> kBeamSplits{0.02, 0.25, 0.5, 0.75, 0.98};
  const detail::EchoModelBuilder model_builder(cfg, ch, profile_init, target_id);
  auto sensing_objective = [&](const StarsProfile& p) {
    const detail::EchoModel model = model_builder.at(p);
    auto crb_of = [](const Eigen::Matrix4d& fim) {
      // Hot path: closed-form 4x4 inverse; degenerate matrices surface as
      // non-finite or non-positive variances and score +inf.
      const double var = fim.inverse()(0, 0);
      if (!std::isfinite(var) || var <= 0.0) return detail::kInf;
      return rad2deg(std::sqrt(var));
    };
    double best = crb_of(detail::fim_from_model(model, r_x));
    Eigen::VectorXcd wb = model.w.conjugate();
    const double wn = wb.norm();
    if (wn > 0.0) {
      wb /= wn;
      Eigen::VectorXcd eb = model.e_az.conjugate();
      eb -= wb * wb.dot(eb);
      const double en = eb.norm();
      if (en > 0.0) {
        eb /= en;
        for (double t : kBeamSplits) {
          const Eigen::Matrix4d fim =
              detail::fim_from_dyads(model, {eb, wb}, {t * power, (1.0 - t) * power});
          best = std::min(best, crb_of(fim));
        }
      }
    }
    return best;
  };
  auto objective = [&](const StarsProfile& p) {
    double j = sensing_objective(p);
    if (penalty_weight > 0.0 && !active_user_ids(cfg).empty())
      j += penalty_weight * detail::qos_violation(uplink_sinrs(ch, p, cfg), cfg.qos_rate);
    return j;
  };

  // Deterministic cascade-alignment start: coordinate-ascent maximization
  // of ||G^T Theta d||^2 over the unit-modulus phases. The sensing-aligned
  // basin is usually the right one; random restarts cover the rest.
  auto aligned_phases = [&]() {
    const auto& target =
        cfg.targets.at(static_cast<std::size_t>(target_id));
    const Eigen::VectorXcd d =
        ch.target_steering.at(static_cast<std::size_t>(target_id));
    Eigen::MatrixXcd b(static_cast<Eigen::Index>(vars.size()), cfg.bs_antennas);
    for (std::size_t i = 0; i < vars.size(); ++i)
      b.row(static_cast<Eigen::Index>(i)) = d(vars[i]) * ch.bs_to_stars.row(vars[i]);
    (void)target;
    const Eigen::MatrixXcd quad = b.conjugate() * b.transpose();
    Eigen::VectorXcd theta = Eigen::VectorXcd::Ones(static_cast<Eigen::Index>(vars.size()));
    for (int it = 0; it < 12; ++it) {
      const Eigen::VectorXcd y = quad * theta;
      for (Eigen::Index i = 0; i < theta.size(); ++i)
        theta(i) = std::abs(y(i)) > 0.0 ? y(i) / std::abs(y(i)) : cdouble{1.0, 0.0};
    }
    Eigen::VectorXd x(theta.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = wrap_two_pi(std::arg(theta(i)));
    return x;
  };

  StarsProfile best = project_feasible(profile_init);
  double best_obj = objective(best);

  // The incumbent and the cascade-aligned start are always descended;
  // additional restarts add seeded random starts.
  for (int rs = 0; rs < std::max(2, restarts); ++rs) {
    StarsProfile p = project_feasible(profile_init);
    if (rs == 1) {
      p = with_phases(p, aligned_phases());
    } else if (rs > 1) {
      CounterRng rng = CounterRng::derive(seed, "phase_restart", static_cast<std::uint64_t>(rs));
      Eigen::VectorXd x(static_cast<Eigen::Index>(vars.size()));
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = 2.0 * kPi * rng.uniform01();
      p = with_phases(p, x);
    }
    double obj = objective(p);
    // Coordinate sweeps: the joint gradient stalls in the narrow valleys of
    // this landscape, while a sampled per-element phase update still makes
    // progress. Each variable scans a uniform phase grid and refines the
    // best sample parabolically.
    constexpr int kScan = 16;
    for (int sweep = 0; sweep < opts.phase_sweeps; ++sweep) {
      if (!std::isfinite(obj)) break;
      const double before = obj;
      for (std::size_t vi = 0; vi < vars.size(); ++vi) {
        Eigen::VectorXd x = phases_of(p);
        std::array<double, kScan> val;
        int best_k = -1;
        double best_val = obj;
        for (int k = 0; k < kScan; ++k) {
          Eigen::VectorXd xk = x;
          xk(static_cast<Eigen::Index>(vi)) = 2.0 * kPi * k / kScan;
          val[static_cast<std::size_t>(k)] = objective(with_phases(p, xk));
          if (val[static_cast<std::size_t>(k)] < best_val) {
            best_val = val[static_cast<std::size_t>(k)];
            best_k = k;
          }
        }
        if (best_k < 0) continue;
        double phi = 2.0 * kPi * best_k / kScan;
        const double d0 = val[static_cast<std::size_t>(best_k)];
        const double dm = val[static_cast<std::size_t>((best_k + kScan - 1) % kScan)];
        const double dp = val[static_cast<std::size_t>((best_k + 1) % kScan)];
        const double curv = dm - 2.0 * d0 + dp;
        if (curv > 0.0) {
          const double offset =
              std::clamp(0.5 * (dm - dp) / curv, -0.5, 0.5) * (2.0 * kPi / kScan);
          Eigen::VectorXd xr = phases_of(p);
          xr(static_cast<Eigen::Index>(vi)) = wrap_two_pi(phi + offset);
          const double refined = objective(with_phases(p, xr));
          if (refined < best_val) {
            best_val = refined;
            phi = xr(static_cast<Eigen::Index>(vi));
          }
        }
        if (best_val < obj) {
          Eigen::VectorXd xb = phases_of(p);
          xb(static_cast<Eigen::Index>(vi)) = phi;
          p = with_phases(p, xb);
          obj = best_val;
        }
      }
      if (before - obj < opts.phase_rel_tol * std::max(before, 1e-300)) break;
    }

    // Joint gradient polish around the sweep result.
    double trial_step = 1.0;
    for (int it = 0; it < opts.phase_max_steps; ++it) {
      if (!std::isfinite(obj)) break;
      Eigen::VectorXd x = phases_of(p);
      Eigen::VectorXd grad(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += opts.phase_fd_step;
        xm(i) -= opts.phase_fd_step;
        grad(i) =
            (objective(with_phases(p, xp)) - objective(with_phases(p, xm))) /
            (2.0 * opts.phase_fd_step);
      }
      double step = trial_step;
      bool accepted = false;
      while (step >= 1e-12) {
        const StarsProfile cand = with_phases(p, x - step * grad);
        const double cand_obj = objective(cand);
        if (cand_obj < obj) {
          const double rel = (obj - cand_obj) / std::max(obj, 1e-300);
          p = cand;
          obj = cand_obj;
          accepted = true;
          trial_step = std::min(step * 2.0, 1e6);
          if (rel < opts.phase_rel_tol) it = opts.phase_max_steps;  // converged
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }

    if (obj < best_obj) {
      best = p;
      best_obj = obj;
    }
  }
  return best;
}

namespace detail {

/// One alternation path: uniform power and seeded random phases (or the
/// warm start), QoS penalty escalated tenfold until the phase step lands
/// feasible, then alternating phase/covariance steps accepting an outer
/// iterate only when it improves the objective without losing feasibility.
inline OptimResult alternating_path(const ScenarioConfig& cfg, const ChannelSet& ch,
                                    std::uint64_t seed, const OptimOptions& opts) {
  cfg.validate();
  const int target_id = phase_target_id(cfg);
  const double power = cfg.bs_power_w();
  const int nt = cfg.bs_antennas;

  OptimResult res;
  res.target_id = target_id;
  res.phase = cfg.phase;

  StarsProfile profile;
  if (opts.warm_profile) {
    profile = project_feasible(*opts.warm_profile);
  } else {
    profile = make_full_mode_profile(cfg, cfg.phase);
    CounterRng rng = CounterRng::derive(seed, "init_phases");
    for (int m = 0; m < profile.size(); ++m) {
      const double phi = 2.0 * kPi * rng.uniform01();
      (cfg.phase == Side::reflection ? profile.phi_r : profile.phi_t)(m) = phi;
    }
    profile = project_feasible(profile);
  }
  Eigen::MatrixXcd r = opts.warm_r
                           ? project_psd_trace(*opts.warm_r, power)
                           : Eigen::MatrixXcd((power / nt) *
                                              Eigen::MatrixXcd::Identity(nt, nt));

  double penalty = opts.penalty_init;
  int penalty_rounds = 0;
  // Random-restart diversification runs once, at the first phase search of
  // this run; later searches warm-continue from the incumbent.
  bool restarts_spent = opts.warm_profile.has_value();
  auto take_restarts = [&] {
    const int n = restarts_spent ? 1 : opts.restarts;
    restarts_spent = true;
    return n;
  };

  // Feasibility phase: drive the QoS violation down before minimizing.
  RateReport rates = detail::rates_or_empty(cfg, ch, profile);
  while (!rates.feasible && penalty_rounds < opts.penalty_max_rounds) {
    profile = optimize_phases(cfg, ch, profile, r, penalty, opts, seed, target_id,
                              take_restarts());
    rates = detail::rates_or_empty(cfg, ch, profile);
    if (rates.feasible) break;
    penalty *= 10.0;
    ++penalty_rounds;
    std::ostringstream os;
    os << "penalty escalated to " << penalty << " (min rate " << rates.min_rate << ")";
    res.wall_notes.push_back(os.str());
  }
  const bool have_feasible = rates.feasible;
  if (!have_feasible)
    res.wall_notes.push_back("QoS infeasible after penalty escalation; best-effort result");

  // Covariance step from the warm iterate and from the matched/difference
  // beam construction at the profile; the better end point wins.
  auto best_covariance = [&](const StarsProfile& p, const Eigen::MatrixXcd& r_warm) {
    Eigen::MatrixXcd r_best = optimize_covariance(cfg, ch, p, r_warm, opts, target_id);
    double best = detail::crb_objective(cfg, ch, p, r_best, target_id);
    const detail::EchoModel model = detail::build_echo_model(cfg, ch, p, target_id);
    Eigen::VectorXcd wb = model.w.conjugate();
    if (wb.norm() > 0.0) {
      wb.normalize();
      Eigen::VectorXcd eb = model.e_az.conjugate();
      eb -= wb * wb.dot(eb);
      if (eb.norm() > 0.0) {
        eb.normalize();
        const Eigen::MatrixXcd r0 =
            power * (0.75 * (eb * eb.adjoint()) + 0.25 * (wb * wb.adjoint()));
        const Eigen::MatrixXcd r_alt = optimize_covariance(cfg, ch, p, r0, opts, target_id);
        const double alt = detail::crb_objective(cfg, ch, p, r_alt, target_id);
        if (alt < best) {
          best = alt;
          r_best = r_alt;
        }
      }
    }
    return r_best;
  };

  r = best_covariance(profile, r);
  double obj = detail::crb_objective(cfg, ch, profile, r, target_id);
  res.objective_trace.push_back(obj);

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    ++res.outer_iterations;
    StarsProfile prof_cand =
        optimize_phases(cfg, ch, profile, r, penalty, opts, seed, target_id, take_restarts());
    const Eigen::MatrixXcd r_cand = best_covariance(prof_cand, r);
    const RateReport rates_cand = detail::rates_or_empty(cfg, ch, prof_cand);
    const double obj_cand = detail::crb_objective(cfg, ch, prof_cand, r_cand, target_id);

    if ((rates_cand.feasible || !have_feasible) && obj_cand <= obj) {
      profile = prof_cand;
      rates = rates_cand;
      r = r_cand;
      obj = obj_cand;
    } else if (!rates_cand.feasible && have_feasible &&
               penalty_rounds < opts.penalty_max_rounds) {
      penalty *= 10.0;
      ++penalty_rounds;
      res.wall_notes.push_back("phase step lost feasibility; penalty escalated");
    } else {
      // No acceptable phase move; keep covariance progress on the incumbent.
      const Eigen::MatrixXcd r_keep = best_covariance(profile, r);
      const double obj_keep = detail::crb_objective(cfg, ch, profile, r_keep, target_id);
      if (obj_keep < obj) {
        r = r_keep;
        obj = obj_keep;
      }
    }

    const double prev = res.objective_trace.back();
    res.objective_trace.push_back(obj);
    if (prev - obj < opts.outer_rel_tol * std::max(prev, 1e-300)) {
      res.converged = true;
      break;
    }
  }

  res.r_x = r;
  res.profile = profile;
  res.rates = rates;
  res.feasible = rates.feasible;
  try {
    const RootCrb crb = root_crb_degrees(fisher_information(cfg, ch, profile, r, target_id));
    res.root_crb_az_deg = crb.azimuth_deg;
    res.root_crb_el_deg = crb.elevation_deg;
  } catch (const UnidentifiableTargetError& e) {
    res.wall_notes.push_back(e.what());
  }
  return res;
}

/// Lexicographic comparison: feasibility first, then objective.
inline bool result_better(const OptimResult& a, const OptimResult& b) {
  if (a.feasible != b.feasible) return a.feasible;
  const double oa = std::isfinite(a.root_crb_az_deg) ? a.root_crb_az_deg : kInf;
  const double ob = std::isfinite(b.root_crb_az_deg) ? b.root_crb_az_deg : kInf;
  return oa < ob;
}

}  // namespace detail

/// Joint optimization entry point: runs independently seeded alternation
/// paths (one when warm-started) and reports the best by feasibility, then
/// objective. Deterministic for fixed inputs.
inline OptimResult alternating_optimize(const ScenarioConfig& cfg, const ChannelSet& ch,
                                        std::uint64_t seed, const OptimOptions& opts = {}) {
  const int paths = (opts.warm_profile || opts.warm_r) ? 1 : std::max(1, opts.joint_paths);
  OptimResult best;
  bool have = false;
  for (int path = 0; path < paths; ++path) {
    const std::uint64_t path_seed =
        path == 0 ? seed : derive_seed(seed, "joint_path", static_cast<std::uint64_t>(path));
    OptimResult res = detail::alternating_path(cfg, ch, path_seed, opts);
    if (!have || detail::result_better(res, best)) {
      best = std::move(res);
      have = true;
    }
  }
  return best;
}

namespace detail {

inline OptimResult alternating_with_roles(const ScenarioConfig& cfg, const ChannelSet& ch,
                                          const std::vector<ElementRole>& roles,
                                          std::uint64_t seed, const OptimOptions& opts) {
  StarsProfile base = make_full_mode_profile(cfg, cfg.phase);
  // Re-derive amplitudes for the requested roles.
  for (int m = 0; m < base.size(); ++m) {
    base.roles[static_cast<std::size_t>(m)] = roles[static_cast<std::size_t>(m)];
    base.beta_t(m) = 0.0;
    base.beta_r(m) = 0.0;
    base.rho(m) = 0.0;
    if (roles[static_cast<std::size_t>(m)] == ElementRole::sensing) {
      base.rho(m) = 1.0;
    } else {
      (cfg.phase == Side::reflection ? base.beta_r : base.beta_t)(m) = 1.0;
    }
  }
  CounterRng rng = CounterRng::derive(seed, "init_phases");
  for (int m = 0; m < base.size(); ++m) {
    const double phi = 2.0 * kPi * rng.uniform01();
    (cfg.phase == Side::reflection ? base.phi_r : base.phi_t)(m) = phi;
  }
  OptimOptions o = opts;
  o.warm_profile = project_feasible(base);
  return alternating_optimize(cfg, ch, seed, o);
}

}  // namespace detail

/// Greedy local search over MSE role assignments: starting from the
/// interleaved split, evaluate every single-element role swap with a short
/// alternating run, take the best improving swap, and finish with a full
/// run on the chosen roles. The reported result never loses to the plain
/// run on the initial split.
inline OptimResult optimize_mode_selection(const ScenarioConfig& cfg, const ChannelSet& ch,
                                           std::uint64_t seed, const OptimOptions& opts = {}) {
  if (cfg.implementation != Implementation::mse)
    throw ConfigError("optimize_mode_selection: implementation must be mse");
  const int m_total = cfg.total_stars_elements();

  std::vector<ElementRole> roles =
      assign_roles(m_total, cfg.sensing_element_count, cfg.sensing_pattern);
  OptimResult incumbent = detail::alternating_with_roles(cfg, ch, roles, seed, opts);

  OptimOptions short_opts = opts;
  short_opts.max_outer = 2;
  short_opts.restarts = 1;

  auto short_score = [&](const std::vector<ElementRole>& r) {
    const OptimResult res = detail::alternating_with_roles(cfg, ch, r, seed, short_opts);
    double score = std::isfinite(res.root_crb_az_deg) ? res.root_crb_az_deg : detail::kInf;
    if (!res.feasible) score += 1e6;
    return score;
  };

  double cur_score = short_score(roles);
  for (int swap = 0; swap < 50; ++swap) {
    std::vector<ElementRole> best_roles;
    double best_score = cur_score;
    auto consider = [&](std::vector<ElementRole> cand) {
      const double s = short_score(cand);
      if (s < best_score) {
        best_score = s;
        best_roles = std::move(cand);
      }
    };
    if (cfg.mse_free_sensing_count) {
      // Toggle one element, keeping the sensing count in [1, M-1].
      for (int m = 0; m < m_total; ++m) {
        std::vector<ElementRole> cand = roles;
        cand[static_cast<std::size_t>(m)] =
            cand[static_cast<std::size_t>(m)] == ElementRole::sensing ? ElementRole::passive
                                                                       : ElementRole::sensing;
        const int ms = static_cast<int>(std::count(cand.begin(), cand.end(), ElementRole::sensing));
        if (ms >= 1 && ms <= m_total - 1) consider(std::move(cand));
      }
    } else {
      for (int s = 0; s < m_total; ++s) {
        if (roles[static_cast<std::size_t>(s)] != ElementRole::sensing) continue;
        for (int p = 0; p < m_total; ++p) {
          if (roles[static_cast<std::size_t>(p)] != ElementRole::passive) continue;
          std::vector<ElementRole> cand = roles;
          std::swap(cand[static_cast<std::size_t>(s)], cand[static_cast<std::size_t>(p)]);
          consider(std::move(cand));
        }
      }
    }
    if (best_roles.empty()) break;  // no improving swap
    roles = best_roles;
    cur_score = best_score;
  }

  OptimResult final_res = detail::alternating_with_roles(cfg, ch, roles, seed, opts);
  if (detail::result_better(final_res, incumbent)) return final_res;
  return incumbent;
}

/// Scalar minimization utility used by the power-split search. Seeds five
/// probe points; an interior pattern inconsistent with unimodality falls
/// back to a coarse 20-point grid (reported through `notes`).
struct ScalarSearchResult {
  double x = 0.0;
  double fx = 0.0;
  bool used_grid_fallback = false;
};

template <typename F>
ScalarSearchResult golden_section_search(F&& f, double lo, double hi, double tol,
                                         std::vector<std::string>* notes = nullptr) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  constexpr int kProbes = 5;
  std::array<double, kProbes> xs, fs;
  for (int i = 0; i < kProbes; ++i) {
    xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (kProbes - 1);
    fs[static_cast<std::size_t>(i)] = f(xs[static_cast<std::size_t>(i)]);
  }
  int n_local_min = 0;
  for (int i = 1; i < kProbes - 1; ++i)
    if (fs[static_cast<std::size_t>(i)] < fs[static_cast<std::size_t>(i - 1)] &&
        fs[static_cast<std::size_t>(i)] < fs[static_cast<std::size_t>(i + 1)])
      ++n_local_min;
  const bool end_min_lo = fs[0] < fs[1];
  const bool end_min_hi = fs[kProbes - 1] < fs[kProbes - 2];
  if (n_local_min + (end_min_lo ? 1 : 0) + (end_min_hi ? 1 : 0) > 1) {
    if (notes) notes->push_back("scalar search: probe pattern is not unimodal; using 20-point grid");
    ScalarSearchResult best{0.0, detail::kInf, true};
    for (int i = 0; i < 20; ++i) {
      const double x = lo + (hi - lo) * i / 19.0;
      const double fx = f(x);
      if (fx < best.fx) {
        best.x = x;
        best.fx = fx;
      }
    }
    return best;
  }

  int arg = 0;
  for (int i = 1; i < kProbes; ++i)
    if (fs[static_cast<std::size_t>(i)] < fs[static_cast<std::size_t>(arg)]) arg = i;
  double a = xs[static_cast<std::size_t>(std::max(0, arg - 1))];
  double b = xs[static_cast<std::size_t>(std::min(kProbes - 1, arg + 1))];

  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(x2);
    }
  }
  const double xm = (a + b) / 2.0;
  return {xm, f(xm), false};
}

/// PSE: golden-section search over the shared power-split ratio in
/// [0.01, 0.99] (tolerance 1e-3), with a full alternating run per probe.
inline OptimResult optimize_power_split(const ScenarioConfig& cfg, const ChannelSet& ch,
                                        std::uint64_t seed, const OptimOptions& opts = {}) {
  if (cfg.implementation != Implementation::pse)
    throw ConfigError("optimize_power_split: implementation must be pse");

  std::vector<std::string> notes;
  auto run_at = [&](double rho) {
    ScenarioConfig c = cfg;
    c.pse_rho = rho;
    return alternating_optimize(c, ch, seed, opts);
  };
  auto score_of = [](const OptimResult& r) {
    double s = std::isfinite(r.root_crb_az_deg) ? r.root_crb_az_deg : detail::kInf;
    if (!r.feasible) s += 1e6;
    return s;
  };

  const ScalarSearchResult sr = golden_section_search(
      [&](double rho) { return score_of(run_at(rho)); }, 0.01, 0.99, 1e-3, &notes);

  OptimResult best = run_at(sr.x);
  best.best_rho = sr.x;
  for (auto& n : notes) best.wall_notes.push_back(n);
  return best;
}

/// Conventional baseline: a reflecting-only and a transmitting-only surface
/// at the STARS location, each with half the elements and a proportional
/// sensing split; only the surface matching the active phase participates.
/// Channels are re-synthesized for the half geometry from the same seed.
inline OptimResult optimize_baseline_dual_ris(const ScenarioConfig& cfg, const ChannelSet& ch,
                                              std::uint64_t seed, const OptimOptions& opts = {}) {
  (void)ch;  // the baseline hears its own half-aperture realization
  const int m_total = cfg.total_stars_elements();
  if (m_total % 2 != 0)
    throw ConfigError("optimize_baseline_dual_ris: element count must be even");

  ScenarioConfig half = cfg;
  if (cfg.stars_rows % 2 == 0)
    half.stars_rows = cfg.stars_rows / 2;
  else if (cfg.stars_cols % 2 == 0)
    half.stars_cols = cfg.stars_cols / 2;
  else
    throw ConfigError("optimize_baseline_dual_ris: neither grid dimension is even");
  half.sensing_element_count = std::max(1, (cfg.sensing_element_count + 1) / 2);

  const ChannelSet half_ch = synthesize_channels(half, seed);
  OptimResult res = alternating_optimize(half, half_ch, seed, opts);
  res.wall_notes.push_back("dual-RIS baseline: half-size single-sided surface");
  return res;
}

// --- OptimResult checkpoint ---

inline std::string optim_result_to_json(const OptimResult& res) {
  nlohmann::json j;
  j["r_x"] = detail::cmat_to_json(res.r_x);
  j["profile"] = nlohmann::json::parse(profile_to_json(res.profile));
  j["objective_trace"] = res.objective_trace;
  j["converged"] = res.converged;
  j["outer_iterations"] = res.outer_iterations;
  j["feasible"] = res.feasible;
  j["root_crb_az_deg"] = res.root_crb_az_deg;
  j["root_crb_el_deg"] = res.root_crb_el_deg;
  j["target_id"] = res.target_id;
  j["phase"] = to_string(res.phase);
  j["wall_notes"] = res.wall_notes;
  if (res.best_rho >= 0.0) j["best_rho"] = res.best_rho;
  nlohmann::json rates;
  rates["user_ids"] = res.rates.user_ids;
  rates["sinr"] = std::vector<double>(res.rates.sinr.data(),
                                      res.rates.sinr.data() + res.rates.sinr.size());
  rates["rate"] = std::vector<double>(res.rates.rate.data(),
                                      res.rates.rate.data() + res.rates.rate.size());
  rates["min_rate"] = res.rates.min_rate;
  rates["feasible"] = res.rates.feasible;
  j["rates"] = rates;
  return j.dump(2);
}

}  // namespace starsim
