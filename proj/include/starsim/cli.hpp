#pragma once

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "starsim/optim.hpp"

namespace starsim {

/// One tabular result row. The CSV header is exactly this field list.
struct SweepRecord {
  std::string sweep_name;
  double sweep_value = 0.0;
  Region phase = Region::reflection;
  Implementation implementation = Implementation::se;
  double root_crb_az_deg = 0.0;
  double root_crb_el_deg = 0.0;
  double min_rate = 0.0;
  bool feasible = false;
  int outer_iterations = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kSweepCsvHeader =
    "sweep_name,sweep_value,phase,implementation,root_crb_az_deg,root_crb_el_deg,"
    "min_rate,feasible,outer_iterations,seed";

namespace detail {

/// Locale-independent shortest round-trip formatting.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline std::string format_record(const SweepRecord& r) {
  std::ostringstream os;
  os << r.sweep_name << ',' << format_double(r.sweep_value) << ',' << to_string(r.phase) << ','
     << to_string(r.implementation) << ',' << format_double(r.root_crb_az_deg) << ','
     << format_double(r.root_crb_el_deg) << ',' << format_double(r.min_rate) << ','
     << (r.feasible ? "true" : "false") << ',' << r.outer_iterations << ',' << r.seed;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write file: " + path);
  out << content;
}

struct RangeSpec {
  double start = 0.0, stop = 0.0, step = 0.0;
  std::vector<double> values() const {
    std::vector<double> out;
    for (double v = start; v <= stop + 1e-9; v += step) out.push_back(v);
    return out;
  }
};

inline RangeSpec parse_range(const std::string& text) {
  RangeSpec r;
  std::istringstream is(text);
  std::string a, b, c;
  if (!std::getline(is, a, ':') || !std::getline(is, b, ':') || !std::getline(is, c))
    throw UsageError("range: expected start:stop:step (got '" + text + "')");
  try {
    r.start = std::stod(a);
    r.stop = std::stod(b);
    r.step = std::stod(c);
  } catch (const std::exception&) {
    throw UsageError("range: start:stop:step must be numeric (got '" + text + "')");
  }
  if (r.step <= 0.0 || r.stop < r.start)
    throw UsageError("range: empty or inverted (got '" + text + "')");
  return r;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  return parse_scenario(read_file(path));
}

/// Runs the implementation-appropriate optimizer for the phase configured
/// in cfg.phase.
inline OptimResult optimize_phase(const ScenarioConfig& cfg, const ChannelSet& ch,
                                  std::uint64_t seed, const OptimOptions& opts = {}) {
  switch (cfg.implementation) {
    case Implementation::mse: return optimize_mode_selection(cfg, ch, seed, opts);
    case Implementation::pse: return optimize_power_split(cfg, ch, seed, opts);
    default: return alternating_optimize(cfg, ch, seed, opts);
  }
}

inline SweepRecord record_from_result(const std::string& sweep_name, double sweep_value,
                                      const ScenarioConfig& cfg, const OptimResult& res,
                                      std::uint64_t seed) {
  SweepRecord rec;
  rec.sweep_name = sweep_name;
  rec.sweep_value = sweep_value;
  rec.phase = cfg.phase;
  rec.implementation = cfg.implementation;
  rec.root_crb_az_deg = res.root_crb_az_deg;
  rec.root_crb_el_deg = res.root_crb_el_deg;
  rec.min_rate = res.rates.min_rate;
  rec.feasible = res.feasible;
  rec.outer_iterations = res.outer_iterations;
  rec.seed = seed;
  return rec;
}

inline std::string records_to_csv(const std::vector<SweepRecord>& rows) {
  std::ostringstream os;
  os << kSweepCsvHeader << '\n';
  for (const auto& r : rows) os << format_record(r) << '\n';
  return os.str();
}

}  // namespace detail

/// Optional knobs shared by the commands: override the element
/// implementation, restrict to one phase, swap in the dual-RIS baseline, or
/// dump the channel realization for golden tests.
struct RunOverrides {
  std::optional<Implementation> implementation;
  std::optional<Region> phase_filter;  // unset = both phases
  bool baseline = false;
  std::string dump_channels_path;
};

/// Runs the two-phase schedule on one scenario. Writes <out> (CSV, one row
/// per phase) and <out>.json (full results). Exit 0 when every phase is
/// feasible, 2 when any is not, 1 on error.
inline int cmd_run(const std::string& scenario_path, std::uint64_t seed,
                   const std::string& out_path, const RunOverrides& overrides = {}) {
  try {
    ScenarioConfig cfg = detail::load_scenario(scenario_path);
    if (overrides.implementation) cfg.implementation = *overrides.implementation;
    const std::vector<PhaseSpec> phases = phase_schedule(cfg);
    const ChannelSet ch = synthesize_channels(cfg, seed);
    if (!overrides.dump_channels_path.empty())
      detail::write_file(overrides.dump_channels_path, channels_to_json(ch) + "\n");

    std::vector<SweepRecord> rows;
    nlohmann::json out_json;
    out_json["scenario"] = scenario_path;
    out_json["seed"] = seed;
    out_json["phases"] = nlohmann::json::array();
    bool all_feasible = true;
    bool ran_any = false;
    for (const PhaseSpec& ph : phases) {
      if (overrides.phase_filter && *overrides.phase_filter != ph.served_region) continue;
      ran_any = true;
      ScenarioConfig phase_cfg = cfg;
      phase_cfg.phase = ph.served_region;
      const OptimResult res = overrides.baseline
                                  ? optimize_baseline_dual_ris(phase_cfg, ch, seed)
                                  : detail::optimize_phase(phase_cfg, ch, seed);
      all_feasible = all_feasible && res.feasible;
      rows.push_back(detail::record_from_result(overrides.baseline ? "dual_ris" : "run",
                                                static_cast<double>(ph.target_id), phase_cfg,
                                                res, seed));
      out_json["phases"].push_back(nlohmann::json::parse(optim_result_to_json(res)));
    }
    if (!ran_any) throw UsageError("no scheduled phase matches the --phase filter");
    detail::write_file(out_path, detail::records_to_csv(rows));
    detail::write_file(out_path + ".json", out_json.dump(2) + "\n");
    return all_feasible ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

enum class SweepAxis { power, sensing_elements, users };

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "power") return SweepAxis::power;
  if (s == "sensing_elements") return SweepAxis::sensing_elements;
  if (s == "users") return SweepAxis::users;
  throw UsageError("axis: expected power|sensing_elements|users (got '" + s + "')");
}

namespace detail {

/// Deterministic user placement for the users axis. Point n takes the
/// first n entries of a fixed master list (region-alternating on the 20 m
/// circle), so consecutive sweep points share users and channels and the
/// feasible sets nest.
inline std::vector<UserSpec> placed_users(int count) {
  static constexpr double kMasterAz[] = {30.0, 210.0, 150.0, 330.0, 90.0, 270.0,
                                         60.0, 240.0, 120.0, 300.0};
  std::vector<UserSpec> users;
  for (int i = 0; i < count; ++i) {
    UserSpec u;
    u.azimuth_deg = kMasterAz[static_cast<std::size_t>(i) % std::size(kMasterAz)];
    u.elevation_deg = 30.0;
    u.distance_m = 20.0;
    u.region = i % 2 == 0 ? Region::reflection : Region::transmission;
    u.tx_power_dbm = 23.0;
    users.push_back(u);
  }
  return users;
}

}  // namespace detail

/// One optimization per sweep point per phase, rows in ascending sweep
/// order. Channels are re-synthesized per point only for the users axis.
///
/// Power points warm-start from the previous point (scaled covariance, same
/// phases) and user-count points from the next larger count (whose design
/// stays feasible when users are removed); together with a fresh run per
/// point this pins the expected monotone trends regardless of where the
/// local searches land.
inline int cmd_sweep(const std::string& scenario_path, SweepAxis axis,
                     const std::string& range_spec, std::uint64_t seed,
                     const std::string& out_path,
                     std::optional<Implementation> impl_override = {}) {
  try {
    ScenarioConfig base = detail::load_scenario(scenario_path);
    if (impl_override) base.implementation = *impl_override;
    const detail::RangeSpec range = detail::parse_range(range_spec);
    const std::vector<double> values = range.values();
    if (values.empty()) throw UsageError("range: no sweep points");
    const ChannelSet base_ch = synthesize_channels(base, seed);
    const std::vector<PhaseSpec> phases = phase_schedule(base);

    const char* axis_name = axis == SweepAxis::power ? "power"
                            : axis == SweepAxis::sensing_elements ? "sensing_elements"
                                                                  : "users";

    auto point_config = [&](double value) {
      ScenarioConfig point = base;
      switch (axis) {
        case SweepAxis::power:
          point.bs_power_budget_dbm = value;
          break;
        case SweepAxis::sensing_elements: {
          const int ms = static_cast<int>(std::lround(value));
          if (ms < 1 || ms > point.total_stars_elements() - 1)
            throw UsageError("range: sensing_elements values must keep both element kinds");
          point.sensing_element_count = ms;
          break;
        }
        case SweepAxis::users: {
          const int n = static_cast<int>(std::lround(value));
          if (n < 1) throw UsageError("range: user counts must be >= 1");
          point.users = detail::placed_users(n);
          break;
        }
      }
      return point;
    };

    // Process order: users descend (a larger design warm-starts the smaller
    // problem it remains feasible for), everything else ascends.
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (axis == SweepAxis::users) std::reverse(order.begin(), order.end());

    std::map<std::size_t, std::map<std::size_t, SweepRecord>> rows;
    std::map<std::size_t, OptimResult> warm;
    std::map<std::size_t, double> warm_power_w;
    bool all_feasible = true;
    for (std::size_t idx : order) {
      const double value = values[idx];
      ScenarioConfig point = point_config(value);
      const ChannelSet point_ch =
          axis == SweepAxis::users ? synthesize_channels(point, seed) : base_ch;
      for (std::size_t pi = 0; pi < phases.size(); ++pi) {
        ScenarioConfig phase_cfg = point;
        phase_cfg.phase = phases[pi].served_region;
        OptimResult res = detail::optimize_phase(phase_cfg, point_ch, seed);
        if (auto it = warm.find(pi); it != warm.end()) {
          OptimOptions opts;
          opts.warm_profile = it->second.profile;
          opts.warm_r = axis == SweepAxis::power
                            ? Eigen::MatrixXcd(it->second.r_x *
                                               (phase_cfg.bs_power_w() / warm_power_w[pi]))
                            : it->second.r_x;
          OptimResult warmed = detail::optimize_phase(phase_cfg, point_ch, seed, opts);
          if (detail::result_better(warmed, res)) res = warmed;
        }
        if (axis != SweepAxis::sensing_elements) {
          warm[pi] = res;
          warm_power_w[pi] = phase_cfg.bs_power_w();
        }
        all_feasible = all_feasible && res.feasible;
        rows[idx][pi] = detail::record_from_result(axis_name, value, phase_cfg, res, seed);
      }
    }

    std::vector<SweepRecord> flat;
    for (std::size_t i = 0; i < values.size(); ++i)
      for (std::size_t pi = 0; pi < phases.size(); ++pi) flat.push_back(rows[i][pi]);
    detail::write_file(out_path, detail::records_to_csv(flat));
    return all_feasible ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

/// STARS against the dual-RIS baseline on identical seeds, two rows per
/// phase (stars first).
inline int cmd_compare_baseline(const std::string& scenario_path, std::uint64_t seed,
                                const std::string& out_path) {
  try {
    const ScenarioConfig cfg = detail::load_scenario(scenario_path);
    const ChannelSet ch = synthesize_channels(cfg, seed);
    const std::vector<PhaseSpec> phases = phase_schedule(cfg);

    std::vector<SweepRecord> rows;
    bool all_feasible = true;
    for (std::size_t pi = 0; pi < phases.size(); ++pi) {
      ScenarioConfig phase_cfg = cfg;
      phase_cfg.phase = phases[pi].served_region;
      const OptimResult stars = detail::optimize_phase(phase_cfg, ch, seed);
      const OptimResult ris = optimize_baseline_dual_ris(phase_cfg, ch, seed);
      all_feasible = all_feasible && stars.feasible && ris.feasible;
      rows.push_back(detail::record_from_result("stars", static_cast<double>(pi), phase_cfg,
                                                stars, seed));
      rows.push_back(detail::record_from_result("dual_ris", static_cast<double>(pi), phase_cfg,
                                                ris, seed));
    }
    detail::write_file(out_path, detail::records_to_csv(rows));
    return all_feasible ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

/// Estimator-versus-bound harness: optimizes once on the scenario, then
/// sweeps the sensing SNR by scaling the sensing noise power, reporting the
/// azimuth root-CRB and the MUSIC RMSE per point (rows in ascending SNR).
inline int cmd_validate(const std::string& scenario_path, int trials, std::uint64_t seed,
                        const std::string& out_path, const std::string& range_spec = "0:24:4",
                        double grid_deg = 1.0) {
  try {
    if (trials < 10) throw UsageError("trials: must be >= 10");
    ScenarioConfig cfg = detail::load_scenario(scenario_path);
    const detail::RangeSpec range = detail::parse_range(range_spec);
    const ChannelSet ch = synthesize_channels(cfg, seed);
    const int target_id = phase_target_id(cfg);

    const OptimResult opt = alternating_optimize(cfg, ch, seed);

    // Mean echo power per capturing element; snr = echo / sigma^2.
    const detail::EchoModel model = detail::build_echo_model(cfg, ch, opt.profile, target_id);
    double illum = (model.w.transpose() * opt.r_x * model.w.conjugate()).value().real();
    for (std::size_t u = 0; u < model.c.size(); ++u)
      illum += model.user_power_w[u] * std::norm(model.c[u]);
    const double echo_per_element =
        std::norm(model.alpha) * model.a_s.squaredNorm() * illum / model.capture_count;
    if (!(echo_per_element > 0.0))
      throw SensingError("cmd_validate: scenario produces no echo energy");

    std::ostringstream os;
    os << "snr_db,root_crb,music_rmse\n";
    for (double snr_db : range.values()) {
      ScenarioConfig point = cfg;
      point.noise_power_sensing_dbm = watts_to_dbm(echo_per_element / db_to_pow(snr_db));
      const RootCrb crb = root_crb_degrees(
          fisher_information(point, ch, opt.profile, opt.r_x, target_id));
      const MonteCarloRmse rmse = monte_carlo_rmse(point, ch, opt.profile, opt.r_x, target_id,
                                                   trials, seed, grid_deg);
      os << detail::format_double(snr_db) << ',' << detail::format_double(crb.azimuth_deg) << ','
         << detail::format_double(rmse.rmse_az_deg) << '\n';
    }
    detail::write_file(out_path, os.str());
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace starsim
