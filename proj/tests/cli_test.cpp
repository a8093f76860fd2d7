#include "starsim/cli.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace starsim;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("starsim_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Small scenario so the command paths stay fast.
std::string write_small_scenario(const TempDir& dir, double qos = 0.5) {
  ScenarioConfig cfg = default_paper_scenario();
  cfg.bs_antennas = 4;
  cfg.stars_rows = 2;
  cfg.stars_cols = 3;
  cfg.sensing_element_count = 2;
  cfg.snapshots = 16;
  cfg.qos_rate = qos;
  cfg.noise_power_bs_dbm = -110.0;  // toy-array feasibility at 300 m
  cfg.users = {{30.0, 30.0, 20.0, Region::reflection, 23.0},
               {210.0, 30.0, 20.0, Region::transmission, 23.0}};
  const std::string path = dir.file("scenario.json");
  detail::write_file(path, serialize_scenario(cfg));
  return path;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST(CmdRun, TwoPhasesTwoRowsAndJson) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir);
  const std::string out = dir.file("run.csv");
  const int rc = cmd_run(scenario, 7, out);
  EXPECT_EQ(rc, 0);
  const std::string csv = detail::read_file(out);
  EXPECT_EQ(count_lines(csv), 3);  // header + one row per phase
  EXPECT_EQ(csv.substr(0, std::string(kSweepCsvHeader).size()), kSweepCsvHeader);
  const auto json = nlohmann::json::parse(detail::read_file(out + ".json"));
  EXPECT_EQ(json.at("phases").size(), 2u);
  EXPECT_EQ(json.at("seed").get<std::uint64_t>(), 7u);
}

TEST(CmdRun, RerunIsByteIdentical) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir);
  const std::string out_a = dir.file("a.csv");
  const std::string out_b = dir.file("b.csv");
  ASSERT_EQ(cmd_run(scenario, 7, out_a), 0);
  ASSERT_EQ(cmd_run(scenario, 7, out_b), 0);
  EXPECT_EQ(detail::read_file(out_a), detail::read_file(out_b));
  EXPECT_EQ(detail::read_file(out_a + ".json"), detail::read_file(out_b + ".json"));
}

TEST(CmdRun, ImpossibleQosExitsTwo) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir, 50.0);
  const int rc = cmd_run(scenario, 7, dir.file("run.csv"));
  EXPECT_EQ(rc, 2);
  const std::string csv = detail::read_file(dir.file("run.csv"));
  EXPECT_NE(csv.find("false"), std::string::npos);
}

TEST(CmdRun, BadScenarioExitsOne) {
  TempDir dir;
  detail::write_file(dir.file("bad.json"), "{\"sensing_element_count\": 999}");
  EXPECT_EQ(cmd_run(dir.file("bad.json"), 1, dir.file("out.csv")), 1);
  EXPECT_EQ(cmd_run(dir.file("missing.json"), 1, dir.file("out.csv")), 1);
}

TEST(CmdSweep, PowerRowAccounting) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir);
  const std::string out = dir.file("sweep.csv");
  const int rc = cmd_sweep(scenario, SweepAxis::power, "20:40:5", 3, out);
  EXPECT_EQ(rc, 0);
  const std::string csv = detail::read_file(out);
  EXPECT_EQ(count_lines(csv), 1 + 5 * 2);  // header + 5 points x 2 phases
}

TEST(CmdSweep, InvalidRangeIsUsageError) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir);
  EXPECT_EQ(cmd_sweep(scenario, SweepAxis::power, "40:20:5", 3, dir.file("o.csv")), 1);
  EXPECT_EQ(cmd_sweep(scenario, SweepAxis::power, "20:40:-5", 3, dir.file("o.csv")), 1);
  EXPECT_EQ(cmd_sweep(scenario, SweepAxis::power, "garbage", 3, dir.file("o.csv")), 1);
}

TEST(CmdSweep, SensingElementsRespectsTotal) {
  TempDir dir;
  const std::string scenario = write_small_scenario(dir);
  const std::string out = dir.file("elems.csv");
  const int rc = cmd_sweep(scenario, SweepAxis::sensing_elements, "1:5:2", 3, out);
  EXPECT_NE(rc, 1);  // 0 or 2 depending on feasibility, never a usage error
  const std::string csv = detail::read_file(out);
  EXPECT_EQ(count_lines(csv), 1 + 3 * 2);
  // values above M-1 are rejected
  EXPECT_EQ(cmd_sweep(scenario, SweepAxis::sensing_elements, "2:8:2", 3, out), 1);
}

TEST(CmdCompareBaseline, PairedRows) {
  TempDir dir;
  ScenarioConfig cfg = default_paper_scenario();
  cfg.bs_antennas = 4;
  cfg.stars_rows = 2;
  cfg.stars_cols = 2;
  cfg.sensing_element_count = 2;
  cfg.snapshots = 16;
  cfg.noise_power_bs_dbm = -110.0;
  cfg.users = {{30.0, 30.0, 20.0, Region::reflection, 23.0},
               {210.0, 30.0, 20.0, Region::transmission, 23.0}};
  const std::string scenario = dir.file("cmp.json");
  detail::write_file(scenario, serialize_scenario(cfg));
  const std::string out = dir.file("cmp.csv");
  const int rc = cmd_compare_baseline(scenario, 5, out);
  EXPECT_NE(rc, 1);
  const std::string csv = detail::read_file(out);
  EXPECT_EQ(count_lines(csv), 1 + 2 * 2);  // 2 systems x 2 phases
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);  // header
  std::getline(is, line);
  EXPECT_EQ(line.rfind("stars,", 0), 0u);
  std::getline(is, line);
  EXPECT_EQ(line.rfind("dual_ris,", 0), 0u);
  // identical seed recorded on every row (fair comparison)
  while (std::getline(is, line))
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "5");
}

TEST(CmdValidate, RowsSortedByAscendingSnr) {
  TempDir dir;
  ScenarioConfig cfg = default_paper_scenario();
  cfg.bs_antennas = 4;
  cfg.stars_rows = 2;
  cfg.stars_cols = 3;
  cfg.sensing_element_count = 4;
  cfg.sensing_pattern = SensingPattern::block;
  cfg.snapshots = 16;
  cfg.noise_power_bs_dbm = -110.0;
  cfg.users = {{30.0, 30.0, 20.0, Region::reflection, 23.0},
               {210.0, 30.0, 20.0, Region::transmission, 23.0}};
  cfg.targets[0].azimuth_deg = 341.6;
  const std::string scenario = dir.file("val.json");
  detail::write_file(scenario, serialize_scenario(cfg));
  const std::string out = dir.file("val.csv");
  const int rc = cmd_validate(scenario, 10, 2, out, "0:8:4", 2.0);
  EXPECT_EQ(rc, 0);
  std::istringstream is(detail::read_file(out));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "snr_db,root_crb,music_rmse");
  double prev = -1e300;
  int rows = 0;
  while (std::getline(is, line)) {
    const double snr = std::stod(line.substr(0, line.find(',')));
    EXPECT_GT(snr, prev);
    prev = snr;
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_EQ(cmd_validate(scenario, 5, 2, out, "0:8:4", 2.0), 1);  // trials < 10
}

TEST(CmdValidate, DeterministicAcrossThreadCounts) {
  TempDir dir;
  ScenarioConfig cfg = default_paper_scenario();
  cfg.bs_antennas = 4;
  cfg.stars_rows = 2;
  cfg.stars_cols = 3;
  cfg.sensing_element_count = 4;
  cfg.sensing_pattern = SensingPattern::block;
  cfg.snapshots = 16;
  cfg.noise_power_bs_dbm = -110.0;
  cfg.users = {{30.0, 30.0, 20.0, Region::reflection, 23.0},
               {210.0, 30.0, 20.0, Region::transmission, 23.0}};
  const std::string scenario = dir.file("val.json");
  detail::write_file(scenario, serialize_scenario(cfg));
  const std::string out_a = dir.file("a.csv");
  const std::string out_b = dir.file("b.csv");
  ASSERT_EQ(cmd_validate(scenario, 12, 2, out_a, "0:4:4", 2.0), 0);
  setenv("STARS_ISAC_THREADS", "1", 1);
  ASSERT_EQ(cmd_validate(scenario, 12, 2, out_b, "0:4:4", 2.0), 0);
  unsetenv("STARS_ISAC_THREADS");
  EXPECT_EQ(detail::read_file(out_a), detail::read_file(out_b));
}

TEST(SweepAxisParsing, NamesMapAndReject) {
  EXPECT_EQ(sweep_axis_from_string("power"), SweepAxis::power);
  EXPECT_EQ(sweep_axis_from_string("sensing_elements"), SweepAxis::sensing_elements);
  EXPECT_EQ(sweep_axis_from_string("users"), SweepAxis::users);
  EXPECT_THROW(sweep_axis_from_string("bandwidth"), UsageError);
}

TEST(CsvFormat, HeaderIsTheRecordFieldList) {
  EXPECT_STREQ(kSweepCsvHeader,
               "sweep_name,sweep_value,phase,implementation,root_crb_az_deg,"
               "root_crb_el_deg,min_rate,feasible,outer_iterations,seed");
}
