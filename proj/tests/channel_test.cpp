#include "starsim/channel.hpp"

#include <gtest/gtest.h>

using namespace starsim;

TEST(PathlossGain, ReferenceDistance) {
  EXPECT_NEAR(pathloss_gain(1.0, 2.0, -30.0), 1e-3, 1e-15);
  EXPECT_NEAR(pathloss_gain(1.0, 3.7, -30.0), 1e-3, 1e-15);
}

TEST(PathlossGain, TenMetersExponentTwo) {
  EXPECT_NEAR(pathloss_gain(10.0, 2.0, -30.0), 1e-5, 1e-17);
}

TEST(PathlossGain, DoublingDistanceQuartersGain) {
  const double g1 = pathloss_gain(7.0, 2.0, -30.0);
  const double g2 = pathloss_gain(14.0, 2.0, -30.0);
  EXPECT_NEAR(g1 / g2, 4.0, 1e-12);
}

TEST(PathlossGain, RejectsNonPositiveDistance) {
  EXPECT_THROW(pathloss_gain(0.0, 2.0, -30.0), DomainError);
  EXPECT_THROW(pathloss_gain(-1.0, 2.0, -30.0), DomainError);
}

TEST(SynthesizeChannels, DeterministicForFixedSeed) {
  const ScenarioConfig cfg = default_paper_scenario();
  const ChannelSet a = synthesize_channels(cfg, 123);
  const ChannelSet b = synthesize_channels(cfg, 123);
  EXPECT_EQ(a.bs_to_stars, b.bs_to_stars);
  ASSERT_EQ(a.user_to_stars.size(), b.user_to_stars.size());
  for (std::size_t u = 0; u < a.user_to_stars.size(); ++u)
    EXPECT_EQ(a.user_to_stars[u], b.user_to_stars[u]);
  const ChannelSet c = synthesize_channels(cfg, 124);
  EXPECT_NE(a.bs_to_stars, c.bs_to_stars);
}

TEST(SynthesizeChannels, HugeKappaDegeneratesToRankOneLos) {
  ScenarioConfig cfg = default_paper_scenario();
  cfg.rician_kappa = 1e12;
  const ChannelSet ch = synthesize_channels(cfg, 5);
  const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(ch.bs_to_stars);
  const Eigen::VectorXd sv = svd.singularValues();
  EXPECT_GT(sv(0), 0.0);
  for (int i = 1; i < sv.size(); ++i) EXPECT_LT(sv(i), sv(0) * 1e-12);
  EXPECT_EQ(ch.bs_to_stars, bs_to_stars_los(cfg));
}

TEST(SynthesizeChannels, LosColumnNormsAreSqrtMTimesAmplitude) {
  const ScenarioConfig cfg = default_paper_scenario();
  const Eigen::MatrixXcd los = bs_to_stars_los(cfg);
  const double amp = std::sqrt(pathloss_gain(cfg.bs_placement.distance_m,
                                             cfg.pathloss.exp_bs_stars, cfg.pathloss.ref_gain_db));
  const double expected = std::sqrt(static_cast<double>(cfg.total_stars_elements())) * amp;
  for (int c = 0; c < los.cols(); ++c) EXPECT_NEAR(los.col(c).norm(), expected, 1e-12 * expected);
}

TEST(SynthesizeChannels, TargetSteeringHasCommonModulus) {
  const ScenarioConfig cfg = default_paper_scenario();
  const ChannelSet ch = synthesize_channels(cfg, 9);
  for (std::size_t k = 0; k < ch.target_steering.size(); ++k) {
    const auto& d = ch.target_steering[k];
    const double amp = std::sqrt(pathloss_gain(cfg.targets[k].distance_m,
                                               cfg.pathloss.exp_stars_target,
                                               cfg.pathloss.ref_gain_db));
    for (int m = 0; m < d.size(); ++m) EXPECT_NEAR(std::abs(d(m)), amp, 1e-12 * amp);
  }
}

// Monte Carlo oracle: E||G||_F^2 = M * N_t * pathloss_gain.
TEST(SynthesizeChannels, FrobeniusEnergyMatchesPathloss) {
  ScenarioConfig cfg = default_paper_scenario();
  cfg.users.clear();  // only the BS link matters here; keep the test fast
  cfg.targets = {{342.0, 30.0, 10.0, {1.0, 0.0}, Region::reflection}};
  const int n_seeds = 10000;
  double acc = 0.0;
  for (int s = 0; s < n_seeds; ++s)
    acc += synthesize_channels(cfg, static_cast<std::uint64_t>(s)).bs_to_stars.squaredNorm();
  acc /= n_seeds;
  const double pl = pathloss_gain(cfg.bs_placement.distance_m, cfg.pathloss.exp_bs_stars,
                                  cfg.pathloss.ref_gain_db);
  const double expected = cfg.total_stars_elements() * cfg.bs_antennas * pl;
  EXPECT_NEAR(acc / expected, 1.0, 0.02);
}

TEST(SynthesizeChannels, UserLinkEnergyMatchesPathloss) {
  ScenarioConfig cfg = default_paper_scenario();
  cfg.users = {{30.0, 30.0, 20.0, Region::reflection, 15.0}};
  cfg.targets = {{342.0, 30.0, 10.0, {1.0, 0.0}, Region::reflection}};
  const int n_seeds = 10000;
  double acc = 0.0;
  for (int s = 0; s < n_seeds; ++s)
    acc += synthesize_channels(cfg, static_cast<std::uint64_t>(s)).user_to_stars[0].squaredNorm();
  acc /= n_seeds;
  const double pl =
      pathloss_gain(20.0, cfg.pathloss.exp_user_stars, cfg.pathloss.ref_gain_db);
  EXPECT_NEAR(acc / (cfg.total_stars_elements() * pl), 1.0, 0.02);
}

TEST(TargetEchoGain, IsRcsTimesOneWayAmplitude) {
  const ScenarioConfig cfg = default_paper_scenario();
  const cdouble alpha = target_echo_gain(cfg, 0);
  const double amp = std::sqrt(pathloss_gain(10.0, 2.0, -30.0));
  const double rcs = std::abs(cfg.targets[0].rcs_gain);
  EXPECT_NEAR(std::abs(alpha), rcs * amp, 1e-15);
}

TEST(ChannelDump, JsonRoundTrip) {
  ScenarioConfig cfg = default_paper_scenario();
  cfg.bs_antennas = 3;
  cfg.stars_rows = 2;
  cfg.stars_cols = 2;
  cfg.sensing_element_count = 1;
  const ChannelSet ch = synthesize_channels(cfg, 77);
  const ChannelSet back = channels_from_json(channels_to_json(ch));
  EXPECT_EQ(back.realization_seed, ch.realization_seed);
  EXPECT_TRUE(back.bs_to_stars.isApprox(ch.bs_to_stars, 0.0));
  for (std::size_t u = 0; u < ch.user_to_stars.size(); ++u)
    EXPECT_TRUE(back.user_to_stars[u].isApprox(ch.user_to_stars[u], 0.0));
}
