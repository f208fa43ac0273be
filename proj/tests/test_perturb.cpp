#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "robustmon/perturb.hpp"

using namespace robustmon;
using namespace robustmon::perturb;
using monitors::kChannelCount;

namespace {

const monitors::Dataset& shared_dataset() {
  static const monitors::Dataset ds = [] {
    apsim::CorpusConfig c;
    c.profiles = apsim::reference_profiles();
    c.episodes_per_profile = 5;
    c.faults.mix = {{"none", 0.2}, {"sensor_bias", 0.3}, {"command_overwrite", 0.3}, {"command_scale", 0.2}};
    c.seed = 2;
    return monitors::build_dataset(apsim::generate_corpus(c).traces, monitors::DatasetOptions{});
  }();
  return ds;
}

const monitors::MonitorModel& shared_mlp() {
  static const monitors::MonitorModel m = [] {
    monitors::TrainConfig cfg;
    cfg.epochs = 4;
    cfg.mlp_hidden = {32, 16};
    return monitors::train_monitor(monitors::MonitorKind::mlp, shared_dataset(), 1, cfg);
  }();
  return m;
}

std::vector<int> continuous_channels() {
  return {monitors::kBgSensed, monitors::kIob, monitors::kBgSlope, monitors::kIobSlope, monitors::kInsulinRate};
}

bool is_action_col(Eigen::Index k) { return k % kChannelCount >= monitors::kActionU1; }

std::vector<double> per_sample_ce(const monitors::MonitorModel& m, const Tensor2& x, const std::vector<int>& y) {
  const auto p = monitors::predict_proba(m, x);
  std::vector<double> out;
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back(-std::log(y[i] ? p[i] : 1.0 - p[i]));
  return out;
}

}  // namespace

TEST(Gaussian, StatisticsAndMasking) {
  const int L = 6;
  const Tensor2 x = Tensor2::Zero(20000, L * kChannelCount);
  GaussianSpec g;
  g.sigma_scale = 0.5;
  g.seed = 11;
  const auto y = gaussian_perturb(x, g, L);
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    const auto col = y.col(k);
    if (k % kChannelCount >= monitors::kInsulinRate) {
      EXPECT_EQ(col.cwiseAbs().maxCoeff(), 0.0) << "column " << k;
      continue;
    }
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().mean());
    EXPECT_NEAR(mean, 0.0, 0.02) << k;
    EXPECT_NEAR(sd, 0.5, 0.02) << k;
  }
}

TEST(Gaussian, DeterministicPerSeed) {
  const auto& x = shared_dataset().test.x;
  GaussianSpec g;
  g.seed = 3;
  EXPECT_TRUE(gaussian_perturb(x, g, 6) == gaussian_perturb(x, g, 6));
  auto h = g;
  h.seed = 4;
  EXPECT_FALSE(gaussian_perturb(x, g, 6) == gaussian_perturb(x, h, 6));
}

TEST(Gaussian, TinySigmaIsNearIdentity) {
  const auto& ds = shared_dataset();
  GaussianSpec g;
  g.sigma_scale = 1e-12;
  const auto y = gaussian_perturb(ds.test.x, g, 6);
  EXPECT_LT((y - ds.test.x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(monitors::predicted_classes(shared_mlp(), y), monitors::predicted_classes(shared_mlp(), ds.test.x));
}

TEST(Gaussian, RejectsBadSpecs) {
  const Tensor2 x = Tensor2::Zero(2, 6 * kChannelCount);
  GaussianSpec g;
  g.sigma_scale = 0.0;
  EXPECT_THROW(gaussian_perturb(x, g, 6), InvalidArgument);
  g.sigma_scale = 0.1;
  g.target_channels = {monitors::kActionU2};
  EXPECT_THROW(gaussian_perturb(x, g, 6), InvalidArgument);
  g.target_channels = monitors::sensor_channels();
  EXPECT_THROW(gaussian_perturb(x, g, 5), ShapeError);
}

TEST(Fgsm, HandExample) {
  monitors::FeatureSpec spec;
  spec.window_len = 1;
  spec.norm.mean.assign(kChannelCount, 0.0);
  spec.norm.stddev.assign(kChannelCount, 1.0);
  Tensor2 x = Tensor2::Zero(1, kChannelCount);
  x(0, monitors::kActionU4) = 1.0;
  Tensor2 grad(1, kChannelCount);
  grad << 1.0, -2.0, 0.0, 3.0, -0.5, 0.3, 0.2, 0.1, -0.4;
  FgsmSpec f;
  f.epsilon = 0.1;
  const auto r = fgsm_apply(x, grad, f, spec);
  EXPECT_DOUBLE_EQ(r.perturbed(0, 0), 0.1);
  EXPECT_DOUBLE_EQ(r.perturbed(0, 1), -0.1);
  EXPECT_DOUBLE_EQ(r.perturbed(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(r.perturbed(0, 3), 0.1);
  EXPECT_DOUBLE_EQ(r.perturbed(0, 4), -0.1);
  // the one-hot block snaps back to the original vertex
  for (int a = 0; a < 4; ++a) EXPECT_EQ(r.perturbed(0, monitors::kActionU1 + a), x(0, monitors::kActionU1 + a));
  EXPECT_TRUE(r.delta == r.perturbed - x);
}

TEST(Fgsm, ReprojectionPicksNearestVertex) {
  monitors::FeatureSpec spec;
  spec.window_len = 1;
  spec.norm.mean.assign(kChannelCount, 0.0);
  spec.norm.stddev.assign(kChannelCount, 1.0);
  Tensor2 x = Tensor2::Zero(1, kChannelCount);
  x(0, monitors::kActionU1) = 1.0;
  Tensor2 grad = Tensor2::Zero(1, kChannelCount);
  grad(0, monitors::kActionU1) = -1.0;
  grad(0, monitors::kActionU3) = 1.0;
  FgsmSpec f;
  f.epsilon = 0.6;  // u1 -> 0.4, u3 -> 0.6: u3 is nearer
  const auto r = fgsm_apply(x, grad, f, spec);
  EXPECT_EQ(r.perturbed(0, monitors::kActionU1), 0.0);
  EXPECT_EQ(r.perturbed(0, monitors::kActionU3), 1.0);
}

TEST(Fgsm, BudgetAndComponents) {
  const auto& ds = shared_dataset();
  const auto& m = shared_mlp();
  FgsmSpec f;
  f.epsilon = 0.05;
  const auto r = fgsm_whitebox(m, ds.test.x, ds.test.labels, f);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < r.delta.rows(); ++i) {
    for (Eigen::Index k = 0; k < r.delta.cols(); ++k) {
      const double d = std::abs(r.delta(i, k));
      if (is_action_col(k)) {
        ASSERT_EQ(d, 0.0);  // eps < 0.5 in raw units never changes the vertex
      } else {
        ASSERT_TRUE(d == 0.0 || std::abs(d - 0.05) < 1e-12);
        worst = std::max(worst, d);
      }
    }
  }
  EXPECT_NEAR(worst, 0.05, 1e-12);
}

TEST(Fgsm, SmallStepIncreasesLoss) {
  const auto& ds = shared_dataset();
  const auto& m = shared_mlp();
  FgsmSpec f;
  f.epsilon = 0.01;
  f.target_channels = continuous_channels();
  const auto r = fgsm_whitebox(m, ds.test.x, ds.test.labels, f);
  const auto before = per_sample_ce(m, ds.test.x, ds.test.labels);
  const auto after = per_sample_ce(m, r.perturbed, ds.test.labels);
  std::size_t up = 0, moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (r.delta.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff() == 0.0) continue;
    ++moved;
    up += after[i] > before[i] ? 1 : 0;
  }
  ASSERT_GT(moved, 0u);
  EXPECT_GE(static_cast<double>(up) / static_cast<double>(moved), 0.95);
}

TEST(Fgsm, RuleMonitorHasNoGradients) {
  const auto& ds = shared_dataset();
  const auto rule = monitors::make_rule_monitor(ds.spec);
  EXPECT_THROW(fgsm_whitebox(rule, ds.test.x, ds.test.labels, FgsmSpec{}), UnsupportedError);
  FgsmSpec bad;
  bad.epsilon = -1;
  EXPECT_THROW(fgsm_whitebox(shared_mlp(), ds.test.x, ds.test.labels, bad), InvalidArgument);
}

TEST(Blackbox, SubstituteAgreesWithTarget) {
  const auto& ds = shared_dataset();
  const auto& target = shared_mlp();
  SubstituteSpec s;
  s.hidden = {32, 16};
  s.epochs = 6;
  s.seed = 5;
  const auto sub = train_substitute(monitors::query_interface(target), ds.spec, ds.train, ds.val.x, s);
  EXPECT_EQ(sub.queries, ds.train.size());
  EXPECT_GE(sub.agreement, 0.9);
  FgsmSpec f;
  f.epsilon = 0.2;
  const auto r = fgsm_blackbox(sub, ds.test.x, ds.test.labels, f);
  EXPECT_EQ(r.perturbed.rows(), ds.test.x.rows());
  // transferred examples still respect the budget
  for (Eigen::Index k = 0; k < r.delta.cols(); ++k) {
    if (!is_action_col(k)) EXPECT_LE(r.delta.col(k).cwiseAbs().maxCoeff(), 0.2 + 1e-12);
  }
}

TEST(Blackbox, QueryBudgetIsHonored) {
  const auto& ds = shared_dataset();
  std::size_t asked = 0;
  monitors::PredictFn counting = [&](const Tensor2& x) {
    asked += static_cast<std::size_t>(x.rows());
    return monitors::predicted_classes(shared_mlp(), x);
  };
  SubstituteSpec s;
  s.hidden = {8};
  s.epochs = 1;
  s.query_budget = 500;
  const Tensor2 no_holdout(0, ds.spec.input_size());
  const auto sub = train_substitute(counting, ds.spec, ds.train, no_holdout, s);
  EXPECT_EQ(sub.queries, 500u);
  EXPECT_EQ(asked, 500u);
  EXPECT_THROW(train_substitute(counting, ds.spec, monitors::Split{}, no_holdout, s), InvalidArgument);
}

TEST(Persistence, PerturbedCsvCarriesMetadata) {
  const auto& ds = shared_dataset();
  const auto csv = perturbed_split_csv(ds.val, ds.val.x, "fgsm", 0.1, 3);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_NE(header.find(",perturbation_kind,magnitude,seed"), std::string::npos);
  const auto back = monitors::split_from_csv(csv, ds.spec.input_size());
  EXPECT_TRUE(back.x == ds.val.x);
  EXPECT_THROW(perturbed_split_csv(ds.val, ds.val.x.topRows(ds.val.x.rows() - 1), "fgsm", 0.1, 3), ShapeError);
}
