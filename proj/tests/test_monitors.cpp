#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>

#include "robustmon/monitors.hpp"

using namespace robustmon;
using namespace robustmon::monitors;

namespace {

std::vector<apsim::SimTrace> small_corpus(int episodes = 5, std::uint64_t seed = 1) {
  apsim::CorpusConfig c;
  c.profiles = apsim::reference_profiles();
  c.episodes_per_profile = episodes;
  c.faults.mix = {{"none", 0.2}, {"sensor_bias", 0.3}, {"command_overwrite", 0.3}, {"command_scale", 0.2}};
  c.seed = seed;
  return apsim::generate_corpus(c).traces;
}

const Dataset& shared_dataset() {
  static const Dataset ds = build_dataset(small_corpus(), DatasetOptions{});
  return ds;
}

bool bit_equal(const neural::Network& a, const neural::Network& b) {
  const auto pa = a.params(), pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->size() != pb[i]->size()) return false;
    if (std::memcmp(pa[i]->data(), pb[i]->data(), sizeof(double) * static_cast<std::size_t>(pa[i]->size())) != 0) {
      return false;
    }
  }
  return true;
}

TrainConfig quick(int epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.mlp_hidden = {16, 8};
  c.lstm_hidden = {8, 4};
  return c;
}

}  // namespace

TEST(Labels, HorizonBoundary) {
  auto tr = small_corpus(1).front();
  std::fill(tr.hazard.begin(), tr.hazard.end(), apsim::Hazard::none);
  const long t = 50;
  tr.hazard[t] = apsim::Hazard::H1;  // at t itself: not in (t, t+T]
  EXPECT_EQ(window_label(tr, t, 6), 0);
  tr.hazard[t] = apsim::Hazard::none;
  tr.hazard[t + 6] = apsim::Hazard::H2;
  EXPECT_EQ(window_label(tr, t, 6), 1);
  EXPECT_EQ(window_label(tr, t, 5), 0);
  tr.hazard[t + 6] = apsim::Hazard::none;
  tr.hazard[t + 1] = apsim::Hazard::H1;
  EXPECT_EQ(window_label(tr, t, 1), 1);
}

TEST(Dataset, LabelsMatchRecount) {
  const auto corpus = small_corpus();
  const auto& ds = shared_dataset();
  std::map<std::string, const apsim::SimTrace*> by_id;
  for (const auto& tr : corpus) by_id[tr.id] = &tr;
  for (const auto* s : {&ds.train, &ds.val, &ds.test}) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& src = s->sources[i];
      const auto& tr = *by_id.at(src.trace_id);
      int want = 0;
      for (long k = src.t + 1; k <= src.t + 6; ++k) want |= tr.hazard[static_cast<std::size_t>(k)] != apsim::Hazard::none;
      ASSERT_EQ(s->labels[i], want) << src.trace_id << " t=" << src.t;
      ASSERT_EQ(src.hazard, static_cast<int>(tr.hazard[static_cast<std::size_t>(src.t)]));
    }
  }
}

TEST(Dataset, WindowCountsAndShapes) {
  const auto& ds = shared_dataset();
  const std::size_t per_trace = 288 - 6 - 6 + 1;
  EXPECT_EQ(ds.train.size() + ds.val.size() + ds.test.size(), 20 * per_trace);
  EXPECT_EQ(ds.train.x.cols(), 6 * kChannelCount);
  EXPECT_EQ(ds.train.x.rows(), static_cast<Eigen::Index>(ds.train.size()));
  EXPECT_GT(ds.train.positive_fraction(), 0.0);
  EXPECT_LT(ds.train.positive_fraction(), 1.0);
}

TEST(Dataset, NoEpisodeLeakage) {
  const auto& ds = shared_dataset();
  std::set<std::string> seen[3];
  const Split* splits[3] = {&ds.train, &ds.val, &ds.test};
  for (int k = 0; k < 3; ++k) {
    for (const auto& s : splits[k]->sources) seen[k].insert(s.trace_id);
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      for (const auto& id : seen[a]) EXPECT_FALSE(seen[b].count(id)) << id;
    }
  }
  // 5 episodes per profile: 3 / 1 / 1
  EXPECT_EQ(seen[0].size(), 12u);
  EXPECT_EQ(seen[1].size(), 4u);
  EXPECT_EQ(seen[2].size(), 4u);
}

TEST(Dataset, NormalizationFitOnTrainOnly) {
  const auto corpus = small_corpus();
  const auto& ds = shared_dataset();
  std::set<std::string> train_ids;
  for (const auto& s : ds.train.sources) train_ids.insert(s.trace_id);
  std::vector<Tensor2> steps;
  for (const auto& tr : corpus) {
    if (train_ids.count(tr.id)) steps.push_back(step_features(tr));
  }
  EXPECT_EQ(fit_normalization(steps), ds.spec.norm);
}

TEST(Dataset, SplitIsDeterministicAndSeedDependent) {
  const auto corpus = small_corpus();
  DatasetOptions o;
  const auto a = build_dataset(corpus, o), b = build_dataset(corpus, o);
  EXPECT_EQ(a.test.sources.front().trace_id, b.test.sources.front().trace_id);
  EXPECT_TRUE(a.train.x == b.train.x);
  std::set<std::string> ids_a, ids_c;
  for (const auto& s : a.test.sources) ids_a.insert(s.trace_id);
  bool differs = false;
  for (std::uint64_t seed = 2; seed < 10 && !differs; ++seed) {
    o.split_seed = seed;
    const auto c = build_dataset(corpus, o);
    ids_c.clear();
    for (const auto& s : c.test.sources) ids_c.insert(s.trace_id);
    differs = ids_c != ids_a;
  }
  EXPECT_TRUE(differs);
}

TEST(Dataset, TrainStrideThinsTrainingOnly) {
  const auto corpus = small_corpus();
  DatasetOptions o;
  o.train_stride = 3;
  const auto ds = build_dataset(corpus, o);
  const auto& full = shared_dataset();
  EXPECT_EQ(ds.test.size(), full.test.size());
  EXPECT_EQ(ds.val.size(), full.val.size());
  EXPECT_EQ(ds.train.size(), 12u * ((277 + 2) / 3));
  EXPECT_EQ(ds.spec.norm, full.spec.norm);
}

TEST(Dataset, RejectsBadOptions) {
  const auto corpus = small_corpus(1);
  DatasetOptions o;
  o.train_fraction = 0.9;
  o.val_fraction = 0.1;
  EXPECT_THROW(build_dataset(corpus, o), InvalidArgument);
  EXPECT_THROW(build_dataset({}, DatasetOptions{}), InvalidArgument);
  o = {};
  o.window_len = 1;
  EXPECT_THROW(build_dataset(corpus, o), InvalidArgument);
}

TEST(Normalization, RoundTrip) {
  const auto& ds = shared_dataset();
  Tensor2 x = ds.test.x;
  ds.spec.norm.denormalize(x);
  ds.spec.norm.normalize(x);
  EXPECT_LT((x - ds.test.x).cwiseAbs().maxCoeff(), 1e-9);
  for (int c = 0; c < kChannelCount; ++c) EXPECT_NEAR(ds.spec.norm.decode(c, ds.spec.norm.encode(c, 3.25)), 3.25, 1e-12);
  const auto j = to_json(ds.spec.norm);
  EXPECT_EQ(normalization_from_json(nlohmann::json::parse(j.dump())), ds.spec.norm);
}

TEST(Normalization, ConstantChannelGetsUnitScale) {
  Tensor2 s = Tensor2::Zero(4, kChannelCount);
  s.col(kBgSensed) << 1, 2, 3, 4;
  const auto n = fit_normalization({s});
  EXPECT_EQ(n.stddev[kIob], 1.0);
  EXPECT_NEAR(n.stddev[kBgSensed], std::sqrt(1.25), 1e-12);
}

TEST(Features, OneHotActionsAndSlopes) {
  const auto tr = small_corpus(1).front();
  const auto f = step_features(tr);
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    EXPECT_DOUBLE_EQ(f.block(t, kActionU1, 1, 4).sum(), 1.0);
    if (t > 0) {
      EXPECT_DOUBLE_EQ(f(t, kBgSlope), tr.sensed_bg[t] - tr.sensed_bg[t - 1]);
    }
  }
  EXPECT_EQ(f(0, kBgSlope), 0.0);
}

TEST(Verdict, ThresholdTieIsUnsafe) {
  EXPECT_TRUE(MonitorVerdict::from_probability(0.5).unsafe());
  EXPECT_FALSE(MonitorVerdict::from_probability(0.4999999).unsafe());
}

TEST(RuleMonitor, MatchesRuleEngineOnRawWindows) {
  const auto corpus = small_corpus();
  const auto& ds = shared_dataset();
  const auto m = make_rule_monitor(ds.spec);
  const auto pred = predicted_classes(m, ds.test.x);
  // the dataset indicator is the rule verdict computed on the raw window
  std::size_t mismatch = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) mismatch += pred[i] != ds.test.indicators[i];
  EXPECT_LE(mismatch, pred.size() / 1000);  // only denormalization rounding at dead-band edges
  EXPECT_THROW(predicted_classes(m, Tensor2::Zero(2, 5)), ShapeError);
}

TEST(Training, ToySeparableReachesPerfectAccuracy) {
  FeatureSpec spec;
  spec.window_len = 2;
  spec.norm.mean.assign(kChannelCount, 0.0);
  spec.norm.stddev.assign(kChannelCount, 1.0);
  Split s;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const int N = 400;
  s.x.resize(N, spec.input_size());
  for (int i = 0; i < N; ++i) {
    for (int k = 0; k < spec.input_size(); ++k) s.x(i, k) = n(rng);
    const int y = i % 2;
    s.x(i, 0) = y ? 2.0 + std::abs(n(rng)) : -2.0 - std::abs(n(rng));
    s.labels.push_back(y);
    s.indicators.push_back(y);
    s.sources.push_back({"toy", i, 0});
  }
  for (auto kind : {neural::NetKind::mlp, neural::NetKind::lstm}) {
    auto cfg = quick(30);
    cfg.lr = 0.01;
    const auto m = train_network(kind, spec, s, std::nullopt, 1, cfg);
    const auto pred = predicted_classes(m, s.x);
    EXPECT_EQ(pred, s.labels) << neural::to_string(kind);
  }
}

TEST(Training, ZeroSemanticWeightIsBitExact) {
  const auto& ds = shared_dataset();
  for (auto kind : {neural::NetKind::mlp, neural::NetKind::lstm}) {
    const auto a = train_network(kind, ds.spec, ds.train, std::nullopt, 9, quick());
    const auto b = train_network(kind, ds.spec, ds.train, neural::SemanticLossConfig{0.0, 1}, 9, quick());
    EXPECT_TRUE(bit_equal(*a.network, *b.network)) << neural::to_string(kind);
    const auto c = train_network(kind, ds.spec, ds.train, neural::SemanticLossConfig{0.5, 1}, 9, quick());
    EXPECT_FALSE(bit_equal(*a.network, *c.network)) << neural::to_string(kind);
  }
}

TEST(Training, DeterministicInSeed) {
  const auto& ds = shared_dataset();
  TrainingHistory h1, h2;
  const auto a = train_network(neural::NetKind::mlp, ds.spec, ds.train, std::nullopt, 4, quick(), &h1);
  const auto b = train_network(neural::NetKind::mlp, ds.spec, ds.train, std::nullopt, 4, quick(), &h2);
  EXPECT_TRUE(bit_equal(*a.network, *b.network));
  EXPECT_EQ(h1.epoch_loss, h2.epoch_loss);
  EXPECT_EQ(h1.epoch_loss.size(), 2u);
  const auto c = train_network(neural::NetKind::mlp, ds.spec, ds.train, std::nullopt, 5, quick());
  EXPECT_FALSE(bit_equal(*a.network, *c.network));
}

TEST(Training, ClassWeightsAreInverseFrequency) {
  const auto w = inverse_frequency_weights({0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(w[0], 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(w[1], 2.0);
  EXPECT_EQ(inverse_frequency_weights({1, 1}), (std::vector<double>{1.0, 1.0}));
}

TEST(Training, RejectsEmptySplit) {
  const auto& ds = shared_dataset();
  EXPECT_THROW(train_network(neural::NetKind::mlp, ds.spec, Split{}, std::nullopt, 1, quick()), InvalidArgument);
}

TEST(Checkpoint, RoundTripPredictsIdentically) {
  const auto& ds = shared_dataset();
  for (auto kind : {MonitorKind::rule, MonitorKind::mlp_custom, MonitorKind::lstm}) {
    const auto m = train_monitor(kind, ds, 2, quick(1));
    const auto back = monitor_from_checkpoint(nlohmann::json::parse(checkpoint_json(m).dump()));
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.spec.norm, m.spec.norm);
    EXPECT_EQ(predict_proba(back, ds.test.x), predict_proba(m, ds.test.x)) << to_string(kind);
    EXPECT_EQ(checkpoint_json(back).dump(), checkpoint_json(m).dump());
  }
  auto bad = checkpoint_json(make_rule_monitor(ds.spec));
  bad["format"] = "other";
  EXPECT_THROW(monitor_from_checkpoint(bad), InvalidArgument);
}

TEST(Persistence, SplitCsvRoundTripIsExact) {
  const auto& ds = shared_dataset();
  const auto back = split_from_csv(split_to_csv(ds.val), ds.spec.input_size());
  EXPECT_TRUE(back.x == ds.val.x);
  EXPECT_EQ(back.labels, ds.val.labels);
  EXPECT_EQ(back.indicators, ds.val.indicators);
  ASSERT_EQ(back.sources.size(), ds.val.sources.size());
  for (std::size_t i = 0; i < back.sources.size(); ++i) {
    EXPECT_EQ(back.sources[i].trace_id, ds.val.sources[i].trace_id);
    EXPECT_EQ(back.sources[i].t, ds.val.sources[i].t);
    EXPECT_EQ(back.sources[i].hazard, ds.val.sources[i].hazard);
  }
  EXPECT_THROW(split_from_csv("nope\n", 54), InvalidArgument);
}

TEST(MonitorKind, NamesRoundTrip) {
  for (auto k : {MonitorKind::rule, MonitorKind::mlp, MonitorKind::lstm, MonitorKind::mlp_custom,
                 MonitorKind::lstm_custom}) {
    EXPECT_EQ(monitor_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(monitor_kind_from_string("svm"), InvalidArgument);
}
