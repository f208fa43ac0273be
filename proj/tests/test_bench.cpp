#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "robustmon/config.hpp"
#include "robustmon/pipeline.hpp"

using namespace robustmon;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_json() {
  return nlohmann::json::parse(R"({
    "output_dir": "unused",
    "corpus": {
      "profiles": ["adult-1", {"id": "custom", "basal_glucose": 125, "basal_insulin": 1.1,
                               "insulin_sensitivity": 42, "carb_ratio": 10}],
      "episodes_per_profile": 5,
      "horizon": 96,
      "seed": 3,
      "fault_mix": {"none": 0.4, "sensor_bias": 0.3, "command_overwrite": 0.3},
      "fault_start": [10, 30],
      "fault_duration": [20, 40]
    },
    "features": {"window_len": 4, "T": 3, "delta": 3, "split_seed": 2},
    "models": [
      {"kind": "rule"},
      {"kind": "mlp", "epochs": 1, "hidden": [8]},
      {"kind": "lstm", "epochs": 1, "hidden": [4]},
      {"kind": "mlp_custom", "epochs": 1, "hidden": [8], "w": 0.5},
      {"kind": "lstm_custom", "epochs": 1, "hidden": [4], "w": 0.5}
    ],
    "seeds": [1, 2],
    "perturbations": {
      "gaussian": {"sigma": [0.5], "seed": 4},
      "fgsm": {"epsilon": [0.1, 0.2]},
      "blackbox": {"models": ["lstm"], "epsilon": [0.2], "epochs": 1, "hidden": [8], "seed": 6}
    }
  })");
}

std::string config_error_path(const nlohmann::json& j) {
  try {
    config::config_from_json(j);
  } catch (const ConfigError& e) {
    return e.path;
  }
  return "<no error>";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("robustmon_bench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

pipeline::Run make_run(const config::ExperimentConfig& c, const fs::path& root, std::ostream& log, bool force = false) {
  return pipeline::Run(c, root, force, log);
}

int exit_status(const std::string& cmd) {
  const int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, fs::file_time_type> mtimes(const fs::path& root) {
  std::map<std::string, fs::file_time_type> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = e.last_write_time();
  }
  return out;
}

}  // namespace

TEST(Config, UnknownKeysReportPointerPaths) {
  auto j = tiny_json();
  j["corpus"]["bogus"] = 1;
  EXPECT_EQ(config_error_path(j), "/corpus/bogus");
  j = tiny_json();
  j["models"][1]["depth"] = 3;
  EXPECT_EQ(config_error_path(j), "/models/1/depth");
  j = tiny_json();
  j["perturbations"]["fgsm"]["eps"] = {0.1};
  EXPECT_EQ(config_error_path(j), "/perturbations/fgsm/eps");
  j = tiny_json();
  j["extra"] = true;
  EXPECT_EQ(config_error_path(j), "/extra");
  j = tiny_json();
  j["corpus"]["profiles"][1]["weight"] = 70;
  EXPECT_EQ(config_error_path(j), "/corpus/profiles/1/weight");
}

TEST(Config, SeedsMustBeExplicit) {
  for (const auto& [section, key] : std::vector<std::pair<std::string, std::string>>{
           {"corpus", "seed"}, {"features", "split_seed"}}) {
    auto j = tiny_json();
    j[section].erase(key);
    EXPECT_EQ(config_error_path(j), "/" + section + "/" + key);
  }
  auto j = tiny_json();
  j.erase("seeds");
  EXPECT_EQ(config_error_path(j), "/seeds");
  j = tiny_json();
  j["perturbations"]["gaussian"].erase("seed");
  EXPECT_EQ(config_error_path(j), "/perturbations/gaussian/seed");
  j = tiny_json();
  j["perturbations"]["blackbox"].erase("seed");
  EXPECT_EQ(config_error_path(j), "/perturbations/blackbox/seed");
}

TEST(Config, TypeAndRangeErrors) {
  auto j = tiny_json();
  j["corpus"]["episodes_per_profile"] = "many";
  EXPECT_EQ(config_error_path(j), "/corpus/episodes_per_profile");
  j = tiny_json();
  j["seeds"] = {1, -2};
  EXPECT_EQ(config_error_path(j), "/seeds/1");
  j = tiny_json();
  j["seeds"] = {1, 1};
  EXPECT_EQ(config_error_path(j), "/seeds");
  j = tiny_json();
  j["models"][0]["kind"] = "svm";
  EXPECT_EQ(config_error_path(j), "/models/0/kind");
  j = tiny_json();
  j["models"][1]["w"] = 0.5;  // baseline kinds take no semantic weight
  EXPECT_EQ(config_error_path(j), "/models/1/w");
  j = tiny_json();
  j["perturbations"]["fgsm"]["epsilon"] = {0.1, -0.2};
  EXPECT_EQ(config_error_path(j), "/perturbations/fgsm/epsilon");
  j = tiny_json();
  j["perturbations"]["blackbox"]["models"] = {"rule"};
  EXPECT_EQ(config_error_path(j), "/perturbations/blackbox/models/0");
  j = tiny_json();
  j["corpus"]["fault_mix"] = {{"none", 0.5}, {"sensor_bias", 0.2}};
  EXPECT_EQ(config_error_path(j), "/corpus/fault_mix");
  j = tiny_json();
  j["corpus"]["fault_mix"]["meteor"] = 0.0;
  EXPECT_EQ(config_error_path(j), "/corpus/fault_mix/meteor");
  j = tiny_json();
  j["corpus"]["profiles"] = {"adult-9"};
  EXPECT_EQ(config_error_path(j), "/corpus/profiles/0");
  j = tiny_json();
  j["features"]["train_fraction"] = 0.9;
  j["features"]["val_fraction"] = 0.1;
  EXPECT_EQ(config_error_path(j), "/features/train_fraction");
  EXPECT_THROW(config::load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, RoundTripIsLossless) {
  const auto c = config::config_from_json(tiny_json());
  const auto j1 = config::to_json(c);
  const auto c2 = config::config_from_json(nlohmann::json::parse(j1.dump()));
  EXPECT_EQ(config::to_json(c2).dump(), j1.dump());
  EXPECT_EQ(pipeline::config_digest(c), pipeline::config_digest(c2));
  // built-in profiles named in the input are written out as full objects
  EXPECT_TRUE(j1["corpus"]["profiles"][0].is_object());
  EXPECT_EQ(j1["corpus"]["profiles"][0]["id"], "adult-1");

  const auto ref = config::load_config(ROBUSTMON_SOURCE_DIR "/configs/reference.json");
  const auto rj = config::to_json(ref);
  EXPECT_EQ(config::to_json(config::config_from_json(nlohmann::json::parse(rj.dump()))).dump(), rj.dump());
  EXPECT_EQ(ref.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(ref.corpus.episodes_per_profile, 50);
  EXPECT_EQ(ref.corpus.profiles.size(), 4u);
}

TEST(Config, KeysIsolateStages) {
  const auto c = config::config_from_json(tiny_json());
  auto d = c;
  d.features.delta = 5;
  EXPECT_EQ(pipeline::train_key(c), pipeline::train_key(d));
  EXPECT_EQ(pipeline::attack_key(c), pipeline::attack_key(d));
  EXPECT_NE(pipeline::evaluate_key(c), pipeline::evaluate_key(d));
  auto e = c;
  e.fgsm.epsilon = {0.3};
  EXPECT_EQ(pipeline::train_key(c), pipeline::train_key(e));
  EXPECT_NE(pipeline::attack_key(c), pipeline::attack_key(e));
  auto f = c;
  f.corpus.seed = 99;
  EXPECT_NE(pipeline::simulate_key(c), pipeline::simulate_key(f));
  EXPECT_NE(pipeline::train_key(c), pipeline::train_key(f));
}

TEST(Matrix, BinaryRoundTripIsExact) {
  const auto dir = scratch("matrix");
  neural::Tensor2 x(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::sin(static_cast<double>(i)) * 1e-7 + i;
  write_file((dir / "m.bin").string(), pipeline::matrix_bytes(x, {{"kind", "test"}}));
  EXPECT_TRUE(pipeline::read_matrix((dir / "m.bin").string()) == x);
  write_file((dir / "bad.bin").string(), "{\"format\":\"robustmon-matrix/1\",\"rows\":2,\"cols\":2}\nxx");
  EXPECT_THROW(pipeline::read_matrix((dir / "bad.bin").string()), ShapeError);
  fs::remove_all(dir);
}

TEST(Pipeline, StagesCacheAndManifestIsComplete) {
  const auto root = scratch("cache");
  const auto cfg = config::config_from_json(tiny_json());
  std::ostringstream log;
  {
    auto run = make_run(cfg, root, log);
    const auto res = pipeline::reproduce(run);
    EXPECT_EQ(res.criteria.size(), 11u);
    for (const auto& s : pipeline::stage_names()) EXPECT_EQ(run.status[s], pipeline::StageStatus::ran) << s;
  }
  const auto before = mtimes(root);

  // manifest completeness: every file except the manifest itself is listed with its digest
  const auto manifest = nlohmann::json::parse(read_file((root / "manifest.json").string()));
  std::map<std::string, std::string> listed;
  listed[manifest["config"]["path"]] = manifest["config"]["sha256"];
  for (const auto& st : manifest["stages"]) {
    listed[st["record"]["path"]] = st["record"]["sha256"];
    for (const auto& o : st["outputs"]) listed[o["path"]] = o["sha256"];
  }
  for (const auto& [rel, _] : before) {
    if (rel == "manifest.json") continue;
    ASSERT_TRUE(listed.count(rel)) << rel << " missing from manifest";
    EXPECT_EQ(listed[rel], sha256_file((root / rel).string())) << rel;
  }
  EXPECT_EQ(listed.size() + 1, before.size());
  EXPECT_EQ(manifest["config_digest"], pipeline::config_digest(cfg));

  // rerun: nothing recomputed
  std::ostringstream log2;
  {
    auto run = make_run(cfg, root, log2);
    pipeline::reproduce(run);
    for (const auto& s : pipeline::stage_names()) EXPECT_EQ(run.status[s], pipeline::StageStatus::cached) << s;
  }
  EXPECT_NE(log2.str().find("all stages up to date"), std::string::npos);
  auto after = mtimes(root);
  after.erase("manifest.json");
  after.erase("config.json");
  for (const auto& [rel, t] : after) EXPECT_EQ(t, before.at(rel)) << rel;

  // a metric-only change re-runs evaluation, not training
  auto changed = cfg;
  changed.features.delta = 1;
  {
    auto run = make_run(changed, root, log2);
    pipeline::reproduce(run);
    EXPECT_EQ(run.status["train"], pipeline::StageStatus::cached);
    EXPECT_EQ(run.status["attack"], pipeline::StageStatus::cached);
    EXPECT_EQ(run.status["evaluate"], pipeline::StageStatus::ran);
  }

  // --force recomputes, and the recomputed report is byte-identical
  const auto report = read_file((root / "reports/robustness.json").string());
  {
    auto run = make_run(changed, root, log2, true);
    pipeline::run_stage(run, "evaluate");
    EXPECT_EQ(run.status["evaluate"], pipeline::StageStatus::ran);
  }
  EXPECT_EQ(read_file((root / "reports/robustness.json").string()), report);
  fs::remove_all(root);
}

TEST(Pipeline, MissingOrTamperedUpstreamNamesTheStage) {
  const auto root = scratch("missing");
  const auto cfg = config::config_from_json(tiny_json());
  std::ostringstream log;
  auto run = make_run(cfg, root, log);
  try {
    pipeline::run_stage(run, "train");
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_EQ(e.stage, "simulate");
  }
  pipeline::run_stage(run, "simulate");
  pipeline::run_stage(run, "train");
  // tampering with a corpus file makes simulate stale
  write_file((root / "corpus/index.csv").string(), "trace_id,profile_id,file\n");
  try {
    pipeline::run_stage(run, "attack");  // train is still current
    pipeline::run_stage(run, "train");
    FAIL() << "expected MissingArtifactError";
  } catch (const MissingArtifactError& e) {
    EXPECT_EQ(e.stage, "simulate");
  }
  fs::remove_all(root);
}

TEST(Pipeline, ZeroPerturbationSweepGivesCleanMetricsOnly) {
  const auto root = scratch("clean");
  auto j = tiny_json();
  j.erase("perturbations");
  const auto cfg = config::config_from_json(j);
  std::ostringstream log;
  auto run = make_run(cfg, root, log);
  for (const auto& s : {"simulate", "train", "attack", "evaluate"}) pipeline::run_stage(run, s);
  const auto reports = nlohmann::json::parse(read_file((root / "reports/robustness.json").string()));
  ASSERT_EQ(reports.size(), 1u + 4u * 2u);
  for (const auto& r : reports) {
    EXPECT_EQ(r["perturbation"]["kind"], "none");
    EXPECT_EQ(r["robustness_error"], 0.0);
    EXPECT_EQ(r["clean"], r["perturbed"]);
  }
  EXPECT_FALSE(fs::exists(root / "attacks"));
  fs::remove_all(root);
}

TEST(Pipeline, TwoFreshRunsAreByteIdentical) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto cfg = config::config_from_json(tiny_json());
  std::ostringstream log;
  auto ra = make_run(cfg, a, log);
  auto rb = make_run(cfg, b, log);
  pipeline::reproduce(ra);
  pipeline::reproduce(rb);
  for (const char* f : {"reports/robustness.json", "reports/acceptance.json", "checkpoints/lstm-s2.json",
                        "attacks/blackbox/lstm-s1/eps_0.2.bin", "corpus/index.csv"}) {
    EXPECT_EQ(sha256_file((a / f).string()), sha256_file((b / f).string())) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const std::string cli = ROBUSTMON_CLI_PATH;
  write_file((dir / "bad.json").string(), R"({"corpus": {"seed": 1}, "features": {"split_seed": 1},
    "models": [{"kind": "rule"}], "seeds": [1], "colour": "red"})");
  EXPECT_EQ(exit_status(cli + " simulate --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(exit_status(cli + " simulate --config " + (dir / "absent.json").string()), 2);
  EXPECT_EQ(exit_status(cli + " simulate"), 2);  // --config is required

  auto j = tiny_json();
  j["models"] = nlohmann::json::array({{{"kind", "rule"}}, {{"kind", "mlp"}, {"epochs", 1}, {"hidden", {8}}}});
  j["perturbations"] = {{"gaussian", {{"sigma", {0.5}}, {"seed", 1}}}};
  write_file((dir / "ok.json").string(), j.dump());
  const std::string args = " --config " + (dir / "ok.json").string() + " --out " + (dir / "run").string();
  EXPECT_EQ(exit_status(cli + " evaluate" + args), 3);
  EXPECT_EQ(exit_status(cli + " simulate" + args), 0);
  EXPECT_EQ(exit_status(cli + " train" + args + " --seed 7"), 0);
  EXPECT_TRUE(fs::exists(dir / "run/checkpoints/mlp-s7.json"));
  EXPECT_FALSE(fs::exists(dir / "run/checkpoints/mlp-s1.json"));
  // this config lacks the monitors the acceptance criteria compare
  EXPECT_EQ(exit_status(cli + " reproduce" + args + " --seed 7 --check"), 4);
  EXPECT_EQ(exit_status(cli + " reproduce" + args + " --seed 7"), 0);
  fs::remove_all(dir);
}
