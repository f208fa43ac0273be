// robustmon: experiment pipeline driver.
//
//   robustmon simulate|train|attack|evaluate|reproduce --config <path>
//             [--force] [--out <dir>] [--seed <n>] [--check]
//
// Exit codes: 0 success, 1 other error, 2 config error, 3 missing upstream
// artifact, 4 acceptance failure (reproduce --check).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "robustmon/config.hpp"
#include "robustmon/error.hpp"
#include "robustmon/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool check = false;
};

int run_command(const std::string& cmd, const Options& opt) {
  using namespace robustmon;
  auto cfg = config::load_config(opt.config);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  // --seed narrows the training seed list to one seed
  if (opt.seed) cfg.seeds = {*opt.seed};
  pipeline::Run run(cfg, cfg.output_dir, opt.force, std::cout);
  std::filesystem::create_directories(run.root());

  if (cmd != "reproduce") {
    pipeline::run_stage(run, cmd);
    pipeline::write_manifest(run);
    return 0;
  }
  const auto res = pipeline::reproduce(run);
  std::cout << "acceptance report (" << (run.root() / "reports/acceptance.json").string() << "):\n";
  for (const auto& c : res.criteria) {
    std::cout << "  [" << c.status << "] " << c.id << ". " << c.name << ": " << c.detail << "\n";
  }
  std::cout << (res.passed ? "acceptance: PASS" : "acceptance: FAIL") << "\n";
  return opt.check && !res.passed ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness benchmark for safety monitors of a simulated artificial pancreas"};
  app.set_version_flag("--version", std::string(robustmon::pipeline::kToolVersion));
  app.require_subcommand(1);

  Options opt;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "experiment config (JSON)")->required();
    sub->add_flag("--force", opt.force, "recompute even if outputs are up to date");
    sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", opt.seed, "train with this single seed instead of the configured list");
    return sub;
  };
  add("simulate", "generate the trace corpus");
  add("train", "build the dataset and train every monitor");
  add("attack", "write Gaussian, white-box and black-box perturbed test sets");
  add("evaluate", "score every monitor on clean and perturbed test sets");
  add("reproduce", "run all stages and the acceptance report")
      ->add_flag("--check", opt.check, "exit with status 4 if an acceptance criterion fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run_command(cmd, opt);
  } catch (const robustmon::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const robustmon::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
