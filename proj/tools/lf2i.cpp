// lf2i: run likelihood-free frequentist inference experiments from a config.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lf2i/core/parallel.hpp"
#include "lf2i/io/config.hpp"
#include "lf2i/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kNumeric = 3, kCheck = 4 };

fs::path output_dir(const lf2i::io::ExperimentConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("LF2I_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / cfg.name;
}

void print_list(const char* label, const std::vector<std::string>& v) {
  std::cout << label << ':';
  for (const auto& s : v) std::cout << ' ' << s;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Likelihood-free frequentist inference: confidence sets, p-values and coverage diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  std::size_t workers = 0;
  app.add_option("--workers", workers, "Cap on worker threads (0 = all cores)");

  struct StageCmd {
    CLI::App* cmd;
    std::string target;
  };
  std::vector<StageCmd> stage_cmds;
  bool fresh = false;
  for (const char* name : {"simulate", "train-odds", "calibrate", "invert", "pvalues", "diagnose"}) {
    auto* cmd = app.add_subcommand(name, std::string("Run stages up to ") + name + ", reusing completed ones");
    cmd->add_option("--config,-c", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out,-o", out_flag, "Output directory");
    cmd->add_flag("--fresh", fresh, "Recompute every stage instead of reusing the manifest");
    stage_cmds.push_back({cmd, name});
  }

  bool resume = false, check = false;
  auto* pipe = app.add_subcommand("pipeline", "Run every enabled stage");
  pipe->add_option("--config,-c", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  pipe->add_option("--out,-o", out_flag, "Output directory");
  pipe->add_flag("--resume", resume, "Skip stages whose recorded outputs are intact");
  pipe->add_flag("--check", check, "Evaluate the config's check block; exit 4 on failure");

  std::vector<std::size_t> B_values;
  auto* select = app.add_subcommand("select-model", "Held-out cross-entropy over classifiers and sample sizes");
  select->add_option("--config,-c", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  select->add_option("--out,-o", out_flag, "Output directory");
  select->add_option("--B", B_values, "Training sizes (overrides selection.B_values)");

  auto* baselines = app.add_subcommand("compare-baselines", "Coverage under MC, chi-square and QR cutoffs");
  baselines->add_option("--config,-c", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  baselines->add_option("--out,-o", out_flag, "Output directory");

  auto* validate = app.add_subcommand("validate", "Parse a config and print it with defaults resolved");
  validate->add_option("--config,-c", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  lf2i::worker_limit().store(workers);

  try {
    const auto cfg = lf2i::io::load_config(config_path);
    if (validate->parsed()) {
      std::cout << lf2i::io::config_to_json(cfg).dump(2) << '\n';
      return kOk;
    }
    const fs::path dir = output_dir(cfg, out_flag);

    if (select->parsed()) {
      const auto rep = lf2i::pipeline::select_model(cfg, {}, B_values);
      lf2i::pipeline::write_selection(rep, dir);
      std::cout << "chosen: " << rep.chosen_name << " B=" << rep.chosen_B << '\n' << "output: " << dir.string() << '\n';
      return kOk;
    }
    if (baselines->parsed()) {
      const auto rows = lf2i::pipeline::compare_baselines(cfg);
      lf2i::pipeline::write_baselines(rows, dir);
      for (const auto& r : rows) {
        const auto s = lf2i::summary_json(r.report);
        std::cout << r.method << ": UC " << s.at("UC_pct").get<double>() << "% CC " << s.at("CC_pct").get<double>()
                  << "% OC " << s.at("OC_pct").get<double>() << "%\n";
      }
      std::cout << "output: " << dir.string() << '\n';
      return kOk;
    }

    lf2i::pipeline::RunOptions opts;
    opts.out_dir = dir;
    if (pipe->parsed()) {
      opts.target = "pipeline";
      opts.resume = resume;
      opts.check = check;
    } else {
      for (const auto& s : stage_cmds)
        if (s.cmd->parsed()) opts.target = s.target;
      opts.resume = !fresh;
    }
    const auto res = lf2i::pipeline::run_pipeline(cfg, opts);
    print_list("ran", res.ran);
    print_list("skipped", res.skipped);
    std::cout << "output: " << res.dir.string() << '\n';
    if (res.check) {
      std::cout << "check: " << (res.check->pass ? "PASS" : "FAIL") << '\n';
      if (!res.check->pass) {
        std::cerr << res.check->detail.dump(2) << '\n';
        return kCheck;
      }
    }
    return kOk;
  } catch (const lf2i::io::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
}
