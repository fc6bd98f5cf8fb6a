#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "cavsim/cavsim.h"

namespace {

int report_error(cavsim_status s, const std::string& what) {
  std::fprintf(stderr, "error: %s: %s (%s)\n", what.c_str(), cavsim_last_error(), cavsim_status_name(s));
  return s == CAVSIM_ERR_SCHEMA || s == CAVSIM_ERR_NOT_FOUND ? 2 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disordered cavity QED simulator"};
  app.set_version_flag("--version", std::string(cavsim_version()));
  app.require_subcommand(1);

  std::string config_path, out_dir, profile;
  std::uint64_t seed = 0;
  int threads = -1;
  bool check = false;
  std::string experiment;

  for (std::size_t i = 0; i < cavsim_experiment_count(); ++i) {
    const std::string name = cavsim_experiment_name(i);
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " recipe");
    sub->add_option("--config", config_path, "config file (commented JSON or a run manifest)");
    sub->add_flag("--check", check, "evaluate acceptance checks; exit status reflects them");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out_dir, "output directory (default out/<experiment>)");
    sub->add_option("--threads", threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    sub->add_option("--profile", profile, "desk or full (or any profile defined in the config)");
    sub->callback([&experiment, name] { experiment = name; });
  }
  std::string validate_path;
  CLI::App* val = app.add_subcommand("validate", "validate a config file");
  val->add_option("path", validate_path, "config file")->required();
  CLI::App* dump = app.add_subcommand("defaults", "print the resolved default config");

  CLI11_PARSE(app, argc, argv);

  if (val->parsed()) {
    cavsim_config* cfg = nullptr;
    cavsim_status s = cavsim_config_load(validate_path.c_str(), &cfg);
    if (s != CAVSIM_OK) {
      std::printf("1 violation\n%s\n", cavsim_last_error());
      return 2;
    }
    const char* report = nullptr;
    const std::size_t n = cavsim_config_validate(cfg, &report);
    std::printf("%zu violation%s\n%s", n, n == 1 ? "" : "s", report);
    cavsim_config_free(cfg);
    return n == 0 ? 0 : 2;
  }
  if (dump->parsed()) {
    cavsim_config* cfg = nullptr;
    cavsim_config_default(&cfg);
    std::printf("%s\n", cavsim_config_json(cfg));
    cavsim_config_free(cfg);
    return 0;
  }

  cavsim_config* cfg = nullptr;
  cavsim_status s = config_path.empty() ? cavsim_config_default(&cfg) : cavsim_config_load(config_path.c_str(), &cfg);
  if (s != CAVSIM_OK) return report_error(s, "loading config");
  CLI::App* sub = app.get_subcommand(experiment);
  if (sub->count("--seed")) cavsim_config_set_seed(cfg, seed);
  if (threads >= 0) cavsim_config_set_threads(cfg, threads);
  if (!profile.empty()) cavsim_config_set_profile(cfg, profile.c_str());
  const char* report = nullptr;
  if (cavsim_config_validate(cfg, &report) != 0) {
    std::fprintf(stderr, "invalid config:\n%s", report);
    cavsim_config_free(cfg);
    return 2;
  }

  cavsim_run* run = nullptr;
  s = cavsim_run_experiment(cfg, experiment.c_str(), check ? 1 : 0, &run);
  cavsim_config_free(cfg);
  if (s != CAVSIM_OK) return report_error(s, "running " + experiment);
  if (out_dir.empty()) out_dir = "out/" + experiment;
  s = cavsim_run_write(run, out_dir.c_str());
  if (s != CAVSIM_OK) {
    cavsim_run_free(run);
    return report_error(s, "writing outputs");
  }
  std::printf("%s: %zu files written to %s (%.1f s)\n", experiment.c_str(), cavsim_run_file_count(run),
              out_dir.c_str(), cavsim_run_seconds(run));
  for (std::size_t i = 0; i < cavsim_run_check_count(run); ++i) {
    const char *id, *desc, *detail;
    int passed, info;
    cavsim_run_check(run, i, &id, &desc, &passed, &info, &detail);
    std::printf("%s %-20s %s: %s\n", info ? "INFO" : (passed ? "PASS" : "FAIL"), id, desc, detail);
  }
  const int rc = check && !cavsim_run_passed(run) ? 1 : 0;
  cavsim_run_free(run);
  return rc;
}
