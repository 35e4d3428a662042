// Command-line driver: hbubble <validate|gamma-scan|reduce|solve|multiplicity> --config FILE
#include "hbubble/commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

int main(int argc, char** argv) {
  using namespace hbubble;
  CLI::App app{"Perturbed H-bubbles: reduction, critical-point search and diagnostics"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  int threads = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "run configuration file (required)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides the config)");
  app.add_option("--threads", threads, "worker threads for scans (overrides the config)")->check(CLI::Range(1, 256));
  app.add_flag("--verbose,-v", verbose, "log every search step");
  for (const char* name : {"validate", "gamma-scan", "reduce", "solve", "multiplicity"}) app.add_subcommand(name)->fallthrough();
  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();
  if (config_path.empty()) {
    std::cerr << "--config is required\n";
    return 2;
  }

  RunConfig cfg;
  try {
    cfg = load_config(config_path);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (threads > 0) cfg.threads = threads;
    validate_config(cfg);
  } catch (const std::exception& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return 2;
  }

  Log log{&std::cerr, verbose};
  const auto t0 = std::chrono::steady_clock::now();
  CommandResult r;
  try {
    if (cmd == "validate") r = cmd_validate(cfg, log);
    else if (cmd == "gamma-scan") r = cmd_gamma_scan(cfg, log);
    else if (cmd == "reduce") r = cmd_reduce(cfg, log);
    else if (cmd == "solve") r = cmd_solve(cfg, log);
    else r = cmd_multiplicity(cfg, log);
  } catch (const std::exception& e) {
    std::cerr << cmd << " failed: " << e.what() << "\n";
    r.ok = false;
    r.report = {{"command", cmd}, {"error", e.what()}, {"ok", false}};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    write_manifest(cfg, cmd, r, secs);
  } catch (const std::exception& e) {
    std::cerr << "cannot write manifest: " << e.what() << "\n";
    return 3;
  }
  std::cout << r.report.dump() << "\n";
  std::cerr << cmd << (r.ok ? ": ok" : ": FAILED") << " (" << secs << " s)\n";
  return r.ok ? 0 : 1;
}
