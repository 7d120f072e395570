// fllab: command-line front end for the federated threat laboratory.
//
//   fllab train  --config presets/fig9.cfg --set seed=3
//   fllab sweep  --config presets/fig9.cfg
//   fllab report --dir results/fig9
//
// Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3 I/O.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fllab/config.h"
#include "fllab/errors.h"
#include "fllab/experiments.h"

namespace {

constexpr int kConfigExit = 1;
constexpr int kNumericExit = 2;
constexpr int kIoExit = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning threat laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string report_dir;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "run a federated training scenario"},
      {"leak", "run gradient-leakage reconstruction trials"},
      {"poison", "run a poisoned federated scenario"},
      {"detect", "run forensics over a recorded trace"},
      {"sweep", "run a scenario once per sweep.values entry"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--set", overrides, "key=value override (repeatable)");
    subs.push_back(sub);
  }
  CLI::App* report = app.add_subcommand("report", "fold result CSVs into summaries and plot data");
  report->add_option("--dir", report_dir, "directory to fold (default: output root)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (report->parsed()) {
      fllab::run_report(report_dir.empty() ? fllab::default_output_root() : std::filesystem::path(report_dir), std::cout);
      return 0;
    }
    for (CLI::App* sub : subs) {
      if (!sub->parsed()) continue;
      fllab::Config cfg = fllab::Config::load(config_path);
      for (const auto& o : overrides) cfg.apply_override(o);
      fllab::run_command(sub->get_name(), cfg, std::cout);
    }
  } catch (const fllab::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoExit;
  } catch (const fllab::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericExit;
  } catch (const fllab::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
  return 0;
}
