#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tacsync/harness.hpp"

namespace {

std::string subcommand_list() {
  std::string s;
  for (const auto& n : tacsync::harness::subcommands()) s += (s.empty() ? "" : ", ") + n;
  return s;
}

void optional_path(CLI::App& app, const char* flag, std::optional<std::filesystem::path>& dest, const char* help) {
  app.add_option_function<std::string>(flag, [&dest](const std::string& v) { dest = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  using tacsync::harness::RunOptions;

  CLI::App app{"Synchronized multi-sensor tactile pipeline: bus timing, rendering, calibration, grasp control"};
  app.footer("Subcommands: " + subcommand_list() +
             "\nExit codes: 0 ok, 1 failure, 2 unknown subcommand or bad usage, 3 malformed config, 4 missing input.");

  RunOptions opt;
  std::string config;
  int sensor = -1;
  app.add_option("subcommand", opt.subcommand, "What to run")->required();
  app.add_option("-c,--config", config, "JSON config file (built-in defaults when omitted)");
  app.add_option("--set", opt.overrides, "Override a config field, e.g. --set bus.n_sensors=5 (repeatable)")
      ->take_all()
      ->expected(1);
  optional_path(app, "-o,--output", opt.output, "Output directory (default: config output_dir)");
  optional_path(app, "-i,--input", opt.input, "Dataset directory or TSR1 capture, depending on the subcommand");
  optional_path(app, "-m,--model", opt.model, "TCM1 model file");
  optional_path(app, "--reference", opt.reference, "Reference-sensor capture for transfer");
  optional_path(app, "--target", opt.target, "Target-sensor capture for transfer");
  app.add_option("--sensor", sensor, "Sensor index into the config's sensor list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return tacsync::harness::kUnknownSubcommand;
  }

  opt.config_path = config;
  if (sensor >= 0) opt.sensor = sensor;

  const auto res = tacsync::harness::run_subcommand(opt);
  if (res.exit_code != tacsync::harness::kOk) {
    std::cerr << "tacsync: " << res.error << '\n';
    if (res.exit_code == tacsync::harness::kUnknownSubcommand)
      std::cerr << "valid subcommands: " << subcommand_list() << '\n';
    return res.exit_code;
  }
  std::cout << res.summary.dump() << '\n';
  return 0;
}
