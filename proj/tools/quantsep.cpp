// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "quantsep/quantsep.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace quantsep;
  CLI::App app{"Train, quantize and evaluate a multi-channel speech separation network"};
  std::string command, config_path, out, model_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool verbose = false;
  app.add_option("command", command, "Stage to run")
      ->required()
      ->check(CLI::IsMember(pipeline::commands()));
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--seed", seed, "Override the training / search seed");
  app.add_option("--jobs", jobs, "Maximum worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Output directory (default: the config's 'out')");
  app.add_option("--model", model_path, "evaluate: score this checkpoint (.json stem) or packed (.qsep) file");
  app.add_flag("-v,--verbose", verbose, "Progress on stderr");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const std::string text = read_file(config_path);
    auto cfg = config::RunConfig::from_json(read_json(config_path));
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (!out.empty()) cfg.out = out;
    cfg.verbose = cfg.verbose || verbose;
    pipeline::Runner runner(cfg, cfg.out);
    if (!model_path.empty()) {
      if (command != "evaluate") throw ConfigError("--model is only valid with the evaluate command");
      const json r = runner.evaluate_file(model_path);
      std::cout << "mean SI-SNR " << r.at("mean").at("si_snr").get<double>() << " dB (improvement "
                << r.at("mean").at("improvement").get<double>() << " dB)\n";
    } else {
      runner.run(command);
    }
    write_json((runner.out() / "run.json").string(), runner.run_record(command, config_path, text));
    if (command == "report" || command == "pipeline")
      std::cout << read_file((runner.out() / "reports" / "summary.csv").string());
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
