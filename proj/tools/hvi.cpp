#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "hvi/config.hpp"
#include "hvi/error.hpp"
#include "hvi/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical variational bounds: experiments"};
  std::string experiment, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> k, m;
  std::optional<std::string> out, checkpoint, estimator;
  bool quiet = false;

  app.add_option("experiment", experiment, "toy-laplace | snr | vae-train | vae-eval | bounds-check | jackknife-study")
      ->required();
  app.add_option("--config", config_path, "key = value settings file")->required();
  app.add_option("--seed", seed, "base seed");
  app.add_option("--k", k, "number of auxiliary samples K");
  app.add_option("--m", m, "number of outer samples M");
  app.add_option("--out", out, "CSV output path (default: stdout)");
  app.add_option("--checkpoint", checkpoint, "parameter checkpoint to write (vae-train) or read (vae-eval)");
  app.add_option("--estimator", estimator, "autodiff | dreg");
  app.add_flag("--quiet", quiet, "no progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    hvi::ExperimentConfig cfg = hvi::ExperimentConfig::defaults(experiment);
    cfg.apply(hvi::read_key_values(config_path));
    // Flags win over the file.
    hvi::KeyValues flags;
    if (seed) flags["seed"] = std::to_string(*seed);
    if (k) flags["K"] = std::to_string(*k);
    if (m) flags["M"] = std::to_string(*m);
    if (out) flags["output"] = *out;
    if (checkpoint) flags["checkpoint"] = *checkpoint;
    if (estimator) flags["estimator"] = *estimator;
    cfg.apply(flags);
    if (k && experiment == "vae-train") cfg.k_schedule = {{0, *k}};
    cfg.validate();

    hvi::Progress progress;
    if (!quiet) progress = [](const std::string& s) { std::cerr << s << '\n'; };
    const auto rows = hvi::run_experiment(cfg, progress);
    if (cfg.output.empty()) {
      hvi::write_csv(std::cout, rows);
    } else {
      std::ofstream f(cfg.output);
      if (!f) throw hvi::ConfigError("cannot write '" + cfg.output + "'");
      hvi::write_csv(f, rows);
    }
  } catch (const hvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const hvi::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
