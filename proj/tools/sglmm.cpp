// sglmm simulate|fit|predict|compare --config <path> [--method sivi|mh|hmc] [--out <dir>]

#include <CLI11.hpp>

#include <iostream>

#include "sglmm/cli.hpp"
#include "sglmm/error.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace sglmm;
  CLI::App app{"Spatial GLMMs by semi-implicit variational inference, with MCMC baselines"};
  app.set_version_flag("--version", std::string(SGLMM_VERSION));
  app.require_subcommand(1);

  std::string config_path;
  std::string method;
  std::string out;
  for (const char* name : {"simulate", "fit", "predict", "compare"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--out", out, "output directory; overrides the config");
    if (std::string(name) == "fit") {
      sub->add_option("--method", method, "sivi, mh or hmc")->check(CLI::IsMember({"sivi", "mh", "hmc"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    cli::RunConfig cfg = cli::load_config(config_path);
    if (!out.empty()) cfg.out = std::filesystem::absolute(out).lexically_normal();
    if (!method.empty()) cfg.method = *cli::parse_method(method);

    if (command == "simulate") {
      cli::cmd_simulate(cfg);
    } else if (command == "fit") {
      cli::cmd_fit(cfg);
    } else if (command == "predict") {
      cli::cmd_predict(cfg);
    } else {
      cli::cmd_compare(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
