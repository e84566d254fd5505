#pragma once
// Command-line front end: run configuration, data files and the four
// commands (simulate, fit, predict, compare).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sglmm/eval.hpp"
#include "sglmm/glmm.hpp"
#include "sglmm/mcmc.hpp"
#include "sglmm/sivi.hpp"
#include "sglmm/spatial.hpp"

namespace sglmm::cli {

using Json = nlohmann::ordered_json;

enum class Method { sivi, mh, hmc };

std::string_view to_string(Method m);
std::optional<Method> parse_method(std::string_view s);

struct BasisBlock {
  int m = 20;
  MaternParams matern{};
  PriorCovMode prior_cov = PriorCovMode::identity;
  std::optional<double> jitter;  // default: 1e-8 * marg_var
};

struct PriorBlock {
  std::optional<std::vector<double>> beta_mean;
  std::optional<std::vector<double>> beta_var;
  double sigma_mean = 1.0;
  double sigma_var = 1.0;
  // Family-specific hyperparameters; required for the family in use.
  std::optional<double> tau_mean, tau_var;
  std::optional<double> kappa_shape, kappa_rate;
  std::optional<double> alpha_mean, alpha_var;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out;
  std::filesystem::path data;
  std::filesystem::path fit_dir;
  std::optional<Family> family;
  bool intercept = false;

  SyntheticScenario scenario{};
  bool has_scenario = false;
  bool grid = false;

  BasisBlock basis{};
  PriorBlock priors{};
  FixedParams fixed{};

  SiviConfig sivi{};
  int posterior_draws = 1000;
  MhConfig mh{};
  HmcConfig hmc{};
  int bins = 50;
  bool parallel = false;

  Method method = Method::sivi;
};

// Parses a config object; relative paths are resolved against base_dir.
// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir);
// Reads a config file and applies the SIVI_SEED environment override.
RunConfig load_config(const std::filesystem::path& path);

// PriorSpec for p covariates; ConfigError naming any missing family key.
PriorSpec resolve_priors(const PriorBlock& block, Family family, std::size_t p);

// The full effective configuration (defaults resolved) for p covariates, or
// without the prior block when p is unknown. Loading it back as a config
// reproduces the run.
Json effective_config(const RunConfig& cfg, std::optional<std::size_t> p);

// Data CSV: header s1,s2,x1..xp,z,split with split in {train, test}.
void write_dataset_csv(const std::filesystem::path& path, const SpatialDataset& ds);
SpatialDataset read_dataset_csv(const std::filesystem::path& path, Family family);
// Prepends a column of ones.
void add_intercept(SpatialDataset& ds);

// %.17g formatting, enough for an exact double round trip.
std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Samples CSV: header iter,<names>.
void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<long>& iters, const Eigen::MatrixXd& samples);
Eigen::MatrixXd read_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names);

// Basis restricted to nothing: N x m matrix plus eigenvalues and mode.
void write_basis(const std::filesystem::path& path, const BasisSystem& basis);
BasisSystem read_basis(const std::filesystem::path& path);

BasisSystem build_basis(const SpatialDataset& ds, const BasisBlock& block);

double speedup(double slow_walltime_s, double fast_walltime_s);

// Commands. Each writes metadata.json with the effective configuration.
void cmd_simulate(const RunConfig& cfg);
void cmd_fit(const RunConfig& cfg);
void cmd_predict(const RunConfig& cfg);
void cmd_compare(const RunConfig& cfg);

}  // namespace sglmm::cli
