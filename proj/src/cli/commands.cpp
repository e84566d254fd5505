#include <fstream>
#include <future>
#include <iostream>

#include "sglmm/cli.hpp"
#include "sglmm/error.hpp"

#ifndef SGLMM_VERSION
#define SGLMM_VERSION "dev"
#endif

namespace sglmm::cli {
namespace {

namespace fs = std::filesystem;

// Posterior draws from the variational fit use their own stream so they do
// not depend on how many iterations the optimizer ran.
constexpr std::uint64_t kDrawStream = 0x9e3779b97f4a7c15ULL;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

fs::path require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("no output directory: set \"out\" or pass --out");
  ensure_dir(cfg.out);
  return cfg.out;
}

Family require_family(const RunConfig& cfg) {
  if (!cfg.family) throw ConfigError("missing required key family");
  return *cfg.family;
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_metadata(const fs::path& dir, const char* command, const Json& effective) {
  Json j;
  j["software_version"] = SGLMM_VERSION;
  j["command"] = command;
  for (const auto& [k, v] : effective.items()) j[k] = v;
  write_json(dir / "metadata.json", j);
}

struct Problem {
  SpatialDataset data;
  BasisSystem basis;
  ModelSpec model;
  BasisSystem test_basis;
  Eigen::MatrixXd X_test;
  Eigen::VectorXd Z_test;
};

SpatialDataset load_data(const RunConfig& cfg, Family family) {
  if (cfg.data.empty()) throw ConfigError("missing required key data");
  SpatialDataset ds = read_dataset_csv(cfg.data, family);
  if (cfg.intercept) add_intercept(ds);
  if (ds.train_idx.empty()) throw DataError(cfg.data.string() + ": no training rows");
  return ds;
}

Problem make_problem(const RunConfig& cfg, SpatialDataset ds, BasisSystem basis) {
  const Family family = require_family(cfg);
  const PriorSpec priors = resolve_priors(cfg.priors, family, ds.n_covariates());
  ModelSpec model = ModelSpec::from_dataset(ds, basis, priors, cfg.fixed);
  BasisSystem test_basis = basis.select_rows(ds.test_idx);
  Eigen::MatrixXd X_test = select_rows(ds.X, ds.test_idx);
  Eigen::VectorXd Z_test = select_rows(ds.Z, ds.test_idx);
  return {std::move(ds), std::move(basis), std::move(model), std::move(test_basis), std::move(X_test),
          std::move(Z_test)};
}

struct MethodRun {
  Method method = Method::sivi;
  Eigen::MatrixXd draws;
  std::vector<long> iters;
  Json diagnostics;
  double walltime_s = 0.0;
  std::optional<FitResult> sivi;
};

Json ess_json(const ChainOutput& out, const std::vector<std::string>& names) {
  Json j = Json::object();
  for (std::size_t k = 0; k < names.size(); ++k) j[names[k]] = out.ess(static_cast<Eigen::Index>(k));
  return j;
}

MethodRun run_method(Method method, const ModelSpec& model, const RunConfig& cfg) {
  MethodRun run;
  run.method = method;
  const auto names = model.layout().names();
  switch (method) {
    case Method::sivi: {
      FitResult fit = fit_sivi(model, cfg.sivi);
      if (fit.stop_reason == StopReason::non_finite) {
        throw NumericalError("sivi: surrogate ELBO was non-finite for three consecutive iterations at iteration " +
                             std::to_string(fit.iters_run));
      }
      Rng rng(cfg.sivi.seed ^ kDrawStream);
      run.draws = draw_posterior(fit, model, cfg.posterior_draws, rng).samples;
      for (int s = 1; s <= cfg.posterior_draws; ++s) run.iters.push_back(s);
      run.walltime_s = fit.walltime_s;
      run.diagnostics = {{"method", "sivi"},
                         {"walltime_s", fit.walltime_s},
                         {"iters_run", fit.iters_run},
                         {"stop_reason", std::string(to_string(fit.stop_reason))},
                         {"final_elbo", fit.elbo_trace.empty() ? 0.0 : fit.elbo_trace.back()},
                         {"clipped_steps", fit.clipped_steps},
                         {"noise_dim", cfg.sivi.noise_dim},
                         {"draws", cfg.posterior_draws}};
      run.sivi = std::move(fit);
      break;
    }
    case Method::mh: {
      ChainOutput out = mh_fit(model, cfg.mh);
      for (Eigen::Index k = 0; k < out.samples.rows(); ++k) run.iters.push_back(cfg.mh.burn_in + (k + 1) * cfg.mh.thin);
      run.walltime_s = out.walltime_s;
      Json sds = Json::object();
      for (std::size_t k = 0; k < names.size(); ++k) sds[names[k]] = out.proposal_sds(static_cast<Eigen::Index>(k));
      run.diagnostics = {{"method", "mh"},
                         {"accept_rate", out.accept_rate},
                         {"ess", ess_json(out, names)},
                         {"walltime_s", out.walltime_s},
                         {"iterations", out.total_iterations},
                         {"kept_draws", out.samples.rows()},
                         {"proposal_sds", sds}};
      run.draws = std::move(out.samples);
      break;
    }
    case Method::hmc: {
      ChainOutput out = hmc_fit(model, cfg.hmc);
      for (Eigen::Index k = 0; k < out.samples.rows(); ++k) run.iters.push_back(cfg.hmc.warmup + k + 1);
      run.walltime_s = out.walltime_s;
      run.diagnostics = {{"method", "hmc"},
                         {"accept_rate", out.accept_rate},
                         {"ess", ess_json(out, names)},
                         {"walltime_s", out.walltime_s},
                         {"iterations", out.total_iterations},
                         {"kept_draws", out.samples.rows()},
                         {"step_size", out.step_size},
                         {"divergences", out.divergences}};
      run.draws = std::move(out.samples);
      break;
    }
  }
  return run;
}

const char* metric_name(Family f) { return f == Family::bernoulli ? "auc" : "rmspe"; }

double score(Family f, const Eigen::VectorXd& z_true, const Eigen::VectorXd& z_pred) {
  return f == Family::bernoulli ? auc(z_true, z_pred) : rmspe(z_true, z_pred);
}

std::string trace_csv(const FitResult& fit) {
  std::string text = "iteration,elbo,walltime_cumulative_s\n";
  for (std::size_t t = 0; t < fit.elbo_trace.size(); ++t) {
    text += std::to_string(t + 1) + "," + format_double(fit.elbo_trace[t]) + "," +
            format_double(fit.walltime_trace[t]) + "\n";
  }
  return text;
}

// Short form for directory names: 0.1 rather than 0.10000000000000001.
std::string num_token(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void simulate_one(const SyntheticScenario& sc, const fs::path& dir) {
  ensure_dir(dir);
  const SimulationResult sim = simulate_dataset(sc);
  write_dataset_csv(dir / "data.csv", sim.dataset);

  std::string truth = "param,value\n";
  for (std::size_t k = 0; k < sim.truth.beta.size(); ++k) {
    truth += "beta" + std::to_string(k + 1) + "," + format_double(sim.truth.beta[k]) + "\n";
  }
  switch (sc.family) {
    case Family::gaussian: truth += "tau2," + format_double(sim.truth.extra_param) + "\n"; break;
    case Family::negbin: truth += "kappa," + format_double(sim.truth.extra_param) + "\n"; break;
    case Family::gamma: truth += "alpha," + format_double(sim.truth.extra_param) + "\n"; break;
    default: break;
  }
  truth += "marg_var," + format_double(sim.truth.marg_var) + "\n";
  write_text(dir / "truth.csv", truth);

  std::string latent = "loc_id,omega\n";
  for (Eigen::Index i = 0; i < sim.truth.omega.size(); ++i) {
    latent += std::to_string(i) + "," + format_double(sim.truth.omega(i)) + "\n";
  }
  write_text(dir / "latent.csv", latent);

  const Json scenario = {{"family", std::string(to_string(sc.family))},
                         {"nu", sc.matern.nu},
                         {"range", sc.matern.range},
                         {"marg_var", sc.matern.marg_var},
                         {"beta", sc.beta_true},
                         {"n_train", sc.n_train},
                         {"n_test", sc.n_test},
                         {"extra_param", sc.extra_param_true},
                         {"seed", sc.seed}};
  write_json(dir / "scenario.json", scenario);
}

}  // namespace

BasisSystem build_basis(const SpatialDataset& ds, const BasisBlock& block) {
  if (static_cast<std::size_t>(block.m) > ds.size()) {
    throw ConfigError("basis.m = " + std::to_string(block.m) + " exceeds the number of locations (" +
                      std::to_string(ds.size()) + ")");
  }
  CovarianceMatrix cov =
      build_covariance(ds.locations, block.matern, block.jitter.value_or(default_jitter(block.matern)));
  for (const auto& w : cov.warnings) std::cerr << "warning: " << w << "\n";
  return leading_eigenbasis(std::move(cov), block.m, block.prior_cov);
}

double speedup(double slow_walltime_s, double fast_walltime_s) {
  if (!(fast_walltime_s > 0.0)) throw std::invalid_argument("speedup: reference walltime must be positive");
  return slow_walltime_s / fast_walltime_s;
}

void cmd_simulate(const RunConfig& cfg) {
  if (!cfg.has_scenario) throw ConfigError("missing required block scenario");
  const fs::path out = require_out(cfg);
  if (cfg.grid) {
    for (Family f : kAllFamilies) {
      for (double nu : {0.5, 1.5}) {
        for (double range : {0.1, 0.3}) {
          SyntheticScenario sc = cfg.scenario;
          sc.family = f;
          sc.matern.nu = nu;
          sc.matern.range = range;
          sc.extra_param_true = f == cfg.scenario.family ? cfg.scenario.extra_param_true : default_extra_param(f);
          simulate_one(sc, out / (std::string(to_string(f)) + "_nu" + num_token(nu) + "_range" + num_token(range)));
        }
      }
    }
  } else {
    simulate_one(cfg.scenario, out);
  }
  write_metadata(out, "simulate", effective_config(cfg, std::nullopt));
}

void cmd_fit(const RunConfig& cfg) {
  const Family family = require_family(cfg);
  const fs::path out = require_out(cfg);
  SpatialDataset ds = load_data(cfg, family);
  BasisSystem basis = build_basis(ds, cfg.basis);
  const Problem prob = make_problem(cfg, std::move(ds), std::move(basis));

  const MethodRun run = run_method(cfg.method, prob.model, cfg);

  const auto names = prob.model.layout().names();
  write_metadata(out, "fit", effective_config(cfg, prob.data.n_covariates()));
  write_samples_csv(out / "samples.csv", names, run.iters, run.draws);
  write_json(out / "diagnostics.json", run.diagnostics);
  write_basis(out / "basis.bin", prob.basis);
  if (run.sivi) {
    std::ofstream os(out / "checkpoint.bin", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (out / "checkpoint.bin").string());
    write_mlp(os, run.sivi->net);
    write_text(out / "trace.csv", trace_csv(*run.sivi));
  }
}

void cmd_predict(const RunConfig& cfg) {
  const Family family = require_family(cfg);
  if (cfg.fit_dir.empty()) throw ConfigError("missing required key fit_dir");
  const fs::path out = require_out(cfg);

  const Json fit_meta = read_json(cfg.fit_dir / "metadata.json");
  if (fit_meta.value("family", std::string()) != to_string(family)) {
    throw DataError("fit in " + cfg.fit_dir.string() + " was made for family " + fit_meta.value("family", std::string("?")) +
                    ", not " + std::string(to_string(family)));
  }
  if (fit_meta.value("intercept", false) != cfg.intercept) {
    throw DataError("fit in " + cfg.fit_dir.string() + " disagrees on the intercept setting");
  }
  SpatialDataset ds = load_data(cfg, family);
  if (ds.test_idx.empty()) throw DataError(cfg.data.string() + ": no test rows to predict");
  BasisSystem basis = read_basis(cfg.fit_dir / "basis.bin");
  if (basis.rows() != static_cast<Eigen::Index>(ds.size())) {
    throw DataError("basis in " + cfg.fit_dir.string() + " has " + std::to_string(basis.rows()) +
                    " rows but the data has " + std::to_string(ds.size()) + " locations");
  }
  // The fitted model's priors and fixed values define the layout.
  RunConfig fit_cfg = parse_config(fit_meta, cfg.fit_dir);
  const Problem prob = make_problem(fit_cfg, std::move(ds), std::move(basis));
  const auto names = prob.model.layout().names();
  const Eigen::MatrixXd draws = read_samples_csv(cfg.fit_dir / "samples.csv", names);
  if (draws.rows() < 1) throw DataError(cfg.fit_dir.string() + ": samples.csv has no draws");
  const Json diag = read_json(cfg.fit_dir / "diagnostics.json");

  const PredictionSet pred = predict(draws, prob.model.layout(), prob.X_test, prob.test_basis.phi);
  std::string text = "loc_id,z_true,z_pred\n";
  for (std::size_t k = 0; k < prob.data.test_idx.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    text += std::to_string(prob.data.test_idx[k]) + "," + format_double(prob.Z_test(i)) + "," +
            format_double(pred.point_pred(i)) + "\n";
  }
  write_text(out / "predictions.csv", text);

  Json metrics;
  metrics[metric_name(family)] = score(family, prob.Z_test, pred.point_pred);
  metrics["walltime_s"] = diag.value("walltime_s", 0.0);
  metrics["method"] = fit_meta.value("method", std::string("sivi"));
  write_json(out / "metrics.json", metrics);

  if (draws.rows() >= 10) {
    const PosteriorSummary summary = summarize(draws, names, cfg.bins);
    std::string s = "param,mean,sd,q025,q50,q975\n";
    ensure_dir(out / "hist");
    for (const auto& p : summary.params) {
      s += p.name + "," + format_double(p.mean) + "," + format_double(p.sd) + "," + format_double(p.q025) + "," +
           format_double(p.q50) + "," + format_double(p.q975) + "\n";
      std::string h = "bin_left,bin_right,mass\n";
      for (std::size_t b = 0; b < p.masses.size(); ++b) {
        h += format_double(p.breaks[b]) + "," + format_double(p.breaks[b + 1]) + "," + format_double(p.masses[b]) + "\n";
      }
      write_text(out / "hist" / (p.name + ".csv"), h);
    }
    write_text(out / "summary.csv", s);
  }
  write_metadata(out, "predict", effective_config(cfg, prob.data.n_covariates()));
}

void cmd_compare(const RunConfig& cfg) {
  const Family family = require_family(cfg);
  const fs::path out = require_out(cfg);
  SpatialDataset ds = load_data(cfg, family);
  if (ds.test_idx.empty()) throw DataError(cfg.data.string() + ": no test rows to score");
  BasisSystem basis = build_basis(ds, cfg.basis);
  const Problem prob = make_problem(cfg, std::move(ds), std::move(basis));

  const Method order[3] = {Method::sivi, Method::mh, Method::hmc};
  std::vector<MethodRun> runs;
  if (cfg.parallel) {
    std::vector<std::future<MethodRun>> jobs;
    for (Method m : order) {
      jobs.push_back(std::async(std::launch::async, [&, m] { return run_method(m, prob.model, cfg); }));
    }
    for (auto& j : jobs) runs.push_back(j.get());
  } else {
    for (Method m : order) runs.push_back(run_method(m, prob.model, cfg));
  }

  std::string text = "method,metric,value,walltime_s\n";
  for (const MethodRun& r : runs) {
    const PredictionSet pred = predict(r.draws, prob.model.layout(), prob.X_test, prob.test_basis.phi);
    text += std::string(to_string(r.method)) + "," + metric_name(family) + "," +
            format_double(score(family, prob.Z_test, pred.point_pred)) + "," + format_double(r.walltime_s) + "\n";
  }
  text += "MH/SIVI,speedup," + format_double(speedup(runs[1].walltime_s, runs[0].walltime_s)) + ",\n";
  text += "HMC/SIVI,speedup," + format_double(speedup(runs[2].walltime_s, runs[0].walltime_s)) + ",\n";
  write_text(out / "compare.csv", text);

  Json eff = effective_config(cfg, prob.data.n_covariates());
  eff["walltime_contended"] = cfg.parallel;
  write_metadata(out, "compare", eff);
}

}  // namespace sglmm::cli
