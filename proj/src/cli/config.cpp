#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "sglmm/cli.hpp"
#include "sglmm/error.hpp"

namespace sglmm::cli {
namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (has(key)) out = as<T>(key);
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) {
    if (has(key)) out = as<T>(key);
  }

  template <typename T>
  T as(const std::string& key) const {
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(label() + key + ": wrong type");
    }
  }

  Section child(const std::string& key) {
    known_.insert(key);
    return Section(j_.at(key), label() + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.contains(key)) throw ConfigError("unknown config key: " + label() + key);
    }
  }

 private:
  std::string label() const { return name_.empty() ? "" : name_ + "."; }

  const Json& j_;
  std::string name_;
  std::set<std::string> known_;
};

Family family_from(const std::string& s, const std::string& key) {
  const auto f = parse_family(s);
  if (!f) throw ConfigError(key + ": unknown family '" + s + "'");
  return *f;
}

PriorCovMode prior_cov_from(const std::string& s) {
  if (s == "identity") return PriorCovMode::identity;
  if (s == "eigenvalue_diagonal") return PriorCovMode::eigenvalue_diagonal;
  throw ConfigError("basis.prior_cov: expected identity or eigenvalue_diagonal, got '" + s + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : std::filesystem::absolute(base / path).lexically_normal();
}

void parse_matern(Section& s, MaternParams& m) {
  s.get("nu", m.nu);
  s.get("range", m.range);
  s.get("marg_var", m.marg_var);
}

// Wraps library validation so every bad value reports as a config error.
template <typename F>
void check(const std::string& block, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(block + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(block + ": " + e.what());
  }
}

void parse_sivi(Section s, SiviConfig& c, int& draws) {
  s.get("J", c.J);
  s.get("K", c.K);
  s.get("max_iters", c.max_iters);
  s.get("stop_eps", c.stop_eps);
  s.get("stop_window", c.stop_window);
  s.get("noise_dim", c.noise_dim);
  s.get("hidden", c.hidden);
  s.get("lr", c.lr);
  s.get("clip_norm", c.clip_norm);
  s.get("k_ramp_iters", c.k_ramp_iters);
  s.get("seed", c.seed);
  s.get("draws", draws);
  if (s.has("cond_scales")) {
    Section cs = s.child("cond_scales");
    cs.get("beta", c.cond_scales.beta);
    cs.get("delta", c.cond_scales.delta);
    cs.get("log_sigma2", c.cond_scales.log_sigma2);
    cs.get("gamma", c.cond_scales.gamma);
    cs.finish();
  }
  s.finish();
  check("sivi", [&] { c.validate(); });
  if (draws < 10) throw ConfigError("sivi.draws must be >= 10");
}

void parse_mh(Section s, MhConfig& c) {
  s.get("iters", c.iters);
  s.get("burn_in", c.burn_in);
  s.get("thin", c.thin);
  s.get("init_step_sds", c.init_step_sds);
  s.get("adapt", c.adapt);
  s.get("adapt_target", c.adapt_target);
  s.get("seed", c.seed);
  s.finish();
  check("mh", [&] { c.validate(); });
}

void parse_hmc(Section s, HmcConfig& c) {
  s.get("iters", c.iters);
  s.get("warmup", c.warmup);
  s.get("leapfrog_steps", c.leapfrog_steps);
  s.get("init_step_size", c.init_step_size);
  s.get("target_accept", c.target_accept);
  s.get("mass_diag", c.mass_diag);
  s.get("seed", c.seed);
  s.finish();
  check("hmc", [&] { c.validate(); });
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::sivi: return "sivi";
    case Method::mh: return "mh";
    case Method::hmc: return "hmc";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  for (Method m : {Method::sivi, Method::mh, Method::hmc}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

RunConfig parse_config(const Json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  Section top(j, "");

  // Present in metadata echoes; informational only.
  if (top.has("software_version")) (void)top.as<std::string>("software_version");
  if (top.has("command")) (void)top.as<std::string>("command");
  if (top.has("walltime_contended")) (void)top.as<bool>("walltime_contended");

  top.get("seed", cfg.seed);
  bool seed_set[3] = {false, false, false};
  if (top.has("out")) cfg.out = resolve(base_dir, top.as<std::string>("out"));
  if (top.has("data")) cfg.data = resolve(base_dir, top.as<std::string>("data"));
  if (top.has("fit_dir")) cfg.fit_dir = resolve(base_dir, top.as<std::string>("fit_dir"));
  if (top.has("family")) cfg.family = family_from(top.as<std::string>("family"), "family");
  top.get("intercept", cfg.intercept);
  top.get("parallel", cfg.parallel);
  if (top.has("method")) {
    const auto m = parse_method(top.as<std::string>("method"));
    if (!m) throw ConfigError("method: expected sivi, mh or hmc");
    cfg.method = *m;
  }

  if (top.has("scenario")) {
    cfg.has_scenario = true;
    Section s = top.child("scenario");
    SyntheticScenario& sc = cfg.scenario;
    if (s.has("family")) sc.family = family_from(s.as<std::string>("family"), "scenario.family");
    parse_matern(s, sc.matern);
    s.get("beta", sc.beta_true);
    s.get("n_train", sc.n_train);
    s.get("n_test", sc.n_test);
    sc.extra_param_true = default_extra_param(sc.family);
    s.get("extra_param", sc.extra_param_true);
    s.get("grid", cfg.grid);
    s.finish();
    check("scenario", [&] { sc.validate(); });
  }

  if (top.has("basis")) {
    Section s = top.child("basis");
    s.get("m", cfg.basis.m);
    parse_matern(s, cfg.basis.matern);
    if (s.has("prior_cov")) cfg.basis.prior_cov = prior_cov_from(s.as<std::string>("prior_cov"));
    s.get("jitter", cfg.basis.jitter);
    s.finish();
    if (cfg.basis.m < 1) throw ConfigError("basis.m must be >= 1");
    if (cfg.basis.jitter && !(*cfg.basis.jitter >= 0.0)) throw ConfigError("basis.jitter must be >= 0");
    check("basis", [&] { cfg.basis.matern.validate(); });
  }

  if (top.has("priors")) {
    Section s = top.child("priors");
    PriorBlock& p = cfg.priors;
    s.get("beta_mean", p.beta_mean);
    s.get("beta_var", p.beta_var);
    s.get("sigma_mean", p.sigma_mean);
    s.get("sigma_var", p.sigma_var);
    s.get("tau_mean", p.tau_mean);
    s.get("tau_var", p.tau_var);
    s.get("kappa_shape", p.kappa_shape);
    s.get("kappa_rate", p.kappa_rate);
    s.get("alpha_mean", p.alpha_mean);
    s.get("alpha_var", p.alpha_var);
    s.finish();
  }

  if (top.has("fixed")) {
    Section s = top.child("fixed");
    s.get("log_sigma2", cfg.fixed.log_sigma2);
    s.get("extra", cfg.fixed.extra_t);
    s.finish();
  }

  if (top.has("sivi")) {
    seed_set[0] = j.at("sivi").is_object() && j.at("sivi").contains("seed");
    parse_sivi(top.child("sivi"), cfg.sivi, cfg.posterior_draws);
  }
  if (top.has("mh")) {
    seed_set[1] = j.at("mh").is_object() && j.at("mh").contains("seed");
    parse_mh(top.child("mh"), cfg.mh);
  }
  if (top.has("hmc")) {
    seed_set[2] = j.at("hmc").is_object() && j.at("hmc").contains("seed");
    parse_hmc(top.child("hmc"), cfg.hmc);
  }
  if (top.has("predict")) {
    Section s = top.child("predict");
    s.get("bins", cfg.bins);
    s.finish();
    if (cfg.bins < 1) throw ConfigError("predict.bins must be >= 1");
  }
  top.finish();

  // Blocks without their own seed follow the global one.
  cfg.scenario.seed = cfg.seed;
  if (!seed_set[0]) cfg.sivi.seed = cfg.seed;
  if (!seed_set[1]) cfg.mh.seed = cfg.seed;
  if (!seed_set[2]) cfg.hmc.seed = cfg.seed;

  if (cfg.family) {
    // Surface missing family hyperparameters before any work starts.
    (void)resolve_priors(cfg.priors, *cfg.family, 0);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (const char* env = std::getenv("SIVI_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError("SIVI_SEED must be a non-negative integer");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    j["seed"] = seed;
    // The override is global; per-block seeds would otherwise shadow it.
    for (const char* block : {"sivi", "mh", "hmc"}) {
      if (j.contains(block) && j[block].is_object()) j[block].erase("seed");
    }
  }
  const auto base = std::filesystem::absolute(path).parent_path();
  return parse_config(j, base);
}

PriorSpec resolve_priors(const PriorBlock& block, Family family, std::size_t p) {
  PriorSpec spec = PriorSpec::defaults(p);
  if (block.beta_mean) spec.beta_mean = *block.beta_mean;
  if (block.beta_var) spec.beta_var = *block.beta_var;
  spec.sigma_mean = block.sigma_mean;
  spec.sigma_var = block.sigma_var;
  auto need = [](const std::optional<double>& v, const char* key) {
    if (!v) throw ConfigError(std::string("missing required key priors.") + key);
    return *v;
  };
  switch (family) {
    case Family::gaussian:
      spec.tau_mean = need(block.tau_mean, "tau_mean");
      spec.tau_var = need(block.tau_var, "tau_var");
      break;
    case Family::negbin:
      spec.kappa_shape = need(block.kappa_shape, "kappa_shape");
      spec.kappa_rate = need(block.kappa_rate, "kappa_rate");
      break;
    case Family::gamma:
      spec.alpha_mean = need(block.alpha_mean, "alpha_mean");
      spec.alpha_var = need(block.alpha_var, "alpha_var");
      break;
    default:
      break;
  }
  if (p > 0) {
    try {
      spec.validate(p);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("priors: ") + e.what());
    }
  }
  return spec;
}

Json effective_config(const RunConfig& cfg, std::optional<std::size_t> p) {
  Json j;
  j["seed"] = cfg.seed;
  if (!cfg.out.empty()) j["out"] = cfg.out.string();
  if (!cfg.data.empty()) j["data"] = cfg.data.string();
  if (!cfg.fit_dir.empty()) j["fit_dir"] = cfg.fit_dir.string();
  if (cfg.family) j["family"] = std::string(to_string(*cfg.family));
  j["intercept"] = cfg.intercept;
  j["method"] = std::string(to_string(cfg.method));
  j["parallel"] = cfg.parallel;

  if (cfg.has_scenario) {
    const SyntheticScenario& sc = cfg.scenario;
    j["scenario"] = {{"family", std::string(to_string(sc.family))},
                     {"nu", sc.matern.nu},
                     {"range", sc.matern.range},
                     {"marg_var", sc.matern.marg_var},
                     {"beta", sc.beta_true},
                     {"n_train", sc.n_train},
                     {"n_test", sc.n_test},
                     {"extra_param", sc.extra_param_true},
                     {"grid", cfg.grid}};
  }

  Json basis = {{"m", cfg.basis.m},
                {"nu", cfg.basis.matern.nu},
                {"range", cfg.basis.matern.range},
                {"marg_var", cfg.basis.matern.marg_var},
                {"prior_cov", std::string(to_string(cfg.basis.prior_cov))}};
  basis["jitter"] = cfg.basis.jitter.value_or(default_jitter(cfg.basis.matern));
  j["basis"] = basis;

  if (cfg.family && p) {
    const PriorSpec ps = resolve_priors(cfg.priors, *cfg.family, *p);
    Json pj = {{"beta_mean", ps.beta_mean}, {"beta_var", ps.beta_var},
               {"sigma_mean", ps.sigma_mean}, {"sigma_var", ps.sigma_var}};
    switch (*cfg.family) {
      case Family::gaussian:
        pj["tau_mean"] = ps.tau_mean;
        pj["tau_var"] = ps.tau_var;
        break;
      case Family::negbin:
        pj["kappa_shape"] = ps.kappa_shape;
        pj["kappa_rate"] = ps.kappa_rate;
        break;
      case Family::gamma:
        pj["alpha_mean"] = ps.alpha_mean;
        pj["alpha_var"] = ps.alpha_var;
        break;
      default:
        break;
    }
    j["priors"] = pj;
  } else {
    // Without the covariate count only the explicitly given values echo.
    Json pj = Json::object();
    const PriorBlock& b = cfg.priors;
    if (b.beta_mean) pj["beta_mean"] = *b.beta_mean;
    if (b.beta_var) pj["beta_var"] = *b.beta_var;
    pj["sigma_mean"] = b.sigma_mean;
    pj["sigma_var"] = b.sigma_var;
    const std::pair<const char*, const std::optional<double>*> opt[] = {
        {"tau_mean", &b.tau_mean},       {"tau_var", &b.tau_var},     {"kappa_shape", &b.kappa_shape},
        {"kappa_rate", &b.kappa_rate},   {"alpha_mean", &b.alpha_mean}, {"alpha_var", &b.alpha_var}};
    for (const auto& [key, v] : opt) {
      if (*v) pj[key] = **v;
    }
    j["priors"] = pj;
  }

  Json fixed = Json::object();
  if (cfg.fixed.log_sigma2) fixed["log_sigma2"] = *cfg.fixed.log_sigma2;
  if (cfg.fixed.extra_t) fixed["extra"] = *cfg.fixed.extra_t;
  j["fixed"] = fixed;

  const SiviConfig& s = cfg.sivi;
  j["sivi"] = {{"J", s.J},
               {"K", s.K},
               {"max_iters", s.max_iters},
               {"stop_eps", s.stop_eps},
               {"stop_window", s.stop_window},
               {"noise_dim", s.noise_dim},
               {"hidden", s.hidden},
               {"cond_scales",
                {{"beta", s.cond_scales.beta},
                 {"delta", s.cond_scales.delta},
                 {"log_sigma2", s.cond_scales.log_sigma2},
                 {"gamma", s.cond_scales.gamma}}},
               {"lr", s.lr},
               {"clip_norm", s.clip_norm},
               {"k_ramp_iters", s.k_ramp_iters},
               {"seed", s.seed},
               {"draws", cfg.posterior_draws}};
  const MhConfig& m = cfg.mh;
  j["mh"] = {{"iters", m.iters},     {"burn_in", m.burn_in},
             {"thin", m.thin},       {"init_step_sds", m.init_step_sds},
             {"adapt", m.adapt},     {"adapt_target", m.adapt_target},
             {"seed", m.seed}};
  const HmcConfig& h = cfg.hmc;
  j["hmc"] = {{"iters", h.iters},
              {"warmup", h.warmup},
              {"leapfrog_steps", h.leapfrog_steps},
              {"init_step_size", h.init_step_size},
              {"target_accept", h.target_accept},
              {"mass_diag", h.mass_diag},
              {"seed", h.seed}};
  j["predict"] = {{"bins", cfg.bins}};
  return j;
}

}  // namespace sglmm::cli
