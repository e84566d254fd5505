#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string_view>

namespace sglmm {

// Response family; the link is implied by the kind.
//   gaussian  identity   extra parameter log tau^2
//   poisson   log        none
//   bernoulli logit      none
//   negbin    log        log kappa (NB2 dispersion)
//   gamma     log        log alpha (shape)
enum class Family { gaussian, poisson, bernoulli, negbin, gamma };

inline constexpr std::array<Family, 5> kAllFamilies = {
    Family::gaussian, Family::poisson, Family::bernoulli, Family::negbin, Family::gamma};

constexpr std::string_view to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::poisson: return "poisson";
    case Family::bernoulli: return "bernoulli";
    case Family::negbin: return "negbin";
    case Family::gamma: return "gamma";
  }
  return "?";
}

inline std::optional<Family> parse_family(std::string_view s) {
  for (Family f : kAllFamilies) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

constexpr bool has_extra_param(Family f) {
  return f == Family::gaussian || f == Family::negbin || f == Family::gamma;
}

// Name of the transformed extra parameter as it appears in packed vectors.
constexpr std::string_view extra_param_name(Family f) {
  switch (f) {
    case Family::gaussian: return "log_tau2";
    case Family::negbin: return "log_kappa";
    case Family::gamma: return "log_alpha";
    default: return "";
  }
}

constexpr bool uses_log_link(Family f) {
  return f == Family::poisson || f == Family::negbin || f == Family::gamma;
}

// g^{-1}(eta)
inline double inverse_link(Family f, double eta) {
  switch (f) {
    case Family::gaussian: return eta;
    case Family::bernoulli:
      return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
    default: return std::exp(eta);
  }
}

}  // namespace sglmm
