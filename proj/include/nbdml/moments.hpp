#pragma once

// Affine moment functions m(Z; theta, g) = psi(Z; g) theta + nu(Z; g).

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nbdml/dgp.hpp"
#include "nbdml/error.hpp"

namespace nbdml {

enum class MomentKind { dr_ate, pliv };

// Nuisance values at one observation.
struct DrAteNuisance {
  double mu_w = 0.0;   // E[Y | W=w, X]
  double e_w = 0.5;    // P(W=w | X)
  double mu_wp = 0.0;  // E[Y | W=w', X]
  double e_wp = 0.5;   // P(W=w' | X)
};

struct PlivNuisance {
  double ell_y = 0.0;  // E[Y | X]
  double ell_w = 0.0;  // E[W | X]
  double ell_v = 0.0;  // E[V | X]
};

using NuisanceBundle = std::variant<DrAteNuisance, PlivNuisance>;

struct MomentValue {
  double psi = 0.0;
  double nu = 0.0;

  double at(double theta) const noexcept { return psi * theta + nu; }
};

inline double trim_propensity(double e, double eta) {
  if (!(eta > 0.0 && eta < 0.5)) throw ArgumentError("trim bound eta must lie in (0, 0.5)");
  return std::clamp(e, eta, 1.0 - eta);
}

// Doubly robust ATE moment for the treatment pair (w, w') = (1, 0): psi = -1.
inline MomentValue eval_dr_ate(const Observation& o, const DrAteNuisance& g) {
  if (!(g.e_w > 0.0 && g.e_w < 1.0) || !(g.e_wp > 0.0 && g.e_wp < 1.0)) {
    throw ContractViolation("propensity must be trimmed into (0,1) before evaluating the DR moment");
  }
  const double treated = o.w == 1 ? 1.0 : 0.0;
  const double control = o.w == 0 ? 1.0 : 0.0;
  const double nu = treated * (o.y - g.mu_w) / g.e_w + g.mu_w -
                    control * (o.y - g.mu_wp) / g.e_wp - g.mu_wp;
  return {-1.0, nu};
}

// Robinson residual-on-residual moment for the partially linear IV model.
inline MomentValue eval_pliv(const Observation& o, const PlivNuisance& g) {
  if (!o.v) throw ArgumentError("PLIV moment needs an instrument");
  const double rv = *o.v - g.ell_v;
  return {-(o.w - g.ell_w) * rv, (o.y - g.ell_y) * rv};
}

// Bound on |nu| for the DR moment given |Y| <= y_bound, |mu| <= mu_bound and
// propensities in [eta, 1 - eta].
inline double dr_ate_nu_bound(double y_bound, double mu_bound, double eta) {
  return (y_bound + mu_bound) / eta + 2.0 * mu_bound;
}

struct MomentModel {
  MomentKind kind = MomentKind::dr_ate;
  double trim = 0.01;  // eta, dr_ate only
  // When set, every DR evaluation checks |Y| and |mu| against this bound and
  // |nu| against dr_ate_nu_bound.
  std::optional<double> outcome_bound;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (kind == MomentKind::dr_ate && !(trim > 0.0 && trim < 0.5)) {
      errs.emplace_back("trim must lie in (0, 0.5)");
    }
    return errs;
  }

  // Trims propensities, then evaluates.
  MomentValue evaluate(const Observation& o, const NuisanceBundle& g) const {
    if (kind == MomentKind::pliv) {
      const auto* p = std::get_if<PlivNuisance>(&g);
      if (p == nullptr) throw ArgumentError("PLIV moment needs PLIV nuisances");
      return eval_pliv(o, *p);
    }
    const auto* d = std::get_if<DrAteNuisance>(&g);
    if (d == nullptr) throw ArgumentError("DR-ATE moment needs DR-ATE nuisances");
    DrAteNuisance t = *d;
    t.e_w = trim_propensity(t.e_w, trim);
    t.e_wp = trim_propensity(t.e_wp, trim);
    const auto m = eval_dr_ate(o, t);
    if (outcome_bound) {
      const double b = *outcome_bound;
      if (std::abs(o.y) > b || std::abs(t.mu_w) > b || std::abs(t.mu_wp) > b) {
        throw ContractViolation("outcome or regression outside the declared bound");
      }
      if (!std::isfinite(m.nu) || std::abs(m.nu) > dr_ate_nu_bound(b, b, trim)) {
        throw ContractViolation("DR moment exceeds its boundedness constant");
      }
    }
    return m;
  }
};

}  // namespace nbdml
