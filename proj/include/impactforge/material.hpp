#pragma once

#include <string>
#include <utility>
#include <vector>

namespace impactforge::fe {

/// Rate-dependent elastoplastic material: linear isotropic elasticity,
/// J2 flow with a piecewise-linear static yield curve sigma0(epbar) and
/// an overstress power law  epbar_dot = D * (q/sigma0 - 1)^n_exp.
/// Isothermal; all parameters at reference temperature.
struct MaterialModel {
  double E = 2.5e9;      // Pa
  double nu = 0.35;
  double rho = 1070.0;   // kg/m^3
  // (epbar, sigma0_Pa) pairs, epbar strictly increasing, sigma0 > 0 and
  // non-decreasing. Flat extrapolation beyond the last point.
  std::vector<std::pair<double, double>> hardening = {{0.0, 60.0e6}, {0.5, 80.0e6}};
  double D = 100.0;      // 1/s
  double n_exp = 2.0;

  double shear_modulus() const { return E / (2.0 * (1.0 + nu)); }
  double lame_lambda() const { return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
  double constrained_modulus() const { return E * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu)); }
  double dilatational_wave_speed() const;

  double sigma0(double epbar) const;
  double sigma0_slope(double epbar) const;

  void validate() const;

  /// Plausible PC-ABS-like defaults; the hardening table and density are
  /// configuration, not measured values.
  static MaterialModel pc_abs_like() { return MaterialModel{}; }

  /// An effectively rate-independent elastic material (yield far above
  /// any reachable stress). Used by solver verification tests.
  static MaterialModel elastic_only();

  static MaterialModel from_json(const std::string& text);
  std::string to_json() const;
};

}  // namespace impactforge::fe
