#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "impactforge/geometry.hpp"
#include "impactforge/material.hpp"

namespace impactforge::fe {

using geom::Vec2;

/// Plane-strain Cauchy stress, Pa. xy is the tensor shear component.
struct Stress4 {
  double xx = 0.0;
  double yy = 0.0;
  double zz = 0.0;
  double xy = 0.0;
};

/// Small-strain tensor components (tensor shear, not engineering).
struct Strain4 {
  double xx = 0.0;
  double yy = 0.0;
  double zz = 0.0;
  double xy = 0.0;
};

/// q = sqrt(3/2 S:S), deviator including the out-of-plane stress.
double von_mises(const Stress4& s);

/// n = 3/2 S/q. Throws std::domain_error at q == 0 (caller treats the
/// state as elastic).
Stress4 flow_direction(const Stress4& s);

/// Overstress power law: D*(q/sigma0(epbar) - 1)^n_exp above the static
/// yield surface, zero on or below it. 1/s.
double overstress_rate(double q, double epbar, const MaterialModel& mat);

struct ElementState {
  Stress4 stress;
  double epbar = 0.0;

  Strain4 elastic_strain(const MaterialModel& mat) const;
};

struct ReturnMapResult {
  ElementState state;
  double depbar = 0.0;
  int iterations = 0;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Backward-Euler update of the overstress law over one step:
/// solves  g(d) = d - dt*D*((q_trial - 3G*d)/sigma0(epbar+d) - 1)^n_exp = 0
/// for d in (0, (q_trial - sigma0)/3G], then returns the trial deviator
/// scaled by q_new/q_trial with pressure unchanged. Elastic passthrough
/// when q_trial <= sigma0(epbar). Newton with bisection fallback;
/// throws SolverError on non-convergence.
ReturnMapResult radial_return(const Stress4& trial, double dt, const ElementState& state,
                              const MaterialModel& mat);

enum class Integration : std::uint8_t { kFull, kReduced };

struct QuadForceResult {
  std::array<Vec2, 4> force{};  // N per unit thickness
};

/// Internal force of one bilinear quad under a displacement increment.
/// X: reference node coordinates (m), CCW; du: increment (m); gp_states:
/// 4 entries for full 2x2 integration, 1 for reduced. States are updated
/// through the elastic predictor + radial return. Throws SolverError on
/// a non-positive Jacobian. Hourglass stabilization for reduced
/// integration lives in the time-stepping loop (it is viscous).
QuadForceResult element_internal_force(const std::array<Vec2, 4>& X,
                                       const std::array<Vec2, 4>& du,
                                       std::span<ElementState> gp_states,
                                       const MaterialModel& mat, double dt,
                                       Integration scheme);

/// Explicit stability limit: safety * edge / c_d with the dilatational
/// wave speed c_d = sqrt(E(1-nu)/((1+nu)(1-2nu))/rho). Seconds.
double stable_dt(const geom::RasterMesh& mesh, const MaterialModel& mat, double safety = 0.9);

/// One transverse-compression history. All arrays share the same length
/// (record_points). Energies and forces are per unit thickness; nominal
/// stress is reaction force / (11 mm * unit thickness). Compression is
/// reported positive.
struct SimulationRecord {
  std::int64_t id = -1;
  geom::DesignParams design;
  double rate = 0.0;          // 1/s
  double final_strain = 0.0;
  std::vector<double> time;     // s
  std::vector<double> strain;
  std::vector<double> stress;   // Pa
  std::vector<double> force;    // N/m
  std::vector<double> E_pl;     // J/m
  std::vector<double> E_el;     // J/m
  std::vector<double> E_k;      // J/m
  std::vector<double> E_hg;     // J/m, zero under full integration
  std::vector<double> W_ext;    // J/m, work done through the moving face

  std::string to_jsonl() const;
  static SimulationRecord from_jsonl(const std::string& line);
};

struct SolverOptions {
  Integration integration = Integration::kFull;
  double cfl_safety = 0.9;
  double hourglass_coeff = 0.05;   // viscous, reduced integration only
  double energy_tolerance = 0.01;  // fraction of external work
  // Suppress all horizontal motion (uniaxial-strain mode). Verification
  // only: a confined dense block must respond with the constrained
  // modulus exactly.
  bool confine_lateral = false;
};

/// Central-difference explicit dynamics on the raster mesh: bottom edge
/// fixed vertically, bottom-center node pinned horizontally (rigid-body
/// control), top edge driven downward at strain_rate * 11 mm, sides
/// traction-free. Records at record_points uniformly spaced strain
/// levels from 0 to final_strain. Throws SolverError if the energy
/// balance |W_ext - (E_k + E_el + E_pl + E_hg)| exceeds the tolerance at
/// any recorded instant.
SimulationRecord run_simulation(const geom::RasterMesh& mesh, const MaterialModel& mat,
                                double strain_rate, double final_strain,
                                int record_points = 50, const SolverOptions& options = {});

}  // namespace impactforge::fe
