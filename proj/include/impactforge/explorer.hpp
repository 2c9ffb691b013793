#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "impactforge/fesolver.hpp"
#include "impactforge/geometry.hpp"
#include "impactforge/surrogate.hpp"

namespace impactforge::explore {

/// The 204,800-point design grid: sides x nx x ny x 40 vf bins x 20
/// angle bins. vf and angle are evaluated at bin midpoints.
struct SweepGrid {
  int vf_bins = 40;
  int angle_bins = 20;
  double vf_min = 0.01;
  double vf_max = 0.10;
  std::vector<double> rates = {0.45, 9.1, 90.9};
  double final_strain = 0.25;

  std::int64_t cardinality() const { return std::int64_t(4) * 8 * 8 * vf_bins * angle_bins; }
  double vf_value(int bin) const;
  double angle_value(int bin) const;
};

/// Mixed-radix design index:
/// (((sides-3)*8 + nx-1)*8 + ny-1)*vf_bins + vf_bin)*angle_bins + angle_bin.
std::int64_t design_index(const geom::DesignParams& params, const SweepGrid& grid);
geom::DesignParams params_at(std::int64_t index, const SweepGrid& grid);

struct SweepRecord {
  std::int64_t design_index = 0;
  geom::DesignParams params;
  double rate = 0.0;
  bool valid = false;
  double sea = 0.0;  // J/kg, meaningful only when valid
};

/// Specific energy absorption from a predicted (or simulated) output
/// block on the uniform strain grid: trapezoidal integral of force over
/// displacement divided by specimen mass. Mass uses the exact polygon
/// areas, unit thickness.
double sea(const std::array<std::vector<double>, data::kNumOutputs>& outputs,
           const geom::DesignParams& params, const fe::MaterialModel& mat,
           double final_strain);

double sea_of_record(const fe::SimulationRecord& record, const fe::MaterialModel& mat);

/// Mass per unit thickness, kg/m. Throws when non-positive.
double specimen_mass(const geom::DesignParams& params, const fe::MaterialModel& mat);

/// Enumerate the grid at every rate: geometry validity via build_design,
/// surrogate prediction, SEA. Deterministic ordering by design_index,
/// then by rate list position. Batched inference; `workers` threads.
std::vector<SweepRecord> sweep(const nn::Checkpoint& ckpt, const SweepGrid& grid,
                               const fe::MaterialModel& mat, int workers = 1);

/// Sample Pearson correlation. Throws std::invalid_argument for length
/// < 2 or a constant series.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct CorrelationReport {
  double rate = 0.0;
  double r_sides = 0.0, r_nx = 0.0, r_ny = 0.0, r_angle = 0.0, r_vf = 0.0;
};

CorrelationReport correlations(const std::vector<SweepRecord>& records, double rate);

/// Max- and min-SEA valid records at a rate; ties break toward the
/// lower design index.
std::pair<SweepRecord, SweepRecord> best_worst(const std::vector<SweepRecord>& records,
                                               double rate);

struct ValidationRow {
  std::int64_t design_index = 0;
  double rate = 0.0;
  double sea_fe = 0.0;
  double sea_pred = 0.0;
  double rel_err = 0.0;
  bool fe_failed = false;
};

struct ValidationOptions {
  double edge = geom::kDefaultEdge;
  int record_points = data::kSeqLen;
  double final_strain = 0.25;
  fe::SolverOptions solver;
  double tolerance = 0.10;
};

/// Re-simulate the best and worst designs at each rate with the FE
/// solver and compare SEA against the surrogate prediction.
std::vector<ValidationRow> validate_extremes(const std::vector<SweepRecord>& records,
                                             const nn::Checkpoint& ckpt,
                                             const fe::MaterialModel& mat,
                                             const ValidationOptions& options);

bool validation_passed(const std::vector<ValidationRow>& rows, double tolerance);
std::string validation_to_json(const std::vector<ValidationRow>& rows);

// sweep CSV: design_index,sides,nx,ny,angle_deg,vf,rate_per_s,valid,sea_J_per_kg
void write_sweep_csv(const std::string& path, const std::vector<SweepRecord>& records);
std::vector<SweepRecord> read_sweep_csv(const std::string& path);

/// Self-contained SVG scatter of SEA vs design index (one plot per
/// rate stacked vertically); extremes highlighted. Point count is
/// capped by subsampling to keep files viewable.
void write_scatter_svg(const std::string& path, const std::vector<SweepRecord>& records);

/// Angle trend for fixed square designs: per angle bin, predicted SEA.
void write_angle_trend_csv(const std::string& path, const nn::Checkpoint& ckpt,
                           const SweepGrid& grid, const fe::MaterialModel& mat, int nx, int ny,
                           double vf, double rate);

}  // namespace impactforge::explore
