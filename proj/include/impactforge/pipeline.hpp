#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "impactforge/dataset.hpp"
#include "impactforge/fesolver.hpp"
#include "impactforge/surrogate.hpp"

namespace impactforge::pipeline {

/// FNV-1a over the canonical config text; stamped into output manifests.
std::string config_hash(const std::string& canonical);

struct CampaignConfig {
  int n_designs = 200;
  std::uint64_t seed = 1;
  double rate_min = 0.45;
  double rate_max = 90.9;
  double final_strain = 0.25;
  int record_points = data::kSeqLen;
  double edge = geom::kDefaultEdge;
  fe::SolverOptions solver;
  bool include_solid = false;
  int workers = 1;
  double max_failure_fraction = 0.10;

  std::string to_json() const;
};

/// Deterministic per-id design/rate draw: the sampling stream of design
/// id i depends only on (seed, i), so resumed or parallel campaigns
/// produce identical records.
struct CampaignDraw {
  geom::DesignParams design;
  double rate = 0.0;
};
CampaignDraw draw_design(std::uint64_t seed, std::int64_t id, double rate_min, double rate_max);

struct CampaignResult {
  int completed = 0;
  int skipped = 0;
  int failed = 0;
  std::string records_path;
};

/// Runs (or resumes) the FE campaign, appending JSON-lines records to
/// <out_dir>/records.jsonl and a manifest alongside. Individual solver
/// failures are logged and skipped; throws if more than
/// max_failure_fraction of the simulations fail.
CampaignResult run_campaign(const CampaignConfig& config, const fe::MaterialModel& mat,
                            const std::string& out_dir,
                            const std::function<void(int, int)>& progress = {});

std::vector<fe::SimulationRecord> load_records(const std::string& path);

struct TrainPipelineConfig {
  std::uint64_t seed = 1;
  int augment_k = 20;
  double strain_lo = 0.10;
  double strain_hi = 0.25;
  std::vector<int> hidden = {64, 64, 64};
  nn::TrainConfig train;
  std::string config_hash;
};

struct TrainPipelineResult {
  nn::Checkpoint checkpoint;
  nn::TrainResult train;
  data::DatasetManifest manifest;
  std::vector<data::SampleTensor> samples;
  data::DatasetSplit split;
  double test_mae = 0.0;  // scaled, held-out
};

/// records -> downsample -> augment x k (parents kept) -> group split ->
/// scaler fit on train -> GRU training -> checkpoint.
TrainPipelineResult build_and_train(const std::vector<fe::SimulationRecord>& records,
                                    const TrainPipelineConfig& config);

}  // namespace impactforge::pipeline
