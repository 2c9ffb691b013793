#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "impactforge/fesolver.hpp"
#include "impactforge/geometry.hpp"
#include "impactforge/rng.hpp"

namespace impactforge::data {

inline constexpr int kSeqLen = 50;
inline constexpr int kNumInputs = 8;
inline constexpr int kNumOutputs = 4;
inline constexpr int kNumChannels = kNumInputs + kNumOutputs;

/// One training sequence. Input channels 0-4 are the design parameters
/// (sides, nx, ny, angle, vf), constant in time; 5-7 are time, nominal
/// strain, and strain rate. Output channels: nominal stress, plastic
/// dissipation, elastic strain energy, absorbed energy (cumulative
/// integral of force over displacement). All values raw (unscaled).
struct SampleTensor {
  std::int64_t parent_id = -1;
  double final_strain = 0.0;
  std::array<std::vector<double>, kNumInputs> inputs;
  std::array<std::vector<double>, kNumOutputs> outputs;

  int length() const { return int(inputs[0].size()); }
};

/// Interpolate a record onto T uniformly spaced strain levels from 0 to
/// its final strain. Absorbed energy is the trapezoidal integral of
/// force over displacement computed on the raw grid, then interpolated.
SampleTensor downsample(const fe::SimulationRecord& record, int T = kSeqLen);

/// k children truncated at final strains drawn uniformly from
/// [strain_lo, strain_hi], each re-interpolated onto T uniform strain
/// points. The parent is not included in the returned list.
std::vector<SampleTensor> augment(const SampleTensor& sample, int k, double strain_lo,
                                  double strain_hi, Rng& rng);

/// Per-channel z-score parameters, fitted on the training partition
/// only. Constant channels keep std = 1 so they scale to zero.
struct ScalerParams {
  std::array<double, kNumChannels> mean{};
  std::array<double, kNumChannels> stddev{};
};

ScalerParams fit_scaler(const std::vector<SampleTensor>& samples,
                        const std::vector<std::size_t>& train_indices);
SampleTensor apply_scaler(const ScalerParams& scaler, const SampleTensor& sample);
SampleTensor invert_scaler(const ScalerParams& scaler, const SampleTensor& sample);

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
};

/// Deterministic 65/15/20 split at the parent-simulation level: all
/// augmented children of one simulation land in the same partition.
DatasetSplit split(const std::vector<SampleTensor>& samples, std::uint64_t seed);

struct DatasetManifest {
  std::uint64_t seed = 0;
  int augment_k = 20;
  double strain_lo = 0.10;
  double strain_hi = 0.25;
  int seq_len = kSeqLen;
  ScalerParams scaler;
  std::vector<std::int64_t> train_parents, validation_parents, test_parents;
  std::string config_hash;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

// JSON-lines persistence; doubles round-trip exactly.
void save_samples(const std::string& path, const std::vector<SampleTensor>& samples);
std::vector<SampleTensor> load_samples(const std::string& path);

std::string sample_to_jsonl(const SampleTensor& s);
SampleTensor sample_from_jsonl(const std::string& line);

/// Assemble the 8 input channels for one design/loading pair on the
/// uniform strain grid (used for both training tensors and inference).
std::array<std::vector<double>, kNumInputs> make_input_channels(
    const geom::DesignParams& design, double rate, double final_strain, int T = kSeqLen);

}  // namespace impactforge::data
