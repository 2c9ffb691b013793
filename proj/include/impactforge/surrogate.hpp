#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "impactforge/dataset.hpp"
#include "impactforge/geometry.hpp"

namespace impactforge::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

/// One GRU layer. Kernels are input-major (W: in x hidden, U:
/// hidden x hidden), one bias per gate. Convention:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   hc = tanh(x Wh + (r .* h) Uh + bh)
///   h' = (1 - z) .* h + z .* hc
struct GruLayerParams {
  MatrixXd Wz, Wr, Wh;
  MatrixXd Uz, Ur, Uh;
  RowVectorXd bz, br, bh;

  int input_dim() const { return int(Wz.rows()); }
  int hidden_dim() const { return int(Wz.cols()); }
};

struct SurrogateModel {
  std::vector<GruLayerParams> layers;
  MatrixXd Wy;      // hidden x out, applied at every step
  RowVectorXd by;

  int input_dim() const { return layers.front().input_dim(); }
  int output_dim() const { return int(Wy.cols()); }
  std::int64_t parameter_count() const;

  /// Glorot-style uniform init: W in +-sqrt(6/(in+hidden)), U in
  /// +-sqrt(6/(2*hidden)), biases zero. Deterministic in the seed.
  static SurrogateModel init(int input_dim, const std::vector<int>& hidden_dims,
                             int output_dim, std::uint64_t seed);
};

/// Single-step cell update for one sample.
VectorXd gru_cell(const VectorXd& x, const VectorXd& h_prev, const GruLayerParams& p);

/// Full sequence pass for one sample: T x in -> T x out. Initial hidden
/// states are zero. Throws on a non-finite activation.
MatrixXd forward(const SurrogateModel& model, const MatrixXd& inputs);

double mae(const MatrixXd& y, const MatrixXd& y_hat);
double mse(const MatrixXd& y, const MatrixXd& y_hat);

struct GruLayerGrads {
  MatrixXd Wz, Wr, Wh, Uz, Ur, Uh;
  RowVectorXd bz, br, bh;
};

struct Gradients {
  std::vector<GruLayerGrads> layers;
  MatrixXd Wy;
  RowVectorXd by;
};

/// Exact MAE gradients via backpropagation through time (subgradient 0
/// at zero residual). Single sample; the batched path inside train()
/// computes the identical quantity summed over the batch.
Gradients backward(const SurrogateModel& model, const MatrixXd& inputs,
                   const MatrixXd& targets);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 150;
  int batch_size = 600;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool cosine_decay = false;  // constant learning rate by default
};

struct EpochStats {
  int epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double wall_s = 0.0;
};

struct TrainResult {
  SurrogateModel model;  // best-validation checkpoint
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_mae = 0.0;
  bool aborted_non_finite = false;
};

/// Raw samples plus split; scaling happens inside train with the given
/// scaler (fitted on the training partition).
struct TrainingSet {
  const std::vector<data::SampleTensor>* samples = nullptr;
  data::DatasetSplit split;
  data::ScalerParams scaler;
};

TrainResult train(const SurrogateModel& model, const TrainingSet& set, const TrainConfig& config);

/// Scaled MAE of the model over a subset of samples.
double evaluate_mae(const SurrogateModel& model, const std::vector<data::SampleTensor>& samples,
                    const std::vector<std::size_t>& indices, const data::ScalerParams& scaler,
                    int batch_size = 600);

/// Input-channel ranges observed on the training partition; predictions
/// outside them are flagged as extrapolation.
struct InputRanges {
  std::array<double, data::kNumInputs> min{};
  std::array<double, data::kNumInputs> max{};

  static InputRanges from_training(const std::vector<data::SampleTensor>& samples,
                                   const std::vector<std::size_t>& train_indices);
};

struct Checkpoint {
  SurrogateModel model;
  data::ScalerParams scaler;
  InputRanges ranges;
};

// Binary checkpoint layout (little endian):
//   magic "IFSURR01" (8 bytes)
//   u32 n_layers, u32 input_dim, u32 output_dim, u32 hidden[n_layers]
//   f64 scaler mean[12], f64 scaler stddev[12]
//   f64 range min[8], f64 range max[8]
//   per layer: Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh  (row-major f64)
//   head: Wy (row-major), by
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct PredictionResult {
  std::array<std::vector<double>, data::kNumOutputs> outputs;  // unscaled
  bool extrapolated = false;
};

/// Build the 50x8 input for one design/loading pair, scale, run the
/// model, inverse-scale the outputs.
PredictionResult predict(const Checkpoint& ckpt, const geom::DesignParams& design,
                         double rate, double final_strain, int T = data::kSeqLen);

/// Batched inference. Per-sample results match predict() up to the
/// floating-point reassociation of the batched matrix products.
std::vector<PredictionResult> predict_batch(
    const Checkpoint& ckpt,
    const std::vector<std::tuple<geom::DesignParams, double, double>>& queries,
    int T = data::kSeqLen);

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace impactforge::nn
