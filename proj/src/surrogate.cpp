#include "impactforge/surrogate.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "impactforge/rng.hpp"

namespace impactforge::nn {

namespace {

MatrixXd sigmoid(MatrixXd a) {
  return ((-a.array()).exp() + 1.0).inverse().matrix();
}

void fill_uniform(MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      m(r, c) = rng.uniform(-bound, bound);
    }
  }
}

}  // namespace

std::int64_t SurrogateModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    const std::int64_t in = l.input_dim(), h = l.hidden_dim();
    n += 3 * (in * h + h * h + h);
  }
  n += Wy.rows() * Wy.cols() + by.cols();
  return n;
}

SurrogateModel SurrogateModel::init(int input_dim, const std::vector<int>& hidden_dims,
                                    int output_dim, std::uint64_t seed) {
  if (hidden_dims.empty()) throw std::invalid_argument("init: need at least one layer");
  Rng rng(seed);
  SurrogateModel m;
  int in = input_dim;
  for (const int h : hidden_dims) {
    GruLayerParams p;
    const double wb = std::sqrt(6.0 / double(in + h));
    const double ub = std::sqrt(6.0 / double(2 * h));
    p.Wz.resize(in, h);
    p.Wr.resize(in, h);
    p.Wh.resize(in, h);
    p.Uz.resize(h, h);
    p.Ur.resize(h, h);
    p.Uh.resize(h, h);
    fill_uniform(p.Wz, wb, rng);
    fill_uniform(p.Wr, wb, rng);
    fill_uniform(p.Wh, wb, rng);
    fill_uniform(p.Uz, ub, rng);
    fill_uniform(p.Ur, ub, rng);
    fill_uniform(p.Uh, ub, rng);
    p.bz = RowVectorXd::Zero(h);
    p.br = RowVectorXd::Zero(h);
    p.bh = RowVectorXd::Zero(h);
    m.layers.push_back(std::move(p));
    in = h;
  }
  m.Wy.resize(in, output_dim);
  MatrixXd wy(in, output_dim);
  fill_uniform(wy, std::sqrt(6.0 / double(in + output_dim)), rng);
  m.Wy = wy;
  m.by = RowVectorXd::Zero(output_dim);
  return m;
}

VectorXd gru_cell(const VectorXd& x, const VectorXd& h_prev, const GruLayerParams& p) {
  if (x.size() != p.input_dim() || h_prev.size() != p.hidden_dim()) {
    throw std::invalid_argument("gru_cell: shape mismatch");
  }
  const RowVectorXd xr = x.transpose();
  const RowVectorXd hr = h_prev.transpose();
  const RowVectorXd z = sigmoid(xr * p.Wz + hr * p.Uz + p.bz);
  const RowVectorXd r = sigmoid(xr * p.Wr + hr * p.Ur + p.br);
  const RowVectorXd rh = r.cwiseProduct(hr);
  const RowVectorXd hc = (xr * p.Wh + rh * p.Uh + p.bh).array().tanh().matrix();
  const RowVectorXd h = hr + z.cwiseProduct(hc - hr);
  return h.transpose();
}

namespace {

struct LayerCache {
  std::vector<MatrixXd> h;  // T+1, h[0] zero
  std::vector<MatrixXd> z, r, hc;
};

// Layer-by-layer batched pass caching everything BPTT needs. Layer l>0
// consumes caches[l-1].h[t+1]. xs: T matrices of B x in.
void forward_cached(const SurrogateModel& m, const std::vector<MatrixXd>& xs,
                    std::vector<LayerCache>& caches, std::vector<MatrixXd>& preds) {
  const std::size_t T = xs.size();
  const Eigen::Index B = xs[0].rows();
  caches.assign(m.layers.size(), LayerCache{});
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& p = m.layers[l];
    auto& c = caches[l];
    const int H = p.hidden_dim();
    c.h.resize(T + 1);
    c.z.resize(T);
    c.r.resize(T);
    c.hc.resize(T);
    c.h[0] = MatrixXd::Zero(B, H);
    for (std::size_t t = 0; t < T; ++t) {
      const MatrixXd& x = l == 0 ? xs[t] : caches[l - 1].h[t + 1];
      const MatrixXd& hp = c.h[t];
      MatrixXd az = x * p.Wz + hp * p.Uz;
      az.rowwise() += p.bz;
      c.z[t] = sigmoid(std::move(az));
      MatrixXd ar = x * p.Wr + hp * p.Ur;
      ar.rowwise() += p.br;
      c.r[t] = sigmoid(std::move(ar));
      MatrixXd ah = x * p.Wh + c.r[t].cwiseProduct(hp) * p.Uh;
      ah.rowwise() += p.bh;
      c.hc[t] = ah.array().tanh().matrix();
      c.h[t + 1] = hp + c.z[t].cwiseProduct(c.hc[t] - hp);
    }
  }
  const auto& top = caches.back();
  preds.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    preds[t] = top.h[t + 1] * m.Wy;
    preds[t].rowwise() += m.by;
  }
}

// Inference-only pass, O(B*H) memory.
void forward_nocache(const SurrogateModel& m, const std::vector<MatrixXd>& xs,
                     std::vector<MatrixXd>& preds) {
  const std::size_t T = xs.size();
  const Eigen::Index B = xs[0].rows();
  std::vector<MatrixXd> h(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    h[l] = MatrixXd::Zero(B, m.layers[l].hidden_dim());
  }
  preds.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const MatrixXd* x = &xs[t];
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& p = m.layers[l];
      MatrixXd az = (*x) * p.Wz + h[l] * p.Uz;
      az.rowwise() += p.bz;
      const MatrixXd z = sigmoid(std::move(az));
      MatrixXd ar = (*x) * p.Wr + h[l] * p.Ur;
      ar.rowwise() += p.br;
      const MatrixXd r = sigmoid(std::move(ar));
      MatrixXd ah = (*x) * p.Wh + r.cwiseProduct(h[l]) * p.Uh;
      ah.rowwise() += p.bh;
      const MatrixXd hc = ah.array().tanh().matrix();
      h[l] = h[l] + z.cwiseProduct(hc - h[l]);
      x = &h[l];
    }
    preds[t] = h.back() * m.Wy;
    preds[t].rowwise() += m.by;
  }
}

Gradients zero_gradients(const SurrogateModel& m) {
  Gradients g;
  g.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& p = m.layers[l];
    auto& gl = g.layers[l];
    gl.Wz = MatrixXd::Zero(p.Wz.rows(), p.Wz.cols());
    gl.Wr = MatrixXd::Zero(p.Wr.rows(), p.Wr.cols());
    gl.Wh = MatrixXd::Zero(p.Wh.rows(), p.Wh.cols());
    gl.Uz = MatrixXd::Zero(p.Uz.rows(), p.Uz.cols());
    gl.Ur = MatrixXd::Zero(p.Ur.rows(), p.Ur.cols());
    gl.Uh = MatrixXd::Zero(p.Uh.rows(), p.Uh.cols());
    gl.bz = RowVectorXd::Zero(p.bz.cols());
    gl.br = RowVectorXd::Zero(p.br.cols());
    gl.bh = RowVectorXd::Zero(p.bh.cols());
  }
  g.Wy = MatrixXd::Zero(m.Wy.rows(), m.Wy.cols());
  g.by = RowVectorXd::Zero(m.by.cols());
  return g;
}

// BPTT given dL/dpred per step. xs are the layer-0 inputs.
Gradients backward_batch(const SurrogateModel& m, const std::vector<MatrixXd>& xs,
                         const std::vector<LayerCache>& caches,
                         const std::vector<MatrixXd>& dpreds) {
  const std::size_t T = xs.size();
  const Eigen::Index B = xs[0].rows();
  const std::size_t L = m.layers.size();
  Gradients g = zero_gradients(m);

  // Head, and the incoming dL/dh for the top layer.
  std::vector<MatrixXd> dhs(T);
  const auto& top = caches.back();
  for (std::size_t t = 0; t < T; ++t) {
    g.Wy.noalias() += top.h[t + 1].transpose() * dpreds[t];
    g.by += dpreds[t].colwise().sum();
    dhs[t].noalias() = dpreds[t] * m.Wy.transpose();
  }

  for (std::size_t li = L; li-- > 0;) {
    const auto& p = m.layers[li];
    const auto& c = caches[li];
    auto& gl = g.layers[li];
    const int H = p.hidden_dim();
    std::vector<MatrixXd> dxs;
    if (li > 0) {
      dxs.assign(T, MatrixXd::Zero(B, m.layers[li - 1].hidden_dim()));
    }
    MatrixXd carry = MatrixXd::Zero(B, H);
    for (std::size_t t = T; t-- > 0;) {
      const MatrixXd& x = li == 0 ? xs[t] : caches[li - 1].h[t + 1];
      const MatrixXd& hp = c.h[t];
      const MatrixXd& z = c.z[t];
      const MatrixXd& r = c.r[t];
      const MatrixXd& hc = c.hc[t];

      const MatrixXd grad = dhs[t] + carry;
      const MatrixXd dhc = grad.cwiseProduct(z);
      const MatrixXd dz = grad.cwiseProduct(hc - hp);
      MatrixXd dhp = grad - grad.cwiseProduct(z);  // (1-z) term

      const MatrixXd dah = dhc.cwiseProduct(MatrixXd::Ones(B, H) - hc.cwiseProduct(hc));
      const MatrixXd rh = r.cwiseProduct(hp);
      gl.Wh.noalias() += x.transpose() * dah;
      gl.Uh.noalias() += rh.transpose() * dah;
      gl.bh += dah.colwise().sum();
      const MatrixXd drh = dah * p.Uh.transpose();
      const MatrixXd dr = drh.cwiseProduct(hp);
      dhp += drh.cwiseProduct(r);

      const MatrixXd daz = dz.cwiseProduct(z).cwiseProduct(MatrixXd::Ones(B, H) - z);
      gl.Wz.noalias() += x.transpose() * daz;
      gl.Uz.noalias() += hp.transpose() * daz;
      gl.bz += daz.colwise().sum();
      dhp.noalias() += daz * p.Uz.transpose();

      const MatrixXd dar = dr.cwiseProduct(r).cwiseProduct(MatrixXd::Ones(B, H) - r);
      gl.Wr.noalias() += x.transpose() * dar;
      gl.Ur.noalias() += hp.transpose() * dar;
      gl.br += dar.colwise().sum();
      dhp.noalias() += dar * p.Ur.transpose();

      if (li > 0) {
        dxs[t].noalias() = daz * p.Wz.transpose();
        dxs[t].noalias() += dar * p.Wr.transpose();
        dxs[t].noalias() += dah * p.Wh.transpose();
      }
      carry = dhp;
    }
    if (li > 0) dhs = std::move(dxs);
  }
  return g;
}

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

MatrixXd forward(const SurrogateModel& model, const MatrixXd& inputs) {
  if (int(inputs.cols()) != model.input_dim()) {
    throw std::invalid_argument("forward: input width mismatch");
  }
  const std::size_t T = std::size_t(inputs.rows());
  std::vector<MatrixXd> xs(T);
  for (std::size_t t = 0; t < T; ++t) xs[t] = inputs.row(Eigen::Index(t));
  std::vector<MatrixXd> preds;
  forward_nocache(model, xs, preds);
  MatrixXd out(inputs.rows(), model.output_dim());
  for (std::size_t t = 0; t < T; ++t) {
    if (!preds[t].allFinite()) {
      throw std::runtime_error("forward: non-finite activation at step " + std::to_string(t));
    }
    out.row(Eigen::Index(t)) = preds[t];
  }
  return out;
}

double mae(const MatrixXd& y, const MatrixXd& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) {
    throw std::invalid_argument("mae: shape mismatch");
  }
  return (y - y_hat).array().abs().sum() / double(y.size());
}

double mse(const MatrixXd& y, const MatrixXd& y_hat) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) {
    throw std::invalid_argument("mse: shape mismatch");
  }
  return (y - y_hat).array().square().sum() / double(y.size());
}

Gradients backward(const SurrogateModel& model, const MatrixXd& inputs,
                   const MatrixXd& targets) {
  const std::size_t T = std::size_t(inputs.rows());
  std::vector<MatrixXd> xs(T);
  for (std::size_t t = 0; t < T; ++t) xs[t] = inputs.row(Eigen::Index(t));
  std::vector<LayerCache> caches;
  std::vector<MatrixXd> preds;
  forward_cached(model, xs, caches, preds);
  const double n = double(inputs.rows()) * double(model.output_dim());
  std::vector<MatrixXd> dpreds(T);
  for (std::size_t t = 0; t < T; ++t) {
    MatrixXd d(1, model.output_dim());
    for (int c = 0; c < model.output_dim(); ++c) {
      d(0, c) = sign0(preds[t](0, c) - targets(Eigen::Index(t), c)) / n;
    }
    dpreds[t] = d;
  }
  return backward_batch(model, xs, caches, dpreds);
}

namespace {

struct AdamState {
  Gradients m, v;
  std::int64_t t = 0;
};

void adam_tensor(MatrixXd& p, const MatrixXd& g, MatrixXd& m, MatrixXd& v,
                 const TrainConfig& cfg, double lr, double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v.array().matrix() + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

void adam_vector(RowVectorXd& p, const RowVectorXd& g, RowVectorXd& m, RowVectorXd& v,
                 const TrainConfig& cfg, double lr, double bc1, double bc2) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

void adam_step(SurrogateModel& model, const Gradients& g, AdamState& st,
               const TrainConfig& cfg, double lr) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& p = model.layers[l];
    const auto& gl = g.layers[l];
    auto& ml = st.m.layers[l];
    auto& vl = st.v.layers[l];
    adam_tensor(p.Wz, gl.Wz, ml.Wz, vl.Wz, cfg, lr, bc1, bc2);
    adam_tensor(p.Wr, gl.Wr, ml.Wr, vl.Wr, cfg, lr, bc1, bc2);
    adam_tensor(p.Wh, gl.Wh, ml.Wh, vl.Wh, cfg, lr, bc1, bc2);
    adam_tensor(p.Uz, gl.Uz, ml.Uz, vl.Uz, cfg, lr, bc1, bc2);
    adam_tensor(p.Ur, gl.Ur, ml.Ur, vl.Ur, cfg, lr, bc1, bc2);
    adam_tensor(p.Uh, gl.Uh, ml.Uh, vl.Uh, cfg, lr, bc1, bc2);
    adam_vector(p.bz, gl.bz, ml.bz, vl.bz, cfg, lr, bc1, bc2);
    adam_vector(p.br, gl.br, ml.br, vl.br, cfg, lr, bc1, bc2);
    adam_vector(p.bh, gl.bh, ml.bh, vl.bh, cfg, lr, bc1, bc2);
  }
  adam_tensor(model.Wy, g.Wy, st.m.Wy, st.v.Wy, cfg, lr, bc1, bc2);
  adam_vector(model.by, g.by, st.m.by, st.v.by, cfg, lr, bc1, bc2);
}

struct ScaledTensors {
  std::vector<MatrixXd> x;  // per sample, T x in
  std::vector<MatrixXd> y;  // per sample, T x out
};

ScaledTensors scale_samples(const std::vector<data::SampleTensor>& samples,
                            const data::ScalerParams& scaler) {
  ScaledTensors out;
  out.x.reserve(samples.size());
  out.y.reserve(samples.size());
  for (const auto& s : samples) {
    const int T = s.length();
    MatrixXd x(T, data::kNumInputs), y(T, data::kNumOutputs);
    for (int c = 0; c < data::kNumInputs; ++c) {
      const double m = scaler.mean[std::size_t(c)], sd = scaler.stddev[std::size_t(c)];
      for (int t = 0; t < T; ++t) x(t, c) = (s.inputs[std::size_t(c)][std::size_t(t)] - m) / sd;
    }
    for (int c = 0; c < data::kNumOutputs; ++c) {
      const std::size_t ch = std::size_t(c + data::kNumInputs);
      const double m = scaler.mean[ch], sd = scaler.stddev[ch];
      for (int t = 0; t < T; ++t) y(t, c) = (s.outputs[std::size_t(c)][std::size_t(t)] - m) / sd;
    }
    out.x.push_back(std::move(x));
    out.y.push_back(std::move(y));
  }
  return out;
}

void gather_batch(const ScaledTensors& tensors, const std::vector<std::size_t>& idx,
                  std::size_t begin, std::size_t end, std::vector<MatrixXd>& xs,
                  std::vector<MatrixXd>& ys) {
  const std::size_t B = end - begin;
  const std::size_t T = std::size_t(tensors.x[idx[begin]].rows());
  xs.assign(T, MatrixXd(B, tensors.x[idx[begin]].cols()));
  ys.assign(T, MatrixXd(B, tensors.y[idx[begin]].cols()));
  for (std::size_t b = 0; b < B; ++b) {
    const MatrixXd& x = tensors.x[idx[begin + b]];
    const MatrixXd& y = tensors.y[idx[begin + b]];
    for (std::size_t t = 0; t < T; ++t) {
      xs[t].row(Eigen::Index(b)) = x.row(Eigen::Index(t));
      ys[t].row(Eigen::Index(b)) = y.row(Eigen::Index(t));
    }
  }
}

double eval_mae(const SurrogateModel& model, const ScaledTensors& tensors,
                const std::vector<std::size_t>& idx, int batch_size) {
  if (idx.empty()) return 0.0;
  double abs_sum = 0.0;
  double count = 0.0;
  std::vector<MatrixXd> xs, ys, preds;
  for (std::size_t begin = 0; begin < idx.size(); begin += std::size_t(batch_size)) {
    const std::size_t end = std::min(idx.size(), begin + std::size_t(batch_size));
    gather_batch(tensors, idx, begin, end, xs, ys);
    forward_nocache(model, xs, preds);
    for (std::size_t t = 0; t < xs.size(); ++t) {
      abs_sum += (preds[t] - ys[t]).array().abs().sum();
      count += double(preds[t].size());
    }
  }
  return abs_sum / count;
}

}  // namespace

TrainResult train(const SurrogateModel& model, const TrainingSet& set,
                  const TrainConfig& config) {
  if (set.samples == nullptr || set.split.train.empty()) {
    throw std::invalid_argument("train: empty training set");
  }
  if (!(config.learning_rate >= 0.0) || config.epochs < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train: bad config");
  }
  const auto tensors = scale_samples(*set.samples, set.scaler);

  TrainResult result;
  result.model = model;
  SurrogateModel current = model;
  AdamState adam;
  adam.m = zero_gradients(model);
  adam.v = zero_gradients(model);

  Rng rng(config.seed ^ 0x7261696e55ULL);
  std::vector<std::size_t> order = set.split.train;
  result.best_val_mae = std::numeric_limits<double>::infinity();

  const auto t_start = std::chrono::steady_clock::now();
  std::vector<MatrixXd> xs, ys, preds, dpreds;
  std::vector<LayerCache> caches;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.cosine_decay) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(config.epochs)));
    }
    rng.shuffle(order);
    double abs_sum = 0.0, count = 0.0;
    bool bad = false;
    for (std::size_t begin = 0; begin < order.size() && !bad;
         begin += std::size_t(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + std::size_t(config.batch_size));
      gather_batch(tensors, order, begin, end, xs, ys);
      forward_cached(current, xs, caches, preds);

      const double n = double(end - begin) * double(xs.size()) * double(current.output_dim());
      dpreds.resize(xs.size());
      double batch_abs = 0.0;
      for (std::size_t t = 0; t < xs.size(); ++t) {
        const MatrixXd resid = preds[t] - ys[t];
        batch_abs += resid.array().abs().sum();
        dpreds[t] = resid.unaryExpr([](double v) { return sign0(v); }) / n;
      }
      if (!std::isfinite(batch_abs)) {
        bad = true;
        break;
      }
      abs_sum += batch_abs;
      count += n;
      const Gradients g = backward_batch(current, xs, caches, dpreds);
      adam_step(current, g, adam, config, lr);
    }
    if (bad) {
      result.aborted_non_finite = true;
      break;
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_mae = abs_sum / count;
    st.val_mae = eval_mae(current, tensors, set.split.validation, config.batch_size);
    st.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.history.push_back(st);

    const double gate = set.split.validation.empty() ? st.train_mae : st.val_mae;
    if (!std::isfinite(gate)) {
      result.aborted_non_finite = true;
      break;
    }
    if (gate < result.best_val_mae) {
      result.best_val_mae = gate;
      result.best_epoch = epoch;
      result.model = current;
    }
  }
  return result;
}

double evaluate_mae(const SurrogateModel& model, const std::vector<data::SampleTensor>& samples,
                    const std::vector<std::size_t>& indices, const data::ScalerParams& scaler,
                    int batch_size) {
  std::vector<data::SampleTensor> subset;
  subset.reserve(indices.size());
  for (const auto i : indices) subset.push_back(samples[i]);
  const auto tensors = scale_samples(subset, scaler);
  std::vector<std::size_t> idx(subset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return eval_mae(model, tensors, idx, batch_size);
}

InputRanges InputRanges::from_training(const std::vector<data::SampleTensor>& samples,
                                       const std::vector<std::size_t>& train_indices) {
  InputRanges r;
  r.min.fill(std::numeric_limits<double>::infinity());
  r.max.fill(-std::numeric_limits<double>::infinity());
  for (const std::size_t i : train_indices) {
    for (int c = 0; c < data::kNumInputs; ++c) {
      for (const double v : samples[i].inputs[std::size_t(c)]) {
        r.min[std::size_t(c)] = std::min(r.min[std::size_t(c)], v);
        r.max[std::size_t(c)] = std::max(r.max[std::size_t(c)], v);
      }
    }
  }
  return r;
}

namespace {

void write_f64(std::ofstream& f, const double* p, std::size_t n) {
  f.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(double)));
}

void read_f64(std::ifstream& f, double* p, std::size_t n) {
  f.read(reinterpret_cast<char*>(p), std::streamsize(n * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
}

void write_matrix(std::ofstream& f, const MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      write_f64(f, &v, 1);
    }
  }
}

void read_matrix(std::ifstream& f, MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double v;
      read_f64(f, &v, 1);
      m(r, c) = v;
    }
  }
}

constexpr char kMagic[8] = {'I', 'F', 'S', 'U', 'R', 'R', '0', '1'};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  const auto& m = ckpt.model;
  const std::uint32_t nl = std::uint32_t(m.layers.size());
  const std::uint32_t in = std::uint32_t(m.input_dim());
  const std::uint32_t out = std::uint32_t(m.output_dim());
  f.write(reinterpret_cast<const char*>(&nl), 4);
  f.write(reinterpret_cast<const char*>(&in), 4);
  f.write(reinterpret_cast<const char*>(&out), 4);
  for (const auto& l : m.layers) {
    const std::uint32_t h = std::uint32_t(l.hidden_dim());
    f.write(reinterpret_cast<const char*>(&h), 4);
  }
  write_f64(f, ckpt.scaler.mean.data(), ckpt.scaler.mean.size());
  write_f64(f, ckpt.scaler.stddev.data(), ckpt.scaler.stddev.size());
  write_f64(f, ckpt.ranges.min.data(), ckpt.ranges.min.size());
  write_f64(f, ckpt.ranges.max.data(), ckpt.ranges.max.size());
  for (const auto& l : m.layers) {
    write_matrix(f, l.Wz);
    write_matrix(f, l.Uz);
    write_matrix(f, MatrixXd(l.bz));
    write_matrix(f, l.Wr);
    write_matrix(f, l.Ur);
    write_matrix(f, MatrixXd(l.br));
    write_matrix(f, l.Wh);
    write_matrix(f, l.Uh);
    write_matrix(f, MatrixXd(l.bh));
  }
  write_matrix(f, m.Wy);
  write_matrix(f, MatrixXd(m.by));
  if (!f) throw std::runtime_error("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::uint32_t nl, in, out;
  f.read(reinterpret_cast<char*>(&nl), 4);
  f.read(reinterpret_cast<char*>(&in), 4);
  f.read(reinterpret_cast<char*>(&out), 4);
  if (!f || nl == 0 || nl > 64) throw std::runtime_error("load_checkpoint: bad header");
  std::vector<int> hidden(nl);
  for (auto& h : hidden) {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    h = int(v);
  }
  Checkpoint ckpt;
  read_f64(f, ckpt.scaler.mean.data(), ckpt.scaler.mean.size());
  read_f64(f, ckpt.scaler.stddev.data(), ckpt.scaler.stddev.size());
  read_f64(f, ckpt.ranges.min.data(), ckpt.ranges.min.size());
  read_f64(f, ckpt.ranges.max.data(), ckpt.ranges.max.size());

  auto& m = ckpt.model;
  int prev = int(in);
  for (const int h : hidden) {
    GruLayerParams p;
    p.Wz.resize(prev, h);
    p.Uz.resize(h, h);
    p.bz.resize(h);
    p.Wr.resize(prev, h);
    p.Ur.resize(h, h);
    p.br.resize(h);
    p.Wh.resize(prev, h);
    p.Uh.resize(h, h);
    p.bh.resize(h);
    read_matrix(f, p.Wz);
    read_matrix(f, p.Uz);
    MatrixXd b(1, h);
    read_matrix(f, b);
    p.bz = b;
    read_matrix(f, p.Wr);
    read_matrix(f, p.Ur);
    read_matrix(f, b);
    p.br = b;
    read_matrix(f, p.Wh);
    read_matrix(f, p.Uh);
    read_matrix(f, b);
    p.bh = b;
    m.layers.push_back(std::move(p));
    prev = h;
  }
  m.Wy.resize(prev, int(out));
  read_matrix(f, m.Wy);
  MatrixXd b(1, int(out));
  read_matrix(f, b);
  m.by = b;
  return ckpt;
}

namespace {

bool outside(double v, double lo, double hi) {
  const double tol = 1e-9 * std::max({1.0, std::abs(lo), std::abs(hi)});
  return v < lo - tol || v > hi + tol;
}

}  // namespace

std::vector<PredictionResult> predict_batch(
    const Checkpoint& ckpt,
    const std::vector<std::tuple<geom::DesignParams, double, double>>& queries, int T) {
  std::vector<PredictionResult> results(queries.size());
  if (queries.empty()) return results;
  const Eigen::Index B = Eigen::Index(queries.size());
  std::vector<MatrixXd> xs(std::size_t(T), MatrixXd(B, data::kNumInputs));

  std::vector<std::array<std::vector<double>, data::kNumInputs>> raw(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& [design, rate, final_strain] = queries[qi];
    raw[qi] = data::make_input_channels(design, rate, final_strain, T);
    bool extra = false;
    for (int c = 0; c < data::kNumInputs; ++c) {
      for (const double v : raw[qi][std::size_t(c)]) {
        if (outside(v, ckpt.ranges.min[std::size_t(c)], ckpt.ranges.max[std::size_t(c)])) {
          extra = true;
          break;
        }
      }
      if (extra) break;
    }
    results[qi].extrapolated = extra;
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < data::kNumInputs; ++c) {
        const double m = ckpt.scaler.mean[std::size_t(c)];
        const double sd = ckpt.scaler.stddev[std::size_t(c)];
        xs[std::size_t(t)](Eigen::Index(qi), c) =
            (raw[qi][std::size_t(c)][std::size_t(t)] - m) / sd;
      }
    }
  }

  std::vector<MatrixXd> preds;
  forward_nocache(ckpt.model, xs, preds);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    for (int c = 0; c < data::kNumOutputs; ++c) {
      auto& v = results[qi].outputs[std::size_t(c)];
      v.resize(std::size_t(T));
      const std::size_t ch = std::size_t(c + data::kNumInputs);
      const double m = ckpt.scaler.mean[ch];
      const double sd = ckpt.scaler.stddev[ch];
      for (int t = 0; t < T; ++t) {
        v[std::size_t(t)] = preds[std::size_t(t)](Eigen::Index(qi), c) * sd + m;
      }
    }
  }
  return results;
}

PredictionResult predict(const Checkpoint& ckpt, const geom::DesignParams& design,
                         double rate, double final_strain, int T) {
  return predict_batch(ckpt, {{design, rate, final_strain}}, T).front();
}

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_history_csv: cannot open " + path);
  f << "epoch,train_mae,val_mae,wall_s\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.3f\n", h.epoch, h.train_mae, h.val_mae,
                  h.wall_s);
    f << buf;
  }
}

}  // namespace impactforge::nn
