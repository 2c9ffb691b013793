#include "impactforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace impactforge::data {

namespace {

// Piecewise-linear interpolation of (xs, ys) at x; xs non-decreasing.
double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = std::size_t(it - xs.begin()) - 1;
  const double span = xs[i + 1] - xs[i];
  if (span <= 0.0) return ys[i];
  const double t = (x - xs[i]) / span;
  return ys[i] + t * (ys[i + 1] - ys[i]);
}

std::vector<double> strain_grid(double final_strain, int T) {
  std::vector<double> g(std::size_t(T), 0.0);
  for (int k = 0; k < T; ++k) {
    g[std::size_t(k)] = T > 1 ? final_strain * double(k) / double(T - 1) : final_strain;
  }
  if (T > 1) g.back() = final_strain;
  return g;
}

SampleTensor resample_onto(const SampleTensor& parent, double final_strain, int T) {
  SampleTensor child;
  child.parent_id = parent.parent_id;
  child.final_strain = final_strain;
  const auto& strain = parent.inputs[6];
  const auto grid = strain_grid(final_strain, T);

  for (int c = 0; c < kNumInputs; ++c) {
    auto& dst = child.inputs[std::size_t(c)];
    dst.resize(std::size_t(T));
    if (c < 5) {
      std::fill(dst.begin(), dst.end(), parent.inputs[std::size_t(c)].front());
    } else if (c == 6) {
      dst = grid;
    } else {
      for (int k = 0; k < T; ++k) {
        dst[std::size_t(k)] = interp(strain, parent.inputs[std::size_t(c)], grid[std::size_t(k)]);
      }
    }
  }
  for (int c = 0; c < kNumOutputs; ++c) {
    auto& dst = child.outputs[std::size_t(c)];
    dst.resize(std::size_t(T));
    for (int k = 0; k < T; ++k) {
      dst[std::size_t(k)] = interp(strain, parent.outputs[std::size_t(c)], grid[std::size_t(k)]);
    }
  }
  return child;
}

}  // namespace

std::array<std::vector<double>, kNumInputs> make_input_channels(
    const geom::DesignParams& design, double rate, double final_strain, int T) {
  std::array<std::vector<double>, kNumInputs> ch;
  const auto grid = strain_grid(final_strain, T);
  for (auto& v : ch) v.resize(std::size_t(T));
  for (int k = 0; k < T; ++k) {
    const std::size_t u = std::size_t(k);
    ch[0][u] = double(design.sides);
    ch[1][u] = double(design.nx);
    ch[2][u] = double(design.ny);
    ch[3][u] = design.angle;
    ch[4][u] = design.vf;
    ch[5][u] = rate > 0.0 ? grid[u] / rate : 0.0;
    ch[6][u] = grid[u];
    ch[7][u] = rate;
  }
  return ch;
}

SampleTensor downsample(const fe::SimulationRecord& record, int T) {
  if (record.strain.size() < 2) {
    throw std::invalid_argument("downsample: record must have at least 2 points");
  }
  if (T < 2) throw std::invalid_argument("downsample: T must be >= 2");

  const double final_strain = record.strain.back();
  SampleTensor s;
  s.parent_id = record.id;
  s.final_strain = final_strain;
  s.inputs = make_input_channels(record.design, record.rate, final_strain, T);
  // Time from the actual record (identical to strain/rate for the
  // constant-rate loading, but interpolate to stay faithful).
  const auto grid = strain_grid(final_strain, T);
  for (int k = 0; k < T; ++k) {
    s.inputs[5][std::size_t(k)] = interp(record.strain, record.time, grid[std::size_t(k)]);
  }

  // Absorbed energy: cumulative trapezoid of force over displacement on
  // the raw grid.
  std::vector<double> absorbed(record.strain.size(), 0.0);
  const double width_m = geom::kSpecimenSize * 1e-3;
  for (std::size_t i = 1; i < record.strain.size(); ++i) {
    const double dx = (record.strain[i] - record.strain[i - 1]) * width_m;
    absorbed[i] = absorbed[i - 1] + 0.5 * (record.force[i] + record.force[i - 1]) * dx;
  }

  const std::array<const std::vector<double>*, kNumOutputs> src = {
      &record.stress, &record.E_pl, &record.E_el, &absorbed};
  for (int c = 0; c < kNumOutputs; ++c) {
    s.outputs[std::size_t(c)].resize(std::size_t(T));
    for (int k = 0; k < T; ++k) {
      s.outputs[std::size_t(c)][std::size_t(k)] =
          interp(record.strain, *src[std::size_t(c)], grid[std::size_t(k)]);
    }
  }
  return s;
}

std::vector<SampleTensor> augment(const SampleTensor& sample, int k, double strain_lo,
                                  double strain_hi, Rng& rng) {
  if (k < 1) throw std::invalid_argument("augment: k must be >= 1");
  if (!(strain_lo < strain_hi && strain_hi <= sample.final_strain + 1e-12)) {
    throw std::invalid_argument("augment: need strain_lo < strain_hi <= parent final strain");
  }
  std::vector<SampleTensor> children;
  children.reserve(std::size_t(k));
  for (int i = 0; i < k; ++i) {
    const double ef = rng.uniform(strain_lo, strain_hi);
    children.push_back(resample_onto(sample, ef, sample.length()));
  }
  return children;
}

ScalerParams fit_scaler(const std::vector<SampleTensor>& samples,
                        const std::vector<std::size_t>& train_indices) {
  if (train_indices.empty()) throw std::invalid_argument("fit_scaler: empty training set");
  ScalerParams p;
  for (int c = 0; c < kNumChannels; ++c) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (const std::size_t idx : train_indices) {
      const auto& v = c < kNumInputs ? samples[idx].inputs[std::size_t(c)]
                                     : samples[idx].outputs[std::size_t(c - kNumInputs)];
      for (const double x : v) {
        sum += x;
        sum2 += x * x;
        ++n;
      }
    }
    const double mean = sum / double(n);
    const double var = std::max(0.0, sum2 / double(n) - mean * mean);
    double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) sd = 1.0;  // constant channel
    p.mean[std::size_t(c)] = mean;
    p.stddev[std::size_t(c)] = sd;
  }
  return p;
}

namespace {

SampleTensor transform(const ScalerParams& p, const SampleTensor& s, bool forward) {
  SampleTensor out = s;
  for (int c = 0; c < kNumChannels; ++c) {
    auto& v = c < kNumInputs ? out.inputs[std::size_t(c)]
                             : out.outputs[std::size_t(c - kNumInputs)];
    const double m = p.mean[std::size_t(c)];
    const double sd = p.stddev[std::size_t(c)];
    for (double& x : v) x = forward ? (x - m) / sd : x * sd + m;
  }
  return out;
}

}  // namespace

SampleTensor apply_scaler(const ScalerParams& p, const SampleTensor& s) {
  return transform(p, s, true);
}

SampleTensor invert_scaler(const ScalerParams& p, const SampleTensor& s) {
  return transform(p, s, false);
}

DatasetSplit split(const std::vector<SampleTensor>& samples, std::uint64_t seed) {
  std::vector<std::int64_t> parents;
  for (const auto& s : samples) {
    if (std::find(parents.begin(), parents.end(), s.parent_id) == parents.end()) {
      parents.push_back(s.parent_id);
    }
  }
  if (parents.size() < 3) {
    throw std::invalid_argument("split: need at least 3 parent simulations");
  }
  std::sort(parents.begin(), parents.end());
  Rng rng(seed);
  rng.shuffle(parents);

  const std::size_t n = parents.size();
  const std::size_t n_train = std::size_t(std::llround(0.65 * double(n)));
  const std::size_t n_val = std::size_t(std::llround(0.15 * double(n)));
  auto partition_of = [&](std::int64_t pid) {
    const auto it = std::find(parents.begin(), parents.end(), pid);
    const std::size_t pos = std::size_t(it - parents.begin());
    if (pos < n_train) return 0;
    if (pos < n_train + n_val) return 1;
    return 2;
  };

  DatasetSplit out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    switch (partition_of(samples[i].parent_id)) {
      case 0: out.train.push_back(i); break;
      case 1: out.validation.push_back(i); break;
      default: out.test.push_back(i); break;
    }
  }
  return out;
}

std::string sample_to_jsonl(const SampleTensor& s) {
  nlohmann::json j;
  j["parent_id"] = s.parent_id;
  j["final_strain"] = s.final_strain;
  auto in = nlohmann::json::array();
  for (const auto& v : s.inputs) in.push_back(v);
  auto out = nlohmann::json::array();
  for (const auto& v : s.outputs) out.push_back(v);
  j["inputs"] = in;
  j["outputs"] = out;
  return j.dump();
}

SampleTensor sample_from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  SampleTensor s;
  s.parent_id = j.at("parent_id").get<std::int64_t>();
  s.final_strain = j.at("final_strain").get<double>();
  const auto& in = j.at("inputs");
  const auto& out = j.at("outputs");
  if (in.size() != kNumInputs || out.size() != kNumOutputs) {
    throw std::invalid_argument("sample_from_jsonl: wrong channel count");
  }
  for (int c = 0; c < kNumInputs; ++c) s.inputs[std::size_t(c)] = in[std::size_t(c)].get<std::vector<double>>();
  for (int c = 0; c < kNumOutputs; ++c) s.outputs[std::size_t(c)] = out[std::size_t(c)].get<std::vector<double>>();
  return s;
}

void save_samples(const std::string& path, const std::vector<SampleTensor>& samples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_samples: cannot open " + path);
  for (const auto& s : samples) f << sample_to_jsonl(s) << '\n';
}

std::vector<SampleTensor> load_samples(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_samples: cannot open " + path);
  std::vector<SampleTensor> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(sample_from_jsonl(line));
  }
  return out;
}

namespace {

nlohmann::json scaler_to_json(const ScalerParams& s) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(s.mean.begin(), s.mean.end());
  j["stddev"] = std::vector<double>(s.stddev.begin(), s.stddev.end());
  return j;
}

ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams s;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("stddev").get<std::vector<double>>();
  if (m.size() != kNumChannels || sd.size() != kNumChannels) {
    throw std::invalid_argument("scaler_from_json: wrong channel count");
  }
  std::copy(m.begin(), m.end(), s.mean.begin());
  std::copy(sd.begin(), sd.end(), s.stddev.begin());
  return s;
}

}  // namespace

std::string DatasetManifest::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["augment_k"] = augment_k;
  j["strain_lo"] = strain_lo;
  j["strain_hi"] = strain_hi;
  j["seq_len"] = seq_len;
  j["scaler"] = scaler_to_json(scaler);
  j["train_parents"] = train_parents;
  j["validation_parents"] = validation_parents;
  j["test_parents"] = test_parents;
  j["config_hash"] = config_hash;
  return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.augment_k = j.at("augment_k").get<int>();
  m.strain_lo = j.at("strain_lo").get<double>();
  m.strain_hi = j.at("strain_hi").get<double>();
  m.seq_len = j.at("seq_len").get<int>();
  m.scaler = scaler_from_json(j.at("scaler"));
  m.train_parents = j.at("train_parents").get<std::vector<std::int64_t>>();
  m.validation_parents = j.at("validation_parents").get<std::vector<std::int64_t>>();
  m.test_parents = j.at("test_parents").get<std::vector<std::int64_t>>();
  m.config_hash = j.value("config_hash", std::string{});
  return m;
}

}  // namespace impactforge::data
