#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "impactforge/dataset.hpp"
#include "impactforge/rng.hpp"

using namespace impactforge;
using data::SampleTensor;

namespace {

// Synthetic record with simple closed-form curves.
fe::SimulationRecord linear_record(std::int64_t id, int n, double final_strain, double rate,
                                   double stress_slope) {
  fe::SimulationRecord r;
  r.id = id;
  r.design = geom::DesignParams{4, 2, 2, 0.5, 0.05};
  r.rate = rate;
  r.final_strain = final_strain;
  for (int i = 0; i < n; ++i) {
    const double eps = final_strain * double(i) / double(n - 1);
    r.strain.push_back(eps);
    r.time.push_back(eps / rate);
    r.stress.push_back(stress_slope * eps);
    r.force.push_back(stress_slope * eps * 0.011);
    r.E_pl.push_back(2.0 * eps);
    r.E_el.push_back(3.0 * eps);
    r.E_k.push_back(0.1 * eps);
    r.E_hg.push_back(0.0);
    r.W_ext.push_back(5.1 * eps);
  }
  return r;
}

}  // namespace

TEST_CASE("downsample: 50-point uniform record maps onto itself") {
  const auto rec = linear_record(1, 50, 0.25, 10.0, 4e9);
  const auto s = data::downsample(rec, 50);
  REQUIRE(s.length() == 50);
  for (int k = 0; k < 50; ++k) {
    CHECK(s.inputs[6][std::size_t(k)] == doctest::Approx(rec.strain[std::size_t(k)]).epsilon(1e-14));
    CHECK(s.outputs[0][std::size_t(k)] ==
          doctest::Approx(rec.stress[std::size_t(k)]).epsilon(1e-12));
  }
  // constant channels
  for (int k = 0; k < 50; ++k) {
    CHECK(s.inputs[0][std::size_t(k)] == 4.0);
    CHECK(s.inputs[4][std::size_t(k)] == 0.05);
    CHECK(s.inputs[7][std::size_t(k)] == 10.0);
  }
}

TEST_CASE("downsample: points of a linear record stay on the line") {
  const auto rec = linear_record(1, 500, 0.2, 5.0, 1e9);
  const auto s = data::downsample(rec, 50);
  for (int k = 0; k < 50; ++k) {
    const double eps = s.inputs[6][std::size_t(k)];
    CHECK(s.outputs[0][std::size_t(k)] == doctest::Approx(1e9 * eps).epsilon(1e-9));
    CHECK(s.outputs[1][std::size_t(k)] == doctest::Approx(2.0 * eps).epsilon(1e-9));
  }
}

TEST_CASE("downsample: constant force integrates to F*d") {
  fe::SimulationRecord r = linear_record(1, 100, 0.2, 5.0, 0.0);
  for (auto& f : r.force) f = 100.0;  // N/m
  for (auto& s : r.stress) s = 100.0 / 0.011;
  const auto s = data::downsample(r, 50);
  const double d = 0.2 * 0.011;
  CHECK(s.outputs[3].back() == doctest::Approx(100.0 * d).epsilon(1e-12));
  CHECK(s.outputs[3].front() == 0.0);
}

TEST_CASE("downsample rejects records shorter than 2 points") {
  fe::SimulationRecord r;
  r.strain = {0.0};
  r.time = {0.0};
  CHECK_THROWS_AS(data::downsample(r, 50), std::invalid_argument);
}

TEST_CASE("augment: child at the parent final strain reproduces the parent") {
  const auto rec = linear_record(7, 50, 0.25, 20.0, 4e9);
  const auto parent = data::downsample(rec, 50);
  Rng rng(42);
  const auto children = data::augment(parent, 20, 0.10, 0.25, rng);
  REQUIRE(children.size() == 20);
  for (const auto& c : children) {
    CHECK(c.parent_id == parent.parent_id);
    CHECK(c.length() == 50);
    CHECK(c.inputs[6].back() == doctest::Approx(c.final_strain).epsilon(1e-14));
    CHECK(c.final_strain >= 0.10);
    CHECK(c.final_strain <= 0.25);
    // linear E_pl stays linear with the same slope
    const double slope = c.outputs[1].back() / c.inputs[6].back();
    CHECK(slope == doctest::Approx(2.0).epsilon(1e-9));
    // strain strictly increasing
    for (int k = 1; k < 50; ++k) {
      CHECK(c.inputs[6][std::size_t(k)] > c.inputs[6][std::size_t(k - 1)]);
    }
  }
  CHECK_THROWS_AS(data::augment(parent, 0, 0.1, 0.25, rng), std::invalid_argument);
  CHECK_THROWS_AS(data::augment(parent, 5, 0.3, 0.4, rng), std::invalid_argument);
}

TEST_CASE("scaler: two-point channel and constant channels") {
  std::vector<SampleTensor> samples;
  for (const double v : {0.0, 2.0}) {
    SampleTensor s;
    s.parent_id = v == 0.0 ? 0 : 1;
    for (auto& ch : s.inputs) ch.assign(4, v);
    for (auto& ch : s.outputs) ch.assign(4, v);
    for (int k = 0; k < 4; ++k) s.inputs[0][std::size_t(k)] = 7.0;  // constant channel
    samples.push_back(s);
  }
  const auto scaler = data::fit_scaler(samples, {0, 1});
  CHECK(scaler.mean[0] == 7.0);
  CHECK(scaler.stddev[0] == 1.0);  // constant sentinel
  CHECK(scaler.mean[1] == doctest::Approx(1.0));
  CHECK(scaler.stddev[1] == doctest::Approx(1.0));

  const auto scaled = data::apply_scaler(scaler, samples[0]);
  CHECK(scaled.inputs[0][0] == 0.0);
  CHECK(scaled.inputs[1][0] == doctest::Approx(-1.0));
  const auto back = data::invert_scaler(scaler, scaled);
  for (int c = 0; c < data::kNumInputs; ++c) {
    for (int k = 0; k < 4; ++k) {
      CHECK(back.inputs[std::size_t(c)][std::size_t(k)] ==
            doctest::Approx(samples[0].inputs[std::size_t(c)][std::size_t(k)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("scaler fitted on train leaves held-out data unscaled to zero mean") {
  std::vector<SampleTensor> samples;
  for (int i = 0; i < 4; ++i) {
    SampleTensor s;
    s.parent_id = i;
    const double v = i < 2 ? 1.0 : 100.0;  // train vs held-out distributions differ
    for (auto& ch : s.inputs) ch.assign(3, v);
    for (auto& ch : s.outputs) ch.assign(3, v);
    s.inputs[1][1] = v + 1.0;  // non-constant
    samples.push_back(s);
  }
  const auto scaler = data::fit_scaler(samples, {0, 1});
  const auto held = data::apply_scaler(scaler, samples[3]);
  double mean = 0.0;
  for (const double x : held.inputs[1]) mean += x / 3.0;
  CHECK(std::abs(mean) > 10.0);  // far from zero: no leakage semantics
}

TEST_CASE("scaled training channels have zero mean and unit std") {
  Rng rng(5);
  std::vector<SampleTensor> samples;
  for (int i = 0; i < 20; ++i) {
    SampleTensor s;
    s.parent_id = i;
    for (auto& ch : s.inputs) {
      ch.resize(10);
      for (auto& x : ch) x = rng.uniform(-3.0, 9.0);
    }
    for (auto& ch : s.outputs) {
      ch.resize(10);
      for (auto& x : ch) x = rng.uniform(-3.0, 9.0);
    }
    samples.push_back(s);
  }
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < 13; ++i) train.push_back(i);
  const auto scaler = data::fit_scaler(samples, train);
  for (int c = 0; c < data::kNumChannels; ++c) {
    double sum = 0.0, sum2 = 0.0;
    double n = 0.0;
    for (const auto i : train) {
      const auto scaled = data::apply_scaler(scaler, samples[i]);
      const auto& ch = c < data::kNumInputs ? scaled.inputs[std::size_t(c)]
                                            : scaled.outputs[std::size_t(c - data::kNumInputs)];
      for (const double x : ch) {
        sum += x;
        sum2 += x * x;
        n += 1.0;
      }
    }
    CHECK(std::abs(sum / n) < 1e-9);
    CHECK(std::abs(std::sqrt(sum2 / n) - 1.0) < 1e-9);
  }
}

TEST_CASE("split: 65/15/20 at the parent level, deterministic, no leakage") {
  std::vector<SampleTensor> samples;
  for (int parent = 0; parent < 100; ++parent) {
    for (int child = 0; child < 21; ++child) {
      SampleTensor s;
      s.parent_id = parent;
      s.inputs[0].assign(1, 0.0);
      samples.push_back(s);
    }
  }
  const auto sp = data::split(samples, 33);
  CHECK(sp.train.size() == 65 * 21);
  CHECK(sp.validation.size() == 15 * 21);
  CHECK(sp.test.size() == 20 * 21);

  const auto sp2 = data::split(samples, 33);
  CHECK(sp.train == sp2.train);
  CHECK(sp.test == sp2.test);
  const auto sp3 = data::split(samples, 34);
  CHECK(sp.train != sp3.train);

  // group integrity: a parent appears in exactly one partition
  std::set<std::int64_t> train_parents, other_parents;
  for (const auto i : sp.train) train_parents.insert(samples[i].parent_id);
  for (const auto i : sp.validation) other_parents.insert(samples[i].parent_id);
  for (const auto i : sp.test) other_parents.insert(samples[i].parent_id);
  for (const auto p : train_parents) CHECK(!other_parents.count(p));

  // index disjointness and coverage
  std::set<std::size_t> all;
  for (const auto& part : {sp.train, sp.validation, sp.test}) {
    for (const auto i : part) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == samples.size());

  std::vector<SampleTensor> tiny(samples.begin(), samples.begin() + 2);
  CHECK_THROWS_AS(data::split(tiny, 1), std::invalid_argument);
}

TEST_CASE("augmentation multiplies the dataset by k+1 with parent retained") {
  const auto rec = linear_record(3, 50, 0.25, 10.0, 1e9);
  auto parent = data::downsample(rec, 50);
  Rng rng(9);
  const auto children = data::augment(parent, 20, 0.10, 0.25, rng);
  std::vector<SampleTensor> all;
  all.push_back(parent);
  for (const auto& c : children) all.push_back(c);
  CHECK(all.size() == 21);
  for (const auto& s : all) CHECK(s.parent_id == 3);
}

TEST_CASE("sample persistence round trip is bit identical") {
  Rng rng(1234);
  std::vector<SampleTensor> samples;
  for (int i = 0; i < 5; ++i) {
    SampleTensor s;
    s.parent_id = i;
    s.final_strain = rng.uniform(0.1, 0.25);
    for (auto& ch : s.inputs) {
      ch.resize(50);
      for (auto& x : ch) x = rng.uniform(-1e9, 1e9) * std::pow(10.0, rng.uniform(-9, 3));
    }
    for (auto& ch : s.outputs) {
      ch.resize(50);
      for (auto& x : ch) x = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-12, 9));
    }
    samples.push_back(s);
  }
  const auto path = std::filesystem::temp_directory_path() / "impactforge_dataset_test.jsonl";
  data::save_samples(path.string(), samples);
  const auto loaded = data::load_samples(path.string());
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].parent_id == samples[i].parent_id);
    CHECK(loaded[i].final_strain == samples[i].final_strain);  // bitwise
    for (int c = 0; c < data::kNumInputs; ++c) {
      CHECK(loaded[i].inputs[std::size_t(c)] == samples[i].inputs[std::size_t(c)]);  // bitwise
    }
    for (int c = 0; c < data::kNumOutputs; ++c) {
      CHECK(loaded[i].outputs[std::size_t(c)] == samples[i].outputs[std::size_t(c)]);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("manifest json round trip") {
  data::DatasetManifest m;
  m.seed = 77;
  m.augment_k = 20;
  m.scaler.mean[3] = 1.5;
  m.scaler.stddev[3] = 0.25;
  m.train_parents = {1, 2, 3};
  m.test_parents = {9};
  m.config_hash = "deadbeef";
  const auto text = m.to_json();
  const auto back = data::DatasetManifest::from_json(text);
  CHECK(back.seed == 77);
  CHECK(back.scaler.mean[3] == 1.5);
  CHECK(back.train_parents == m.train_parents);
  CHECK(back.config_hash == "deadbeef");
}
