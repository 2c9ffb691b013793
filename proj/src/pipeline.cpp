#include "impactforge/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

#include <json.hpp>

#include "impactforge/rng.hpp"

namespace impactforge::pipeline {

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

std::string CampaignConfig::to_json() const {
  nlohmann::json j;
  j["n_designs"] = n_designs;
  j["seed"] = seed;
  j["rate_min"] = rate_min;
  j["rate_max"] = rate_max;
  j["final_strain"] = final_strain;
  j["record_points"] = record_points;
  j["edge"] = edge;
  j["integration"] = solver.integration == fe::Integration::kFull ? "full" : "reduced";
  j["include_solid"] = include_solid;
  return j.dump();
}

CampaignDraw draw_design(std::uint64_t seed, std::int64_t id, double rate_min, double rate_max) {
  // Mix id into the seed so each design has its own stream.
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + std::uint64_t(id) * 0xd1b54a32d192ed03ULL + 1);
  CampaignDraw out;
  for (int attempt = 0; attempt < 10000; ++attempt) {
    geom::DesignParams p;
    p.sides = rng.uniform_int(3, 6);
    p.nx = rng.uniform_int(1, 8);
    p.ny = rng.uniform_int(1, 8);
    p.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.vf = rng.uniform(0.01, 0.10);
    if (geom::build_design(p).valid()) {
      out.design = p;
      out.rate = rng.uniform(rate_min, rate_max);
      return out;
    }
  }
  throw std::runtime_error("draw_design: could not sample a valid design");
}

std::vector<fe::SimulationRecord> load_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_records: cannot open " + path);
  std::vector<fe::SimulationRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(fe::SimulationRecord::from_jsonl(line));
  }
  return out;
}

CampaignResult run_campaign(const CampaignConfig& config, const fe::MaterialModel& mat,
                            const std::string& out_dir,
                            const std::function<void(int, int)>& progress) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string records_path = (fs::path(out_dir) / "records.jsonl").string();
  const std::string manifest_path = (fs::path(out_dir) / "campaign_manifest.json").string();

  std::set<std::int64_t> done;
  if (fs::exists(records_path)) {
    for (const auto& rec : load_records(records_path)) done.insert(rec.id);
  }

  const std::int64_t total = config.n_designs + (config.include_solid ? 1 : 0);
  std::vector<std::int64_t> todo;
  for (std::int64_t id = 0; id < total; ++id) {
    if (!done.count(id)) todo.push_back(id);
  }

  struct Outcome {
    bool ok = false;
    bool attempted = false;
    fe::SimulationRecord record;
    std::string error;
  };
  std::vector<Outcome> outcomes(todo.size());
  std::mutex progress_mutex;
  int finished = 0;

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const std::int64_t id = todo[k];
      Outcome& out = outcomes[k];
      out.attempted = true;
      try {
        geom::DesignParams design;
        double rate;
        if (config.include_solid && id == config.n_designs) {
          design = geom::DesignParams{4, 1, 1, 0.0, 0.0};  // solid control
          rate = 0.5 * (config.rate_min + config.rate_max);
        } else {
          const auto draw = draw_design(config.seed, id, config.rate_min, config.rate_max);
          design = draw.design;
          rate = draw.rate;
        }
        const auto build = geom::build_design(design);
        const auto mesh = geom::rasterize(build.tubules, config.edge);
        auto rec = fe::run_simulation(mesh, mat, rate, config.final_strain,
                                      config.record_points, config.solver);
        rec.id = id;
        rec.design = design;
        out.record = std::move(rec);
        out.ok = true;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        ++finished;
        progress(finished, int(todo.size()));
      }
    }
  };

  const int workers = std::max(1, config.workers);
  if (workers > 1 && todo.size() > 1) {
    std::vector<std::thread> pool;
    const std::size_t chunk = (todo.size() + workers - 1) / std::size_t(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t b = std::size_t(w) * chunk;
      const std::size_t e = std::min(todo.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& t : pool) t.join();
  } else {
    work(0, todo.size());
  }

  CampaignResult result;
  result.records_path = records_path;
  result.skipped = int(done.size());
  std::ofstream f(records_path, std::ios::app);
  if (!f) throw std::runtime_error("run_campaign: cannot append to " + records_path);
  for (const auto& out : outcomes) {
    if (out.ok) {
      f << out.record.to_jsonl() << '\n';
      ++result.completed;
    } else if (out.attempted) {
      std::fprintf(stderr, "campaign: simulation failed: %s\n", out.error.c_str());
      ++result.failed;
    }
  }
  f.close();

  nlohmann::json manifest;
  manifest["config"] = nlohmann::json::parse(config.to_json());
  manifest["config_hash"] = config_hash(config.to_json());
  manifest["completed_total"] = int(done.size()) + result.completed;
  manifest["failed"] = result.failed;
  std::ofstream mf(manifest_path);
  mf << manifest.dump(2) << '\n';

  const double frac =
      todo.empty() ? 0.0 : double(result.failed) / double(todo.size());
  if (frac > config.max_failure_fraction) {
    throw std::runtime_error("run_campaign: " + std::to_string(result.failed) + " of " +
                             std::to_string(todo.size()) + " simulations failed");
  }
  return result;
}

TrainPipelineResult build_and_train(const std::vector<fe::SimulationRecord>& records,
                                    const TrainPipelineConfig& config) {
  if (records.empty()) throw std::invalid_argument("build_and_train: no records");

  TrainPipelineResult result;
  Rng rng(config.seed ^ 0x61756755ULL);
  for (const auto& rec : records) {
    auto parent = data::downsample(rec, data::kSeqLen);
    const auto children =
        data::augment(parent, config.augment_k, config.strain_lo, config.strain_hi, rng);
    result.samples.push_back(std::move(parent));
    for (auto& c : children) result.samples.push_back(c);
  }

  result.split = data::split(result.samples, config.seed);
  const auto scaler = data::fit_scaler(result.samples, result.split.train);

  nn::TrainingSet set;
  set.samples = &result.samples;
  set.split = result.split;
  set.scaler = scaler;

  auto model = nn::SurrogateModel::init(data::kNumInputs, config.hidden, data::kNumOutputs,
                                        config.train.seed);
  result.train = nn::train(model, set, config.train);

  result.checkpoint.model = result.train.model;
  result.checkpoint.scaler = scaler;
  result.checkpoint.ranges = nn::InputRanges::from_training(result.samples, result.split.train);

  result.test_mae = nn::evaluate_mae(result.train.model, result.samples, result.split.test,
                                     scaler, config.train.batch_size);

  auto& manifest = result.manifest;
  manifest.seed = config.seed;
  manifest.augment_k = config.augment_k;
  manifest.strain_lo = config.strain_lo;
  manifest.strain_hi = config.strain_hi;
  manifest.scaler = scaler;
  manifest.config_hash = config.config_hash;
  std::set<std::int64_t> train_p, val_p, test_p;
  for (const auto i : result.split.train) train_p.insert(result.samples[i].parent_id);
  for (const auto i : result.split.validation) val_p.insert(result.samples[i].parent_id);
  for (const auto i : result.split.test) test_p.insert(result.samples[i].parent_id);
  manifest.train_parents.assign(train_p.begin(), train_p.end());
  manifest.validation_parents.assign(val_p.begin(), val_p.end());
  manifest.test_parents.assign(test_p.begin(), test_p.end());
  return result;
}

}  // namespace impactforge::pipeline
