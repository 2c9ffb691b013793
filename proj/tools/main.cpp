#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "impactforge/dataset.hpp"
#include "impactforge/explorer.hpp"
#include "impactforge/fesolver.hpp"
#include "impactforge/geometry.hpp"
#include "impactforge/pipeline.hpp"
#include "impactforge/surrogate.hpp"

namespace fs = std::filesystem;
using namespace impactforge;

namespace {

int default_workers() {
  if (const char* env = std::getenv("IMPACTFORGE_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return int(std::max(1u, std::thread::hardware_concurrency()));
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << text;
}

fe::MaterialModel load_material(const std::string& path) {
  if (path.empty()) return fe::MaterialModel::pc_abs_like();
  return fe::MaterialModel::from_json(read_file(path));
}

void print_summary(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

geom::DesignParams design_from_flags_or_file(const std::string& design_path, int sides, int nx,
                                             int ny, double angle_deg, double vf) {
  if (!design_path.empty()) return geom::design_from_json(read_file(design_path));
  geom::DesignParams p;
  p.sides = sides;
  p.nx = nx;
  p.ny = ny;
  double deg = std::fmod(angle_deg, 360.0);
  if (deg < 0) deg += 360.0;
  p.angle = deg * std::numbers::pi / 180.0;
  p.vf = vf;
  return p;
}

fe::SolverOptions solver_options(const std::string& integration) {
  fe::SolverOptions opt;
  if (integration == "reduced") opt.integration = fe::Integration::kReduced;
  else if (integration != "full") throw std::runtime_error("integration must be full|reduced");
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"impactforge: tubule cross-section design, FE compression, GRU surrogate"};
  app.require_subcommand(1);

  int workers = default_workers();
  std::uint64_t seed = 1;
  app.add_option("--workers", workers, "worker threads (1 = fully sequential)");
  app.add_option("--seed", seed, "global seed");

  // ---- geom ----
  auto* cmd_geom = app.add_subcommand("geom", "validate a design and export artifacts");
  int g_sides = 4, g_nx = 1, g_ny = 1;
  double g_angle = 0.0, g_vf = 0.05, g_edge = geom::kDefaultEdge;
  std::string g_out, g_mesh_out;
  cmd_geom->add_option("--sides", g_sides);
  cmd_geom->add_option("--nx", g_nx);
  cmd_geom->add_option("--ny", g_ny);
  cmd_geom->add_option("--angle-deg", g_angle);
  cmd_geom->add_option("--vf", g_vf);
  cmd_geom->add_option("--edge", g_edge, "raster element edge, mm");
  cmd_geom->add_option("--out", g_out, "design JSON path");
  cmd_geom->add_option("--mesh-out", g_mesh_out, "ASCII mask path");

  // ---- simulate ----
  auto* cmd_sim = app.add_subcommand("simulate", "run one FE compression");
  std::string s_design, s_material, s_out = "record.jsonl", s_integration = "full";
  double s_rate = 9.1, s_final = 0.25, s_edge = geom::kDefaultEdge;
  int s_points = data::kSeqLen;
  bool s_solid = false;
  cmd_sim->add_option("--design", s_design, "design JSON path");
  cmd_sim->add_flag("--solid", s_solid, "simulate the fully dense control specimen");
  cmd_sim->add_option("--material", s_material, "material JSON path");
  cmd_sim->add_option("--rate", s_rate, "nominal strain rate, 1/s");
  cmd_sim->add_option("--final-strain", s_final);
  cmd_sim->add_option("--record-points", s_points);
  cmd_sim->add_option("--edge", s_edge, "element edge, mm");
  cmd_sim->add_option("--integration", s_integration, "full|reduced");
  cmd_sim->add_option("--out", s_out, "output JSONL path (appended)");

  // ---- campaign ----
  auto* cmd_camp = app.add_subcommand("campaign", "sample designs and run the FE campaign");
  std::string c_material, c_out = "campaign", c_integration = "full";
  int c_n = 200, c_points = data::kSeqLen;
  double c_edge = geom::kDefaultEdge, c_rate_min = 0.45, c_rate_max = 90.9, c_final = 0.25;
  bool c_solid = false;
  cmd_camp->add_option("-n,--designs", c_n, "number of designs");
  cmd_camp->add_option("--material", c_material);
  cmd_camp->add_option("--out", c_out, "output directory");
  cmd_camp->add_option("--edge", c_edge);
  cmd_camp->add_option("--rate-min", c_rate_min);
  cmd_camp->add_option("--rate-max", c_rate_max);
  cmd_camp->add_option("--final-strain", c_final);
  cmd_camp->add_option("--record-points", c_points);
  cmd_camp->add_option("--integration", c_integration);
  cmd_camp->add_flag("--include-solid", c_solid, "add the all-solid control design");

  // ---- train ----
  auto* cmd_train = app.add_subcommand("train", "build the dataset and train the surrogate");
  std::string t_records = "campaign/records.jsonl", t_out = "model";
  int t_augment = 20, t_epochs = 150, t_batch = 600;
  double t_lr = 1e-3, t_lo = 0.10, t_hi = 0.25;
  std::vector<int> t_hidden = {64, 64, 64};
  bool t_cosine = false;
  cmd_train->add_option("--records", t_records, "campaign records.jsonl");
  cmd_train->add_option("--out", t_out, "output directory");
  cmd_train->add_option("--augment", t_augment, "children per simulation");
  cmd_train->add_option("--strain-lo", t_lo);
  cmd_train->add_option("--strain-hi", t_hi);
  cmd_train->add_option("--epochs", t_epochs);
  cmd_train->add_option("--batch", t_batch);
  cmd_train->add_option("--lr", t_lr);
  cmd_train->add_option("--hidden", t_hidden, "hidden units per GRU layer");
  cmd_train->add_flag("--cosine-decay", t_cosine);

  // ---- sweep ----
  auto* cmd_sweep = app.add_subcommand("sweep", "grid-search the design space");
  std::string w_ckpt = "model/checkpoint.bin", w_material, w_out = "sweep.csv";
  std::vector<double> w_rates = {9.1, 90.9};
  double w_final = 0.25, w_vf_min = 0.01, w_vf_max = 0.10;
  int w_vf_bins = 40, w_angle_bins = 20;
  cmd_sweep->add_option("--checkpoint", w_ckpt);
  cmd_sweep->add_option("--material", w_material);
  cmd_sweep->add_option("--rates", w_rates, "strain rates, 1/s");
  cmd_sweep->add_option("--final-strain", w_final);
  cmd_sweep->add_option("--vf-min", w_vf_min);
  cmd_sweep->add_option("--vf-max", w_vf_max);
  cmd_sweep->add_option("--vf-bins", w_vf_bins);
  cmd_sweep->add_option("--angle-bins", w_angle_bins);
  cmd_sweep->add_option("--out", w_out, "sweep CSV path");

  // ---- analyze ----
  auto* cmd_an = app.add_subcommand("analyze", "maps, correlations, angle trend from a sweep");
  std::string a_sweep = "sweep.csv", a_ckpt = "model/checkpoint.bin", a_material,
              a_out = "analysis";
  int a_nx = 2, a_ny = 2;
  double a_vf = 0.05;
  cmd_an->add_option("--sweep", a_sweep);
  cmd_an->add_option("--checkpoint", a_ckpt);
  cmd_an->add_option("--material", a_material);
  cmd_an->add_option("--out", a_out, "output directory");
  cmd_an->add_option("--trend-nx", a_nx, "angle-trend grid columns");
  cmd_an->add_option("--trend-ny", a_ny, "angle-trend grid rows");
  cmd_an->add_option("--trend-vf", a_vf, "angle-trend volume fraction");

  // ---- validate ----
  auto* cmd_val = app.add_subcommand("validate", "FE re-simulation of sweep extremes");
  std::string v_sweep = "sweep.csv", v_ckpt = "model/checkpoint.bin", v_material,
              v_out = "validation.json", v_integration = "full";
  double v_edge = geom::kDefaultEdge, v_tol = 0.10, v_final = 0.25;
  cmd_val->add_option("--sweep", v_sweep);
  cmd_val->add_option("--checkpoint", v_ckpt);
  cmd_val->add_option("--material", v_material);
  cmd_val->add_option("--edge", v_edge);
  cmd_val->add_option("--final-strain", v_final);
  cmd_val->add_option("--integration", v_integration);
  cmd_val->add_option("--tolerance", v_tol);
  cmd_val->add_option("--out", v_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_geom) {
      const auto p = design_from_flags_or_file("", g_sides, g_nx, g_ny, g_angle, g_vf);
      p.validate();
      const auto build = geom::build_design(p);
      nlohmann::json j;
      j["command"] = "geom";
      j["valid"] = build.valid();
      j["rejection"] = geom::rejection_name(build.rejection);
      if (build.valid()) {
        if (!g_out.empty()) {
          write_file(g_out, geom::design_to_json(p) + "\n");
          j["design_file"] = g_out;
        }
        const auto mesh = geom::rasterize(build.tubules, g_edge);
        j["elems"] = mesh.elems_x;
        j["active"] = mesh.active_count();
        j["porosity"] = 1.0 - mesh.active_area() / (geom::kSpecimenSize * geom::kSpecimenSize);
        if (!g_mesh_out.empty()) {
          write_file(g_mesh_out, mesh.to_ascii());
          j["mesh_file"] = g_mesh_out;
        }
      }
      print_summary(j);
      return build.valid() ? 0 : 1;
    }

    if (*cmd_sim) {
      geom::DesignParams p;
      if (s_solid) {
        p = geom::DesignParams{4, 1, 1, 0.0, 0.0};
      } else {
        if (s_design.empty()) throw std::runtime_error("simulate: need --design or --solid");
        p = geom::design_from_json(read_file(s_design));
      }
      const auto mat = load_material(s_material);
      const auto build = geom::build_design(p);
      if (!build.valid()) {
        throw std::runtime_error(std::string("simulate: invalid design: ") +
                                 geom::rejection_name(build.rejection));
      }
      const auto mesh = geom::rasterize(build.tubules, s_edge);
      auto rec = fe::run_simulation(mesh, mat, s_rate, s_final, s_points,
                                    solver_options(s_integration));
      rec.design = p;
      std::ofstream f(s_out, std::ios::app);
      f << rec.to_jsonl() << "\n";
      nlohmann::json j;
      j["command"] = "simulate";
      j["out"] = s_out;
      j["points"] = rec.strain.size();
      j["final_stress_Pa"] = rec.stress.back();
      j["E_pl_final_J"] = rec.E_pl.back();
      print_summary(j);
      return 0;
    }

    if (*cmd_camp) {
      pipeline::CampaignConfig cfg;
      cfg.n_designs = c_n;
      cfg.seed = seed;
      cfg.rate_min = c_rate_min;
      cfg.rate_max = c_rate_max;
      cfg.final_strain = c_final;
      cfg.record_points = c_points;
      cfg.edge = c_edge;
      cfg.solver = solver_options(c_integration);
      cfg.include_solid = c_solid;
      cfg.workers = workers;
      const auto mat = load_material(c_material);
      const auto res = pipeline::run_campaign(cfg, mat, c_out);
      nlohmann::json j;
      j["command"] = "campaign";
      j["records"] = res.records_path;
      j["completed"] = res.completed;
      j["skipped"] = res.skipped;
      j["failed"] = res.failed;
      j["config_hash"] = pipeline::config_hash(cfg.to_json());
      print_summary(j);
      return 0;
    }

    if (*cmd_train) {
      if (!fs::exists(t_records)) {
        throw std::runtime_error("train: records not found: " + t_records +
                                 " (run `impactforge campaign` first)");
      }
      fs::create_directories(t_out);
      pipeline::TrainPipelineConfig cfg;
      cfg.seed = seed;
      cfg.augment_k = t_augment;
      cfg.strain_lo = t_lo;
      cfg.strain_hi = t_hi;
      cfg.hidden = t_hidden;
      cfg.train.epochs = t_epochs;
      cfg.train.batch_size = t_batch;
      cfg.train.learning_rate = t_lr;
      cfg.train.seed = seed;
      cfg.train.cosine_decay = t_cosine;
      nlohmann::json cfg_json = {{"seed", seed},       {"augment", t_augment},
                                 {"epochs", t_epochs}, {"batch", t_batch},
                                 {"lr", t_lr},         {"hidden", t_hidden}};
      cfg.config_hash = pipeline::config_hash(cfg_json.dump());

      const auto records = pipeline::load_records(t_records);
      auto res = pipeline::build_and_train(records, cfg);

      const std::string ckpt_path = (fs::path(t_out) / "checkpoint.bin").string();
      nn::save_checkpoint(res.checkpoint, ckpt_path);
      nn::save_history_csv((fs::path(t_out) / "history.csv").string(), res.train.history);
      data::save_samples((fs::path(t_out) / "dataset.jsonl").string(), res.samples);
      write_file((fs::path(t_out) / "dataset_manifest.json").string(),
                 res.manifest.to_json() + "\n");

      nlohmann::json j;
      j["command"] = "train";
      j["checkpoint"] = ckpt_path;
      j["samples"] = res.samples.size();
      j["parameters"] = res.checkpoint.model.parameter_count();
      j["best_epoch"] = res.train.best_epoch;
      j["best_val_mae"] = res.train.best_val_mae;
      j["test_mae"] = res.test_mae;
      j["aborted_non_finite"] = res.train.aborted_non_finite;
      j["config_hash"] = cfg.config_hash;
      print_summary(j);
      return res.train.aborted_non_finite ? 1 : 0;
    }

    if (*cmd_sweep) {
      if (!fs::exists(w_ckpt)) {
        throw std::runtime_error("sweep: checkpoint not found: " + w_ckpt +
                                 " (run `impactforge train` first)");
      }
      const auto ckpt = nn::load_checkpoint(w_ckpt);
      const auto mat = load_material(w_material);
      explore::SweepGrid grid;
      grid.rates = w_rates;
      grid.final_strain = w_final;
      grid.vf_min = w_vf_min;
      grid.vf_max = w_vf_max;
      grid.vf_bins = w_vf_bins;
      grid.angle_bins = w_angle_bins;
      const auto records = explore::sweep(ckpt, grid, mat, workers);
      explore::write_sweep_csv(w_out, records);
      nlohmann::json j;
      j["command"] = "sweep";
      j["out"] = w_out;
      j["records"] = records.size();
      std::size_t valid = 0;
      for (const auto& r : records) valid += r.valid ? 1 : 0;
      j["valid"] = valid;
      print_summary(j);
      return 0;
    }

    if (*cmd_an) {
      if (!fs::exists(a_sweep)) throw std::runtime_error("analyze: sweep not found: " + a_sweep);
      if (!fs::exists(a_ckpt)) throw std::runtime_error("analyze: checkpoint not found: " + a_ckpt);
      fs::create_directories(a_out);
      const auto records = explore::read_sweep_csv(a_sweep);
      const auto ckpt = nn::load_checkpoint(a_ckpt);
      const auto mat = load_material(a_material);

      explore::write_scatter_svg((fs::path(a_out) / "sea_map.svg").string(), records);

      std::vector<double> rates;
      for (const auto& r : records) {
        if (std::find(rates.begin(), rates.end(), r.rate) == rates.end()) rates.push_back(r.rate);
      }
      std::sort(rates.begin(), rates.end());
      nlohmann::json correlations = nlohmann::json::array();
      for (const double rate : rates) {
        const auto rep = explore::correlations(records, rate);
        correlations.push_back({{"rate", rate},
                                {"r_sides", rep.r_sides},
                                {"r_nx", rep.r_nx},
                                {"r_ny", rep.r_ny},
                                {"r_angle", rep.r_angle},
                                {"r_vf", rep.r_vf}});
      }
      write_file((fs::path(a_out) / "correlations.json").string(), correlations.dump(2) + "\n");

      explore::SweepGrid grid;
      grid.final_strain = 0.25;
      explore::write_angle_trend_csv((fs::path(a_out) / "angle_trend.csv").string(), ckpt, grid,
                                     mat, a_nx, a_ny, a_vf, rates.empty() ? 9.1 : rates.back());

      nlohmann::json j;
      j["command"] = "analyze";
      j["out"] = a_out;
      j["correlations"] = correlations;
      print_summary(j);
      return 0;
    }

    if (*cmd_val) {
      if (!fs::exists(v_sweep)) throw std::runtime_error("validate: sweep not found: " + v_sweep);
      if (!fs::exists(v_ckpt)) {
        throw std::runtime_error("validate: checkpoint not found: " + v_ckpt);
      }
      const auto records = explore::read_sweep_csv(v_sweep);
      const auto ckpt = nn::load_checkpoint(v_ckpt);
      const auto mat = load_material(v_material);
      explore::ValidationOptions opt;
      opt.edge = v_edge;
      opt.final_strain = v_final;
      opt.solver = solver_options(v_integration);
      opt.tolerance = v_tol;
      const auto rows = explore::validate_extremes(records, ckpt, mat, opt);
      write_file(v_out, explore::validation_to_json(rows) + "\n");
      const bool ok = explore::validation_passed(rows, v_tol);
      nlohmann::json j;
      j["command"] = "validate";
      j["out"] = v_out;
      j["rows"] = rows.size();
      j["passed"] = ok;
      print_summary(j);
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
