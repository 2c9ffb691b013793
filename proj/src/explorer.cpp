#include "impactforge/explorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace impactforge::explore {

double SweepGrid::vf_value(int bin) const {
  return vf_min + (bin + 0.5) * (vf_max - vf_min) / vf_bins;
}

double SweepGrid::angle_value(int bin) const {
  return (bin + 0.5) * 2.0 * std::numbers::pi / angle_bins;
}

std::int64_t design_index(const geom::DesignParams& params, const SweepGrid& grid) {
  if (params.sides < 3 || params.sides > 6 || params.nx < 1 || params.nx > 8 ||
      params.ny < 1 || params.ny > 8) {
    throw std::invalid_argument("design_index: parameters off grid");
  }
  const double vf_step = (grid.vf_max - grid.vf_min) / grid.vf_bins;
  const double vf_pos = (params.vf - grid.vf_min) / vf_step - 0.5;
  const int vf_bin = int(std::lround(vf_pos));
  const double angle_step = 2.0 * std::numbers::pi / grid.angle_bins;
  const int angle_bin = int(std::lround(params.angle / angle_step - 0.5));
  if (vf_bin < 0 || vf_bin >= grid.vf_bins ||
      std::abs(grid.vf_value(vf_bin) - params.vf) > 1e-9) {
    throw std::invalid_argument("design_index: vf not a bin midpoint");
  }
  if (angle_bin < 0 || angle_bin >= grid.angle_bins ||
      std::abs(grid.angle_value(angle_bin) - params.angle) > 1e-9) {
    throw std::invalid_argument("design_index: angle not a bin midpoint");
  }
  std::int64_t idx = params.sides - 3;
  idx = idx * 8 + (params.nx - 1);
  idx = idx * 8 + (params.ny - 1);
  idx = idx * grid.vf_bins + vf_bin;
  idx = idx * grid.angle_bins + angle_bin;
  return idx;
}

geom::DesignParams params_at(std::int64_t index, const SweepGrid& grid) {
  if (index < 0 || index >= grid.cardinality()) {
    throw std::invalid_argument("params_at: index out of range");
  }
  geom::DesignParams p;
  const int angle_bin = int(index % grid.angle_bins);
  index /= grid.angle_bins;
  const int vf_bin = int(index % grid.vf_bins);
  index /= grid.vf_bins;
  p.ny = int(index % 8) + 1;
  index /= 8;
  p.nx = int(index % 8) + 1;
  index /= 8;
  p.sides = int(index) + 3;
  p.vf = grid.vf_value(vf_bin);
  p.angle = grid.angle_value(angle_bin);
  return p;
}

double specimen_mass(const geom::DesignParams& params, const fe::MaterialModel& mat) {
  const double cell_area =
      (geom::kRegionSize / params.nx) * (geom::kRegionSize / params.ny);
  const double tubule_area = params.vf * cell_area * params.nx * params.ny;
  const double solid_mm2 = geom::kSpecimenSize * geom::kSpecimenSize - tubule_area;
  const double mass = mat.rho * solid_mm2 * 1e-6;  // kg per unit thickness
  if (!(mass > 0.0)) throw std::invalid_argument("specimen_mass: non-positive mass");
  return mass;
}

double sea(const std::array<std::vector<double>, data::kNumOutputs>& outputs,
           const geom::DesignParams& params, const fe::MaterialModel& mat,
           double final_strain) {
  const auto& stress = outputs[0];
  if (stress.size() < 2) throw std::invalid_argument("sea: need at least 2 points");
  const double width_m = geom::kSpecimenSize * 1e-3;
  const int T = int(stress.size());
  double energy = 0.0;  // J per unit thickness
  for (int i = 1; i < T; ++i) {
    const double f0 = stress[std::size_t(i - 1)] * width_m;
    const double f1 = stress[std::size_t(i)] * width_m;
    const double dx = final_strain * width_m / double(T - 1);
    energy += 0.5 * (f0 + f1) * dx;
  }
  return energy / specimen_mass(params, mat);
}

double sea_of_record(const fe::SimulationRecord& record, const fe::MaterialModel& mat) {
  const double width_m = geom::kSpecimenSize * 1e-3;
  double energy = 0.0;
  for (std::size_t i = 1; i < record.strain.size(); ++i) {
    const double dx = (record.strain[i] - record.strain[i - 1]) * width_m;
    energy += 0.5 * (record.force[i] + record.force[i - 1]) * dx;
  }
  return energy / specimen_mass(record.design, mat);
}

namespace {

void run_partitioned(std::int64_t n, int workers, const std::function<void(std::int64_t, std::int64_t)>& job) {
  if (workers <= 1 || n < 2) {
    job(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t b = w * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(job, b, e);
  }
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<SweepRecord> sweep(const nn::Checkpoint& ckpt, const SweepGrid& grid,
                               const fe::MaterialModel& mat, int workers) {
  const std::int64_t n = grid.cardinality();

  // Geometry validity depends only on the design, compute once per index.
  std::vector<std::uint8_t> valid(std::size_t(n), 0);
  run_partitioned(n, workers, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      valid[std::size_t(i)] = geom::build_design(params_at(i, grid)).valid() ? 1 : 0;
    }
  });

  // Records land in preallocated slots, so the output ordering (by rate
  // list position, then design_index) is independent of scheduling.
  std::vector<SweepRecord> records(std::size_t(n) * grid.rates.size());
  constexpr int kBatch = 256;
  for (std::size_t ri = 0; ri < grid.rates.size(); ++ri) {
    const double rate = grid.rates[ri];
    SweepRecord* slot = records.data() + ri * std::size_t(n);
    run_partitioned(n, workers, [&, slot, rate](std::int64_t begin, std::int64_t end) {
      std::vector<std::tuple<geom::DesignParams, double, double>> queries;
      std::vector<std::int64_t> query_idx;
      auto flush = [&]() {
        if (queries.empty()) return;
        const auto preds = nn::predict_batch(ckpt, queries);
        for (std::size_t k = 0; k < queries.size(); ++k) {
          SweepRecord& rec = slot[query_idx[k]];
          rec.sea = std::max(0.0, sea(preds[k].outputs, rec.params, mat, grid.final_strain));
        }
        queries.clear();
        query_idx.clear();
      };
      for (std::int64_t i = begin; i < end; ++i) {
        SweepRecord& rec = slot[i];
        rec.design_index = i;
        rec.params = params_at(i, grid);
        rec.rate = rate;
        rec.valid = valid[std::size_t(i)] != 0;
        if (!rec.valid) continue;
        queries.emplace_back(rec.params, rate, grid.final_strain);
        query_idx.push_back(i);
        if (int(queries.size()) >= kBatch) flush();
      }
      flush();
    });
  }
  return records;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("pearson: need equal lengths >= 2");
  }
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw std::invalid_argument("pearson: undefined for a constant series");
  }
  return sxy / std::sqrt(sxx * syy);
}

CorrelationReport correlations(const std::vector<SweepRecord>& records, double rate) {
  std::vector<double> sea_v, sides, nx, ny, angle, vf;
  for (const auto& r : records) {
    if (r.rate != rate || !r.valid) continue;
    sea_v.push_back(r.sea);
    sides.push_back(double(r.params.sides));
    nx.push_back(double(r.params.nx));
    ny.push_back(double(r.params.ny));
    angle.push_back(r.params.angle);
    vf.push_back(r.params.vf);
  }
  CorrelationReport rep;
  rep.rate = rate;
  rep.r_sides = pearson(sides, sea_v);
  rep.r_nx = pearson(nx, sea_v);
  rep.r_ny = pearson(ny, sea_v);
  rep.r_angle = pearson(angle, sea_v);
  rep.r_vf = pearson(vf, sea_v);
  return rep;
}

std::pair<SweepRecord, SweepRecord> best_worst(const std::vector<SweepRecord>& records,
                                               double rate) {
  const SweepRecord* best = nullptr;
  const SweepRecord* worst = nullptr;
  for (const auto& r : records) {
    if (r.rate != rate || !r.valid) continue;
    if (best == nullptr || r.sea > best->sea ||
        (r.sea == best->sea && r.design_index < best->design_index)) {
      best = &r;
    }
    if (worst == nullptr || r.sea < worst->sea ||
        (r.sea == worst->sea && r.design_index < worst->design_index)) {
      worst = &r;
    }
  }
  if (best == nullptr) throw std::invalid_argument("best_worst: no valid records at rate");
  return {*best, *worst};
}

std::vector<ValidationRow> validate_extremes(const std::vector<SweepRecord>& records,
                                             const nn::Checkpoint& ckpt,
                                             const fe::MaterialModel& mat,
                                             const ValidationOptions& options) {
  std::vector<double> rates;
  for (const auto& r : records) {
    if (std::find(rates.begin(), rates.end(), r.rate) == rates.end()) rates.push_back(r.rate);
  }
  std::sort(rates.begin(), rates.end());

  std::vector<ValidationRow> rows;
  for (const double rate : rates) {
    const auto [best, worst] = best_worst(records, rate);
    for (const auto* rec : {&best, &worst}) {
      ValidationRow row;
      row.design_index = rec->design_index;
      row.rate = rate;
      const double final_strain = options.final_strain;
      const auto pred = nn::predict(ckpt, rec->params, rate, final_strain);
      row.sea_pred = sea(pred.outputs, rec->params, mat, final_strain);
      try {
        const auto build = geom::build_design(rec->params);
        const auto mesh = geom::rasterize(build.tubules, options.edge);
        auto fe_rec = fe::run_simulation(mesh, mat, rate, final_strain,
                                         options.record_points, options.solver);
        fe_rec.design = rec->params;
        row.sea_fe = sea_of_record(fe_rec, mat);
        row.rel_err = std::abs(row.sea_pred - row.sea_fe) / std::abs(row.sea_fe);
      } catch (const fe::SolverError&) {
        row.fe_failed = true;
        row.rel_err = std::numeric_limits<double>::infinity();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

bool validation_passed(const std::vector<ValidationRow>& rows, double tolerance) {
  for (const auto& r : rows) {
    if (r.fe_failed || !(r.rel_err <= tolerance)) return false;
  }
  return !rows.empty();
}

std::string validation_to_json(const std::vector<ValidationRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["design_index"] = r.design_index;
    j["rate"] = r.rate;
    j["sea_fe"] = r.sea_fe;
    j["sea_pred"] = r.sea_pred;
    j["rel_err"] = r.rel_err;
    j["fe_failed"] = r.fe_failed;
    arr.push_back(j);
  }
  return arr.dump(2);
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRecord>& records) {
  std::ofstream f(path, std::ios::binary);  // LF line endings everywhere
  if (!f) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  f << "design_index,sides,nx,ny,angle_deg,vf,rate_per_s,valid,sea_J_per_kg\n";
  char buf[256];
  for (const auto& r : records) {
    const double deg = r.params.angle * 180.0 / std::numbers::pi;
    if (r.valid) {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%d,%.10g,%.10g,%.10g,1,%.10g\n",
                    (long long)r.design_index, r.params.sides, r.params.nx, r.params.ny, deg,
                    r.params.vf, r.rate, r.sea);
    } else {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%d,%.10g,%.10g,%.10g,0,\n",
                    (long long)r.design_index, r.params.sides, r.params.nx, r.params.ny, deg,
                    r.params.vf, r.rate);
    }
    f << buf;
  }
}

std::vector<SweepRecord> read_sweep_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_sweep_csv: cannot open " + path);
  std::vector<SweepRecord> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    SweepRecord r;
    auto next = [&]() {
      if (!std::getline(ss, tok, ',')) tok.clear();
      return tok;
    };
    r.design_index = std::stoll(next());
    r.params.sides = std::stoi(next());
    r.params.nx = std::stoi(next());
    r.params.ny = std::stoi(next());
    r.params.angle = std::stod(next()) * std::numbers::pi / 180.0;
    r.params.vf = std::stod(next());
    r.rate = std::stod(next());
    r.valid = next() == "1";
    const std::string sea_tok = next();
    r.sea = (r.valid && !sea_tok.empty()) ? std::stod(sea_tok) : 0.0;
    out.push_back(r);
  }
  return out;
}

void write_scatter_svg(const std::string& path, const std::vector<SweepRecord>& records) {
  std::vector<double> rates;
  for (const auto& r : records) {
    if (r.valid && std::find(rates.begin(), rates.end(), r.rate) == rates.end()) {
      rates.push_back(r.rate);
    }
  }
  std::sort(rates.begin(), rates.end());

  const int panel_w = 900, panel_h = 300, margin = 55;
  const int width = panel_w + 2 * margin;
  const int height = int(rates.size()) * (panel_h + margin) + margin;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_scatter_svg: cannot open " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
    << std::max(height, margin * 2) << "\">\n";

  char buf[512];
  int panel = 0;
  constexpr std::size_t kMaxPoints = 20000;
  for (const double rate : rates) {
    std::vector<const SweepRecord*> pts;
    for (const auto& r : records) {
      if (r.valid && r.rate == rate) pts.push_back(&r);
    }
    if (pts.empty()) continue;
    double lo = pts[0]->sea, hi = pts[0]->sea;
    std::int64_t max_idx = 0;
    const SweepRecord* best = pts[0];
    const SweepRecord* worst = pts[0];
    for (const auto* p : pts) {
      lo = std::min(lo, p->sea);
      hi = std::max(hi, p->sea);
      max_idx = std::max(max_idx, p->design_index);
      if (p->sea > best->sea) best = p;
      if (p->sea < worst->sea) worst = p;
    }
    if (hi <= lo) hi = lo + 1.0;
    const double y0 = margin + panel * (panel_h + margin);
    auto px = [&](std::int64_t i) {
      return margin + double(i) / double(std::max<std::int64_t>(1, max_idx)) * panel_w;
    };
    auto py = [&](double s) { return y0 + panel_h - (s - lo) / (hi - lo) * panel_h; };

    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%.0f\" width=\"%d\" height=\"%d\" fill=\"none\" "
                  "stroke=\"black\"/>\n",
                  margin, y0, panel_w, panel_h);
    f << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%.0f\" font-size=\"14\">SEA (J/kg) vs design index, "
                  "rate %.4g 1/s; range [%.4g, %.4g]</text>\n",
                  margin, y0 - 8, rate, lo, hi);
    f << buf;

    const std::size_t stride = std::max<std::size_t>(1, pts.size() / kMaxPoints);
    for (std::size_t i = 0; i < pts.size(); i += stride) {
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1\" fill=\"steelblue\"/>\n",
                    px(pts[i]->design_index), py(pts[i]->sea));
      f << buf;
    }
    for (const auto* p : {best, worst}) {
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"5\" fill=\"none\" stroke=\"red\" "
                    "stroke-width=\"2\"/>\n",
                    px(p->design_index), py(p->sea));
      f << buf;
    }
    ++panel;
  }
  f << "</svg>\n";
}

void write_angle_trend_csv(const std::string& path, const nn::Checkpoint& ckpt,
                           const SweepGrid& grid, const fe::MaterialModel& mat, int nx, int ny,
                           double vf, double rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_angle_trend_csv: cannot open " + path);
  f << "angle_deg,sea_J_per_kg\n";
  std::vector<std::tuple<geom::DesignParams, double, double>> queries;
  for (int b = 0; b < grid.angle_bins; ++b) {
    geom::DesignParams p;
    p.sides = 4;
    p.nx = nx;
    p.ny = ny;
    p.vf = vf;
    p.angle = grid.angle_value(b);
    queries.emplace_back(p, rate, grid.final_strain);
  }
  const auto preds = nn::predict_batch(ckpt, queries);
  char buf[128];
  for (std::size_t b = 0; b < queries.size(); ++b) {
    const auto& p = std::get<0>(queries[b]);
    const double s = sea(preds[b].outputs, p, mat, grid.final_strain);
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g\n", p.angle * 180.0 / std::numbers::pi, s);
    f << buf;
  }
}

}  // namespace impactforge::explore
