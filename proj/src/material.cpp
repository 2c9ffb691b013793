#include "impactforge/material.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace impactforge::fe {

double MaterialModel::dilatational_wave_speed() const {
  return std::sqrt(constrained_modulus() / rho);
}

double MaterialModel::sigma0(double epbar) const {
  const auto& h = hardening;
  if (epbar <= h.front().first) return h.front().second;
  for (std::size_t i = 0; i + 1 < h.size(); ++i) {
    if (epbar <= h[i + 1].first) {
      const double t = (epbar - h[i].first) / (h[i + 1].first - h[i].first);
      return h[i].second + t * (h[i + 1].second - h[i].second);
    }
  }
  return h.back().second;
}

double MaterialModel::sigma0_slope(double epbar) const {
  const auto& h = hardening;
  if (epbar < h.front().first) return 0.0;
  for (std::size_t i = 0; i + 1 < h.size(); ++i) {
    if (epbar < h[i + 1].first) {
      return (h[i + 1].second - h[i].second) / (h[i + 1].first - h[i].first);
    }
  }
  return 0.0;
}

void MaterialModel::validate() const {
  if (!(E > 0.0)) throw std::invalid_argument("material: E must be > 0");
  if (!(nu > 0.0 && nu < 0.5)) throw std::invalid_argument("material: nu must be in (0,0.5)");
  if (!(rho > 0.0)) throw std::invalid_argument("material: rho must be > 0");
  if (!(D > 0.0)) throw std::invalid_argument("material: D must be > 0");
  if (!(n_exp >= 1.0)) throw std::invalid_argument("material: n_exp must be >= 1");
  if (hardening.empty()) throw std::invalid_argument("material: empty hardening table");
  double prev_e = -1.0, prev_s = 0.0;
  for (const auto& [e, s] : hardening) {
    if (!(e >= 0.0) || e <= prev_e) {
      throw std::invalid_argument("material: hardening epbar must be >= 0 and increasing");
    }
    if (!(s > 0.0) || s < prev_s) {
      throw std::invalid_argument("material: sigma0 must be positive and non-decreasing");
    }
    prev_e = e;
    prev_s = s;
  }
}

MaterialModel MaterialModel::elastic_only() {
  MaterialModel m;
  m.hardening = {{0.0, 1.0e15}};
  return m;
}

MaterialModel MaterialModel::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MaterialModel m;
  m.E = j.at("E_Pa").get<double>();
  m.nu = j.at("nu").get<double>();
  m.rho = j.at("rho_kg_m3").get<double>();
  m.hardening.clear();
  for (const auto& row : j.at("hardening")) {
    m.hardening.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
  }
  m.D = j.at("D_per_s").get<double>();
  m.n_exp = j.at("n_exp").get<double>();
  m.validate();
  return m;
}

std::string MaterialModel::to_json() const {
  nlohmann::json j;
  j["E_Pa"] = E;
  j["nu"] = nu;
  j["rho_kg_m3"] = rho;
  auto rows = nlohmann::json::array();
  for (const auto& [e, s] : hardening) rows.push_back({e, s});
  j["hardening"] = rows;
  j["D_per_s"] = D;
  j["n_exp"] = n_exp;
  return j.dump();
}

}  // namespace impactforge::fe
