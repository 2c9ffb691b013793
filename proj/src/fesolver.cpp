#include "impactforge/fesolver.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>

#include <json.hpp>

namespace impactforge::fe {

namespace {

// n_exp is almost always a small integer; avoid libm pow on the hot path.
inline double pow_n(double x, double n) {
  if (n == 1.0) return x;
  if (n == 2.0) return x * x;
  if (n == 3.0) return x * x * x;
  return std::pow(x, n);
}

struct ScalarReturn {
  double depbar = 0.0;
  double q_new = 0.0;
  int iterations = 0;
};

// Scalar backward-Euler residual solve, shared by radial_return and the
// time-stepping loop. Requires q_trial > sigma0(epbar).
ScalarReturn solve_return_map(double q_trial, double epbar, double dt,
                              const MaterialModel& mat, double shear_g, double warm_start) {
  const double three_g = 3.0 * shear_g;
  const double hi0 = (q_trial - mat.sigma0(epbar)) / three_g;
  double lo = 0.0;
  double hi = hi0;
  double d = (warm_start > 0.0 && warm_start < hi0) ? warm_start : 0.5 * hi0;
  const double tol = 1e-16 * hi0;

  for (int it = 1; it <= 200; ++it) {
    const double s = mat.sigma0(epbar + d);
    const double q = q_trial - three_g * d;
    const double x = q / s - 1.0;
    double g, dg;
    if (x <= 0.0) {
      g = d;
      dg = 1.0;
    } else {
      g = d - dt * mat.D * pow_n(x, mat.n_exp);
      const double sp = mat.sigma0_slope(epbar + d);
      const double dx = -(three_g * s + q * sp) / (s * s);
      dg = 1.0 - dt * mat.D * mat.n_exp * pow_n(x, mat.n_exp - 1.0) * dx;
    }
    if (std::abs(g) <= tol) return {d, q_trial - three_g * d, it};
    if (g > 0.0) {
      hi = d;
    } else {
      lo = d;
    }
    double next = d - g / dg;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == d || hi - lo <= 4e-16 * hi0) {
      return {next, q_trial - three_g * next, it};
    }
    d = next;
  }
  throw SolverError("radial_return: no convergence after 200 iterations (q_trial=" +
                    std::to_string(q_trial) + " Pa, epbar=" + std::to_string(epbar) +
                    ", dt=" + std::to_string(dt) + " s)");
}

inline double deviatoric_invariant(const Stress4& s, double p) {
  const double sx = s.xx - p;
  const double sy = s.yy - p;
  const double sz = s.zz - p;
  return std::sqrt(1.5 * (sx * sx + sy * sy + sz * sz + 2.0 * s.xy * s.xy));
}

}  // namespace

double von_mises(const Stress4& s) {
  return deviatoric_invariant(s, (s.xx + s.yy + s.zz) / 3.0);
}

Stress4 flow_direction(const Stress4& s) {
  const double p = (s.xx + s.yy + s.zz) / 3.0;
  const double q = deviatoric_invariant(s, p);
  if (q <= 0.0) {
    throw std::domain_error("flow_direction: undefined at q = 0");
  }
  const double c = 1.5 / q;
  return {c * (s.xx - p), c * (s.yy - p), c * (s.zz - p), c * s.xy};
}

double overstress_rate(double q, double epbar, const MaterialModel& mat) {
  const double s0 = mat.sigma0(epbar);
  if (q <= s0) return 0.0;
  return mat.D * pow_n(q / s0 - 1.0, mat.n_exp);
}

Strain4 ElementState::elastic_strain(const MaterialModel& mat) const {
  const double tr = stress.xx + stress.yy + stress.zz;
  const double a = (1.0 + mat.nu) / mat.E;
  const double b = mat.nu / mat.E;
  return {a * stress.xx - b * tr, a * stress.yy - b * tr, a * stress.zz - b * tr,
          a * stress.xy};
}

ReturnMapResult radial_return(const Stress4& trial, double dt, const ElementState& state,
                              const MaterialModel& mat) {
  if (!(dt > 0.0)) throw std::invalid_argument("radial_return: dt must be > 0");
  ReturnMapResult out;
  const double p = (trial.xx + trial.yy + trial.zz) / 3.0;
  const double q_trial = deviatoric_invariant(trial, p);
  if (q_trial <= mat.sigma0(state.epbar)) {
    out.state.stress = trial;
    out.state.epbar = state.epbar;
    return out;
  }
  const auto rm = solve_return_map(q_trial, state.epbar, dt, mat, mat.shear_modulus(), 0.0);
  const double scale = rm.q_new / q_trial;
  out.state.stress = {(trial.xx - p) * scale + p, (trial.yy - p) * scale + p,
                      (trial.zz - p) * scale + p, trial.xy * scale};
  out.state.epbar = state.epbar + rm.depbar;
  out.depbar = rm.depbar;
  out.iterations = rm.iterations;
  return out;
}

namespace {

// Shape-function gradients of a bilinear quad at one parent point.
void quad_gradients(const std::array<Vec2, 4>& x, double xi, double eta,
                    std::array<double, 4>& bx, std::array<double, 4>& by, double& det_j) {
  static constexpr double xs[4] = {-1.0, 1.0, 1.0, -1.0};
  static constexpr double es[4] = {-1.0, -1.0, 1.0, 1.0};
  double dxi[4], deta[4];
  for (int a = 0; a < 4; ++a) {
    dxi[a] = 0.25 * xs[a] * (1.0 + es[a] * eta);
    deta[a] = 0.25 * es[a] * (1.0 + xs[a] * xi);
  }
  double j11 = 0, j12 = 0, j21 = 0, j22 = 0;
  for (int a = 0; a < 4; ++a) {
    j11 += dxi[a] * x[a].x;
    j12 += dxi[a] * x[a].y;
    j21 += deta[a] * x[a].x;
    j22 += deta[a] * x[a].y;
  }
  det_j = j11 * j22 - j12 * j21;
  if (!(det_j > 0.0)) return;  // caller reports
  const double inv = 1.0 / det_j;
  for (int a = 0; a < 4; ++a) {
    bx[a] = inv * (j22 * dxi[a] - j12 * deta[a]);
    by[a] = inv * (-j21 * dxi[a] + j11 * deta[a]);
  }
}

constexpr double kGp = 0.5773502691896257;  // 1/sqrt(3)

}  // namespace

QuadForceResult element_internal_force(const std::array<Vec2, 4>& X,
                                       const std::array<Vec2, 4>& du,
                                       std::span<ElementState> gp_states,
                                       const MaterialModel& mat, double dt,
                                       Integration scheme) {
  const int ngp = scheme == Integration::kFull ? 4 : 1;
  if (int(gp_states.size()) != ngp) {
    throw std::invalid_argument("element_internal_force: gp_states size mismatch");
  }
  static constexpr double gp_full[4][2] = {
      {-kGp, -kGp}, {kGp, -kGp}, {kGp, kGp}, {-kGp, kGp}};
  const double lam = mat.lame_lambda();
  const double g2 = 2.0 * mat.shear_modulus();

  QuadForceResult out;
  for (int g = 0; g < ngp; ++g) {
    const double xi = scheme == Integration::kFull ? gp_full[g][0] : 0.0;
    const double eta = scheme == Integration::kFull ? gp_full[g][1] : 0.0;
    std::array<double, 4> bx, by;
    double det_j;
    quad_gradients(X, xi, eta, bx, by, det_j);
    if (!(det_j > 0.0)) {
      throw SolverError("element_internal_force: non-positive Jacobian (inverted element)");
    }
    const double w = det_j * (scheme == Integration::kFull ? 1.0 : 4.0);

    double dexx = 0, deyy = 0, dgxy = 0;
    for (int a = 0; a < 4; ++a) {
      dexx += bx[a] * du[a].x;
      deyy += by[a] * du[a].y;
      dgxy += by[a] * du[a].x + bx[a] * du[a].y;
    }
    const double tr = dexx + deyy;
    Stress4 trial = gp_states[g].stress;
    trial.xx += lam * tr + g2 * dexx;
    trial.yy += lam * tr + g2 * deyy;
    trial.zz += lam * tr;
    trial.xy += 0.5 * g2 * dgxy;

    gp_states[g] = radial_return(trial, dt, gp_states[g], mat).state;
    const Stress4& s = gp_states[g].stress;
    for (int a = 0; a < 4; ++a) {
      out.force[a].x += (bx[a] * s.xx + by[a] * s.xy) * w;
      out.force[a].y += (by[a] * s.yy + bx[a] * s.xy) * w;
    }
  }
  return out;
}

double stable_dt(const geom::RasterMesh& mesh, const MaterialModel& mat, double safety) {
  if (!(safety > 0.0 && safety <= 1.0)) {
    throw std::invalid_argument("stable_dt: safety must be in (0,1]");
  }
  return safety * (mesh.edge * 1e-3) / mat.dilatational_wave_speed();
}

namespace {

struct EnergySnapshot {
  double reaction = 0.0;  // N/m, compression positive
  double w_ext = 0.0;
  double e_pl = 0.0;
  double e_el = 0.0;
  double e_k = 0.0;
  double e_hg = 0.0;
};

struct RecordLevel {
  double strain = 0.0;
  double t = 0.0;
  std::int64_t n_lo = 0;
  std::int64_t n_hi = 0;
  double alpha = 0.0;
};

}  // namespace

SimulationRecord run_simulation(const geom::RasterMesh& mesh, const MaterialModel& mat,
                                double strain_rate, double final_strain, int record_points,
                                const SolverOptions& options) {
  mat.validate();
  if (record_points < 1) throw std::invalid_argument("run_simulation: record_points < 1");
  if (!(final_strain >= 0.0 && final_strain <= 0.25 + 1e-12)) {
    throw std::invalid_argument("run_simulation: final_strain must be in [0, 0.25]");
  }

  SimulationRecord rec;
  rec.rate = strain_rate;
  rec.final_strain = final_strain;
  if (final_strain == 0.0) {
    rec.time.assign(1, 0.0);
    rec.strain.assign(1, 0.0);
    rec.stress.assign(1, 0.0);
    rec.force.assign(1, 0.0);
    rec.E_pl.assign(1, 0.0);
    rec.E_el.assign(1, 0.0);
    rec.E_k.assign(1, 0.0);
    rec.E_hg.assign(1, 0.0);
    rec.W_ext.assign(1, 0.0);
    return rec;
  }
  if (!(strain_rate > 0.0)) throw std::invalid_argument("run_simulation: strain_rate must be > 0");

  const int ex = mesh.elems_x;
  const int ey = mesh.elems_y;
  const int nnx = ex + 1;
  const int nny = ey + 1;
  const int nnodes = nnx * nny;
  const double h = mesh.edge * 1e-3;  // m
  const double width = geom::kSpecimenSize * 1e-3;

  if (!mesh.has_full_load_path()) {
    throw std::invalid_argument("run_simulation: mesh load path is severed");
  }

  // Active element connectivity (CCW local node order).
  std::vector<std::array<int, 4>> elems;
  elems.reserve(mesh.active_count());
  for (int j = 0; j < ey; ++j) {
    for (int i = 0; i < ex; ++i) {
      if (!mesh.is_active(i, j)) continue;
      const int n0 = j * nnx + i;
      elems.push_back({n0, n0 + 1, n0 + 1 + nnx, n0 + nnx});
    }
  }
  const std::size_t nelems = elems.size();

  // Lumped mass, per unit thickness.
  std::vector<double> mass(nnodes, 0.0), inv_mass(nnodes, 0.0);
  const double m_node = mat.rho * h * h / 4.0;
  for (const auto& e : elems) {
    for (int a = 0; a < 4; ++a) mass[e[a]] += m_node;
  }
  for (int i = 0; i < nnodes; ++i) inv_mass[i] = mass[i] > 0.0 ? 1.0 / mass[i] : 0.0;

  std::vector<int> top_nodes, bottom_nodes;
  top_nodes.reserve(nnx);
  bottom_nodes.reserve(nnx);
  for (int i = 0; i < nnx; ++i) {
    top_nodes.push_back((nny - 1) * nnx + i);
    bottom_nodes.push_back(i);
  }
  // Horizontal rigid-body control: bottom node with mass nearest the
  // vertical centerline (keeps mirrored designs bitwise comparable).
  int pin_node = -1;
  double best = 1e30;
  for (int i = 0; i < nnx; ++i) {
    if (mass[i] <= 0.0) continue;
    const double d = std::abs(i - 0.5 * ex);
    if (d < best) {
      best = d;
      pin_node = i;
    }
  }
  if (pin_node < 0) throw SolverError("run_simulation: bottom edge carries no mass");

  // Gauss data for the uniform square element.
  const bool reduced = options.integration == Integration::kReduced;
  const int ngp = reduced ? 1 : 4;
  double bx[4][4], by[4][4];
  {
    static constexpr double xs[4] = {-1.0, 1.0, 1.0, -1.0};
    static constexpr double es[4] = {-1.0, -1.0, 1.0, 1.0};
    for (int g = 0; g < ngp; ++g) {
      const double xi = reduced ? 0.0 : kGp * xs[g];
      const double eta = reduced ? 0.0 : kGp * es[g];
      for (int a = 0; a < 4; ++a) {
        bx[g][a] = 0.25 * xs[a] * (1.0 + es[a] * eta) * 2.0 / h;
        by[g][a] = 0.25 * es[a] * (1.0 + xs[a] * xi) * 2.0 / h;
      }
    }
  }
  const double w_gp = reduced ? h * h : h * h / 4.0;

  const double t_total = final_strain / strain_rate;
  const double dt0 = stable_dt(mesh, mat, options.cfl_safety);
  const std::int64_t nsteps = std::max<std::int64_t>(1, std::int64_t(std::ceil(t_total / dt0)));
  const double dt = t_total / double(nsteps);
  const double v_top = -strain_rate * width;

  // Record levels: uniformly spaced strains, interpolated between the
  // two bracketing states.
  const int np = record_points;
  std::vector<RecordLevel> levels;
  std::vector<std::uint8_t> need_snapshot(std::size_t(nsteps) + 1, 0);
  for (int k = 0; k < np; ++k) {
    RecordLevel lv;
    lv.strain = np > 1 ? final_strain * double(k) / double(np - 1) : final_strain;
    lv.t = lv.strain / strain_rate;
    if (k == 0 && np > 1) {
      levels.push_back(lv);
      continue;
    }
    const double x = lv.t / dt;
    lv.n_hi = std::clamp<std::int64_t>(std::int64_t(std::ceil(x)), 1, nsteps);
    lv.n_lo = lv.n_hi - 1;
    lv.alpha = std::clamp(x - double(lv.n_lo), 0.0, 1.0);
    need_snapshot[std::size_t(lv.n_lo)] = 1;
    need_snapshot[std::size_t(lv.n_hi)] = 1;
    levels.push_back(lv);
  }

  std::vector<double> vx(nnodes, 0.0), vy(nnodes, 0.0);
  std::vector<double> fx(nnodes, 0.0), fy(nnodes, 0.0);
  std::vector<Stress4> stress(nelems * ngp);
  std::vector<double> epbar(nelems * ngp, 0.0);
  std::vector<double> warm(nelems * ngp, 0.0);

  const double lam = mat.lame_lambda();
  const double g_mod = mat.shear_modulus();
  const double g2 = 2.0 * g_mod;
  const double inv_e = 1.0 / mat.E;
  const double nu = mat.nu;
  const double c_hg = options.hourglass_coeff * mat.rho * mat.dilatational_wave_speed() * h / 4.0;

  double e_pl = 0.0, e_hg = 0.0, w_ext = 0.0;
  std::map<std::int64_t, EnergySnapshot> snapshots;
  snapshots[0] = EnergySnapshot{};

  auto emit = [&](const RecordLevel& lv) {
    const auto& lo = snapshots.at(lv.n_lo);
    const auto& hi = snapshots.at(lv.n_hi);
    const double a = lv.alpha;
    auto lerp = [a](double u, double v) { return u + a * (v - u); };
    const double reaction = lerp(lo.reaction, hi.reaction);
    const double w = lerp(lo.w_ext, hi.w_ext);
    const double ek = lerp(lo.e_k, hi.e_k);
    const double eel = lerp(lo.e_el, hi.e_el);
    const double epl = lerp(lo.e_pl, hi.e_pl);
    const double ehg = lerp(lo.e_hg, hi.e_hg);

    const double residual = std::abs(w - (ek + eel + epl + ehg));
    const double floor = 1e-12 * mat.E * double(nelems) * h * h;
    if (!std::isfinite(residual) || residual > options.energy_tolerance * std::abs(w) + floor) {
      throw SolverError("run_simulation: energy balance violated at strain " +
                        std::to_string(lv.strain) + " (W_ext=" + std::to_string(w) +
                        " J/m, residual=" + std::to_string(residual) + " J/m)");
    }
    rec.time.push_back(lv.t);
    rec.strain.push_back(lv.strain);
    rec.force.push_back(reaction);
    rec.stress.push_back(reaction / width);
    rec.E_pl.push_back(epl);
    rec.E_el.push_back(eel);
    rec.E_k.push_back(ek);
    rec.E_hg.push_back(ehg);
    rec.W_ext.push_back(w);
  };

  std::size_t next_level = 0;
  while (next_level < levels.size() && levels[next_level].n_hi == 0) {
    emit(levels[next_level]);
    ++next_level;
  }

  for (std::int64_t n = 0; n < nsteps; ++n) {
    // External work done through the prescribed top edge, using the
    // central displacement increment (exact for the staggered scheme).
    double fy_top = 0.0;
    for (int id : top_nodes) fy_top += fy[id];
    if (n == 0) {
      double m_top = 0.0;
      for (int id : top_nodes) m_top += mass[id];
      w_ext += (m_top * v_top / dt + fy_top) * (v_top * dt * 0.5);
    } else {
      w_ext += fy_top * v_top * dt;
    }

    for (int i = 0; i < nnodes; ++i) {
      vx[i] -= fx[i] * dt * inv_mass[i];
      vy[i] -= fy[i] * dt * inv_mass[i];
    }
    for (int id : top_nodes) vy[id] = v_top;
    for (int id : bottom_nodes) vy[id] = 0.0;
    if (options.confine_lateral) {
      std::fill(vx.begin(), vx.end(), 0.0);
    } else {
      vx[pin_node] = 0.0;
    }

    std::fill(fx.begin(), fx.end(), 0.0);
    std::fill(fy.begin(), fy.end(), 0.0);
    const bool want_el = need_snapshot[std::size_t(n + 1)] != 0;
    double e_el_acc = 0.0;

    for (std::size_t e = 0; e < nelems; ++e) {
      const auto& en = elems[e];
      double dux[4], duy[4];
      for (int a = 0; a < 4; ++a) {
        dux[a] = vx[en[a]] * dt;
        duy[a] = vy[en[a]] * dt;
      }
      double flx[4] = {0, 0, 0, 0}, fly[4] = {0, 0, 0, 0};
      for (int g = 0; g < ngp; ++g) {
        double dexx = 0, deyy = 0, dgxy = 0;
        for (int a = 0; a < 4; ++a) {
          dexx += bx[g][a] * dux[a];
          deyy += by[g][a] * duy[a];
          dgxy += by[g][a] * dux[a] + bx[g][a] * duy[a];
        }
        const std::size_t idx = e * ngp + g;
        Stress4& s = stress[idx];
        const double tr = dexx + deyy;
        s.xx += lam * tr + g2 * dexx;
        s.yy += lam * tr + g2 * deyy;
        s.zz += lam * tr;
        s.xy += g_mod * dgxy;

        const double p = (s.xx + s.yy + s.zz) / 3.0;
        const double sx = s.xx - p, sy = s.yy - p, sz = s.zz - p;
        const double q = std::sqrt(1.5 * (sx * sx + sy * sy + sz * sz + 2.0 * s.xy * s.xy));
        const double s0 = mat.sigma0(epbar[idx]);
        if (q > s0) {
          const auto rm = solve_return_map(q, epbar[idx], dt, mat, g_mod, warm[idx]);
          const double scale = rm.q_new / q;
          s.xx = sx * scale + p;
          s.yy = sy * scale + p;
          s.zz = sz * scale + p;
          s.xy *= scale;
          epbar[idx] += rm.depbar;
          warm[idx] = rm.depbar;
          e_pl += rm.q_new * rm.depbar * w_gp;
        } else {
          warm[idx] = 0.0;
        }
        for (int a = 0; a < 4; ++a) {
          flx[a] += (bx[g][a] * s.xx + by[g][a] * s.xy) * w_gp;
          fly[a] += (by[g][a] * s.yy + bx[g][a] * s.xy) * w_gp;
        }
        if (want_el) {
          const double ss = s.xx * s.xx + s.yy * s.yy + s.zz * s.zz + 2.0 * s.xy * s.xy;
          const double trs = s.xx + s.yy + s.zz;
          e_el_acc += 0.5 * inv_e * ((1.0 + nu) * ss - nu * trs * trs) * w_gp;
        }
      }
      if (reduced) {
        // Viscous hourglass control on the (1,-1,1,-1) mode.
        const double qdx = vx[en[0]] - vx[en[1]] + vx[en[2]] - vx[en[3]];
        const double qdy = vy[en[0]] - vy[en[1]] + vy[en[2]] - vy[en[3]];
        static constexpr double gam[4] = {1.0, -1.0, 1.0, -1.0};
        for (int a = 0; a < 4; ++a) {
          flx[a] += c_hg * qdx * gam[a];
          fly[a] += c_hg * qdy * gam[a];
        }
        e_hg += c_hg * (qdx * qdx + qdy * qdy) * dt;
      }
      for (int a = 0; a < 4; ++a) {
        fx[en[a]] += flx[a];
        fy[en[a]] += fly[a];
      }
    }

    if (need_snapshot[std::size_t(n + 1)]) {
      EnergySnapshot snap;
      double r_new = 0.0;
      for (int id : top_nodes) r_new -= fy[id];
      snap.reaction = r_new;
      snap.w_ext = w_ext;
      snap.e_pl = e_pl;
      snap.e_el = e_el_acc;
      snap.e_hg = e_hg;
      double ke = 0.0;
      for (int i = 0; i < nnodes; ++i) ke += mass[i] * (vx[i] * vx[i] + vy[i] * vy[i]);
      snap.e_k = 0.5 * ke;
      snapshots[n + 1] = snap;
    }
    while (next_level < levels.size() && levels[next_level].n_hi == n + 1) {
      emit(levels[next_level]);
      ++next_level;
    }
  }
  return rec;
}

std::string SimulationRecord::to_jsonl() const {
  nlohmann::json j;
  j["id"] = id;
  j["design"] = nlohmann::json::parse(geom::design_to_json(design));
  j["rate_per_s"] = rate;
  j["final_strain"] = final_strain;
  j["time_s"] = time;
  j["strain"] = strain;
  j["stress_Pa"] = stress;
  j["force_N_per_m"] = force;
  j["E_pl_J"] = E_pl;
  j["E_el_J"] = E_el;
  j["E_k_J"] = E_k;
  j["E_hg_J"] = E_hg;
  j["W_ext_J"] = W_ext;
  return j.dump();
}

SimulationRecord SimulationRecord::from_jsonl(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  SimulationRecord r;
  r.id = j.value("id", std::int64_t{-1});
  r.design = geom::design_from_json(j.at("design").dump());
  r.rate = j.at("rate_per_s").get<double>();
  r.final_strain = j.at("final_strain").get<double>();
  r.time = j.at("time_s").get<std::vector<double>>();
  r.strain = j.at("strain").get<std::vector<double>>();
  r.stress = j.at("stress_Pa").get<std::vector<double>>();
  r.force = j.at("force_N_per_m").get<std::vector<double>>();
  r.E_pl = j.at("E_pl_J").get<std::vector<double>>();
  r.E_el = j.at("E_el_J").get<std::vector<double>>();
  r.E_k = j.at("E_k_J").get<std::vector<double>>();
  if (j.contains("E_hg_J")) r.E_hg = j.at("E_hg_J").get<std::vector<double>>();
  else r.E_hg.assign(r.time.size(), 0.0);
  if (j.contains("W_ext_J")) r.W_ext = j.at("W_ext_J").get<std::vector<double>>();
  else r.W_ext.assign(r.time.size(), 0.0);
  return r;
}

}  // namespace impactforge::fe
