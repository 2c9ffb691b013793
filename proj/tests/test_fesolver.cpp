#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "impactforge/fesolver.hpp"
#include "impactforge/rng.hpp"

using namespace impactforge;
using fe::ElementState;
using fe::MaterialModel;
using fe::Stress4;
using geom::Vec2;

namespace {

// Independent residual + plain bisection, the oracle for the return map.
double bisection_oracle(double q_trial, double epbar, double dt, const MaterialModel& mat) {
  const double g_mod = mat.shear_modulus();
  auto residual = [&](double d) {
    const double s0 = mat.sigma0(epbar + d);
    const double x = (q_trial - 3.0 * g_mod * d) / s0 - 1.0;
    return d - dt * mat.D * (x > 0.0 ? std::pow(x, mat.n_exp) : 0.0);
  };
  double lo = 0.0;
  double hi = (q_trial - mat.sigma0(epbar)) / (3.0 * g_mod);
  for (int i = 0; i < 300; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (residual(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

MaterialModel flat_yield(double sigma0, double D, double n_exp) {
  MaterialModel m;
  m.hardening = {{0.0, sigma0}};
  m.D = D;
  m.n_exp = n_exp;
  return m;
}

}  // namespace

TEST_CASE("von Mises identities") {
  CHECK(fe::von_mises({2.0e8, 0, 0, 0}) == doctest::Approx(2.0e8).epsilon(1e-12));
  CHECK(fe::von_mises({0, 0, 0, 1.0e7}) ==
        doctest::Approx(std::sqrt(3.0) * 1.0e7).epsilon(1e-12));
  CHECK(fe::von_mises({5e6, 5e6, 5e6, 0}) == doctest::Approx(0.0));
}

TEST_CASE("flow direction") {
  const auto n = fe::flow_direction({3.0e7, 0, 0, 0});
  CHECK(n.xx == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(n.yy == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(n.zz == doctest::Approx(-0.5).epsilon(1e-12));

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Stress4 s{rng.uniform(-1e8, 1e8), rng.uniform(-1e8, 1e8), rng.uniform(-1e8, 1e8),
                    rng.uniform(-1e8, 1e8)};
    if (fe::von_mises(s) < 1e3) continue;
    const auto d = fe::flow_direction(s);
    const double nn = d.xx * d.xx + d.yy * d.yy + d.zz * d.zz + 2.0 * d.xy * d.xy;
    CHECK(nn == doctest::Approx(1.5).epsilon(1e-10));
    const Stress4 scaled{3.0 * s.xx, 3.0 * s.yy, 3.0 * s.zz, 3.0 * s.xy};
    const auto d2 = fe::flow_direction(scaled);
    CHECK(d2.xx == doctest::Approx(d.xx).epsilon(1e-10));
    CHECK(d2.xy == doctest::Approx(d.xy).epsilon(1e-10));
  }

  CHECK_THROWS_AS(fe::flow_direction({1e5, 1e5, 1e5, 0}), std::domain_error);
}

TEST_CASE("overstress rate") {
  const auto m1 = flat_yield(60e6, 1.0, 1.0);
  CHECK(fe::overstress_rate(60e6, 0.0, m1) == 0.0);
  CHECK(fe::overstress_rate(120e6, 0.0, m1) == doctest::Approx(1.0).epsilon(1e-12));
  const auto m2 = flat_yield(60e6, 10.0, 2.0);
  CHECK(fe::overstress_rate(90e6, 0.0, m2) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(fe::overstress_rate(30e6, 0.0, m2) == 0.0);
}

TEST_CASE("radial return: elastic passthrough below yield") {
  const auto mat = MaterialModel::pc_abs_like();
  ElementState st;
  const Stress4 trial{4e7, -1e7, 0.5e7, 1e7};
  REQUIRE(fe::von_mises(trial) < mat.sigma0(0.0));
  const auto out = fe::radial_return(trial, 1e-7, st, mat);
  CHECK(out.depbar == 0.0);
  CHECK(out.state.stress.xx == trial.xx);
  CHECK(out.state.epbar == 0.0);
}

TEST_CASE("radial return matches the bisection oracle on 100 random states") {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    MaterialModel mat;
    mat.hardening = {{0.0, rng.uniform(30e6, 80e6)}, {0.5, rng.uniform(80e6, 120e6)}};
    mat.D = rng.uniform(1.0, 1e4);
    mat.n_exp = rng.uniform(1.0, 4.0);
    const double epbar = rng.uniform(0.0, 0.6);
    const double s0 = mat.sigma0(epbar);
    const double q_trial = s0 * rng.uniform(1.0001, 5.0);
    const double dt = std::pow(10.0, rng.uniform(-9.0, -3.0));

    // Build a pure-deviatoric trial with the prescribed q.
    const Stress4 trial{q_trial * 2.0 / 3.0, -q_trial / 3.0, -q_trial / 3.0, 0.0};
    REQUIRE(fe::von_mises(trial) == doctest::Approx(q_trial).epsilon(1e-12));

    ElementState st;
    st.epbar = epbar;
    const auto out = fe::radial_return(trial, dt, st, mat);
    const double oracle = bisection_oracle(q_trial, epbar, dt, mat);
    CHECK(out.depbar == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(out.state.epbar >= epbar);

    // Residual at the root, in stress units, is essentially zero.
    const double g_mod = mat.shear_modulus();
    const double x = (q_trial - 3.0 * g_mod * out.depbar) / mat.sigma0(epbar + out.depbar) - 1.0;
    const double g = out.depbar - dt * mat.D * (x > 0 ? std::pow(x, mat.n_exp) : 0.0);
    CHECK(std::abs(g) * 3.0 * g_mod <= 1e-10 * q_trial);
  }
}

TEST_CASE("radial return approaches the rate-independent limit for large dt") {
  const auto mat = flat_yield(60e6, 100.0, 2.0);
  const double q_trial = 1.8 * 60e6;
  ElementState st;
  const Stress4 trial{q_trial * 2.0 / 3.0, -q_trial / 3.0, -q_trial / 3.0, 0.0};
  double prev_gap = 1e99;
  for (const double dt : {1e-6, 1e-2, 1.0, 100.0, 1e6}) {
    const auto out = fe::radial_return(trial, dt, st, mat);
    const double q_new = fe::von_mises(out.state.stress);
    const double gap = q_new - mat.sigma0(out.state.epbar);
    CHECK(gap >= -1e-6 * q_trial);
    CHECK(gap <= prev_gap + 1e-9 * q_trial);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-3 * 60e6);  // within 0.1% of the static surface
}

TEST_CASE("element force: zero displacement and rigid translation give zero") {
  const auto mat = MaterialModel::pc_abs_like();
  const std::array<Vec2, 4> X{{{0, 0}, {1e-3, 0}, {1e-3, 1e-3}, {0, 1e-3}}};
  std::array<ElementState, 4> states{};
  const std::array<Vec2, 4> zero{};
  auto out = fe::element_internal_force(X, zero, states, mat, 1e-7, fe::Integration::kFull);
  for (const auto& f : out.force) {
    CHECK(f.x == 0.0);
    CHECK(f.y == 0.0);
  }
  const std::array<Vec2, 4> rigid{{{2e-6, -1e-6}, {2e-6, -1e-6}, {2e-6, -1e-6}, {2e-6, -1e-6}}};
  out = fe::element_internal_force(X, rigid, states, mat, 1e-7, fe::Integration::kFull);
  for (const auto& f : out.force) {
    CHECK(std::abs(f.x) < 1e-6);  // N/m; pure roundoff
    CHECK(std::abs(f.y) < 1e-6);
  }
}

TEST_CASE("element force: uniform vertical strain matches the constrained modulus") {
  const auto mat = MaterialModel::elastic_only();
  const double h = 1e-3, eps = 1e-4;
  const std::array<Vec2, 4> X{{{0, 0}, {h, 0}, {h, h}, {0, h}}};
  std::array<ElementState, 4> states{};
  const std::array<Vec2, 4> du{{{0, 0}, {0, 0}, {0, -eps * h}, {0, -eps * h}}};
  const auto out = fe::element_internal_force(X, du, states, mat, 1e-7, fe::Integration::kFull);
  const double m_constrained = mat.constrained_modulus();
  CHECK(m_constrained == doctest::Approx(4.0123456790e9).epsilon(1e-6));
  // total vertical force on the top edge = sigma_yy * width
  const double f_top = out.force[2].y + out.force[3].y;
  CHECK(f_top == doctest::Approx(-m_constrained * eps * h).epsilon(1e-9));
  CHECK(states[0].stress.yy == doctest::Approx(-m_constrained * eps).epsilon(1e-9));
  // plane strain keeps sigma_zz = nu * (sxx + syy) for elasticity
  const double expect_zz = mat.nu * (states[0].stress.xx + states[0].stress.yy);
  CHECK(states[0].stress.zz == doctest::Approx(expect_zz).epsilon(1e-9));
}

TEST_CASE("element force: inverted element raises a fatal geometry error") {
  const auto mat = MaterialModel::pc_abs_like();
  const std::array<Vec2, 4> X{{{0, 0}, {0, 1e-3}, {1e-3, 1e-3}, {1e-3, 0}}};  // clockwise
  std::array<ElementState, 4> states{};
  const std::array<Vec2, 4> zero{};
  CHECK_THROWS_AS(
      fe::element_internal_force(X, zero, states, mat, 1e-7, fe::Integration::kFull),
      fe::SolverError);
}

TEST_CASE("stable_dt follows the dilatational wave speed") {
  const auto mat = MaterialModel::pc_abs_like();
  CHECK(mat.dilatational_wave_speed() == doctest::Approx(1936.6).epsilon(1e-3));
  const auto mesh1 = geom::rasterize({}, 0.5);  // edge exactly 0.5
  const auto mesh2 = geom::rasterize({}, 1.0);  // edge exactly 1.0
  const double dt1 = fe::stable_dt(mesh1, mat, 0.9);
  const double dt2 = fe::stable_dt(mesh2, mat, 0.9);
  CHECK(dt1 == doctest::Approx(0.9 * 0.5e-3 / mat.dilatational_wave_speed()).epsilon(1e-12));
  CHECK(dt2 == doctest::Approx(2.0 * dt1).epsilon(1e-12));
  CHECK_THROWS_AS(fe::stable_dt(mesh1, mat, 0.0), std::invalid_argument);
}

TEST_CASE("run_simulation: zero final strain yields a single zero row") {
  const auto mesh = geom::rasterize({}, 1.0);
  const auto rec = fe::run_simulation(mesh, MaterialModel::pc_abs_like(), 10.0, 0.0, 50);
  REQUIRE(rec.strain.size() == 1);
  CHECK(rec.strain[0] == 0.0);
  CHECK(rec.stress[0] == 0.0);
  CHECK(rec.E_pl[0] == 0.0);
}

TEST_CASE("run_simulation: confined quasi-static compression follows the constrained modulus") {
  const auto mat = MaterialModel::elastic_only();
  const auto mesh = geom::rasterize({}, 1.0);  // 11x11 elements
  fe::SolverOptions opt;
  opt.confine_lateral = true;
  const auto rec = fe::run_simulation(mesh, mat, 0.9, 0.01, 20, opt);
  REQUIRE(rec.strain.size() == 20);
  const double slope = rec.stress.back() / rec.strain.back();
  CHECK(slope == doctest::Approx(mat.constrained_modulus()).epsilon(0.005));
  // strains are the uniform levels
  CHECK(rec.strain[1] == doctest::Approx(0.01 / 19.0).epsilon(1e-12));
  // elastic: no plastic dissipation
  CHECK(rec.E_pl.back() == 0.0);
  // energy ledger is self-consistent at the final instant
  const double residual =
      std::abs(rec.W_ext.back() - (rec.E_k.back() + rec.E_el.back() + rec.E_pl.back()));
  CHECK(residual <= 0.01 * rec.W_ext.back() + 1e-9);
}

TEST_CASE("run_simulation: free sides soften the slope to E/(1-nu^2)") {
  const auto mat = MaterialModel::elastic_only();
  const auto mesh = geom::rasterize({}, 1.0);
  const auto rec = fe::run_simulation(mesh, mat, 0.9, 0.01, 20);
  const double slope = rec.stress.back() / rec.strain.back();
  CHECK(slope == doctest::Approx(mat.E / (1.0 - mat.nu * mat.nu)).epsilon(0.005));
}

TEST_CASE("run_simulation: rate hardening raises the plastic plateau pointwise") {
  const auto mat = MaterialModel::pc_abs_like();
  const auto mesh = geom::rasterize({}, 1.0);
  const auto lo = fe::run_simulation(mesh, mat, 9.1, 0.25, 50);
  const auto hi = fe::run_simulation(mesh, mat, 90.9, 0.25, 50);
  for (std::size_t i = 0; i < lo.strain.size(); ++i) {
    if (lo.strain[i] < 0.05) continue;  // past the elastic/transition region
    CHECK(hi.stress[i] >= lo.stress[i]);
  }
  CHECK(hi.E_pl.back() > 0.0);
}

TEST_CASE("run_simulation: energy balance holds for a porous design, both integrations") {
  const auto mat = MaterialModel::pc_abs_like();
  const auto build = geom::build_design({4, 2, 2, 0.3, 0.08});
  REQUIRE(build.valid());
  const auto mesh = geom::rasterize(build.tubules, 0.55);
  for (const auto scheme : {fe::Integration::kFull, fe::Integration::kReduced}) {
    fe::SolverOptions opt;
    opt.integration = scheme;
    const auto rec = fe::run_simulation(mesh, mat, 45.0, 0.25, 50, opt);
    for (std::size_t i = 0; i < rec.strain.size(); ++i) {
      const double sum = rec.E_k[i] + rec.E_el[i] + rec.E_pl[i] + rec.E_hg[i];
      CHECK(std::abs(rec.W_ext[i] - sum) <= 0.01 * rec.W_ext[i] + 1e-6);
    }
    if (scheme == fe::Integration::kReduced) CHECK(rec.E_hg.back() > 0.0);
    CHECK(rec.E_pl.back() > 0.0);
    // epbar monotonicity shows up as non-decreasing dissipation
    for (std::size_t i = 1; i < rec.E_pl.size(); ++i) CHECK(rec.E_pl[i] >= rec.E_pl[i - 1]);
  }
}

TEST_CASE("run_simulation: mirrored design gives the same reaction history") {
  const auto mat = MaterialModel::pc_abs_like();
  geom::DesignParams p{4, 2, 1, 0.3, 0.09};
  geom::DesignParams m = p;
  m.angle = std::numbers::pi - p.angle;  // mirror of a square's vertex set

  const auto bp = geom::build_design(p);
  const auto bm = geom::build_design(m);
  REQUIRE(bp.valid());
  REQUIRE(bm.valid());
  const auto mesh_p = geom::rasterize(bp.tubules, 1.1);
  const auto mesh_m = geom::rasterize(bm.tubules, 1.1);
  // the raster masks must be exact mirrors
  for (int j = 0; j < mesh_p.elems_y; ++j) {
    for (int i = 0; i < mesh_p.elems_x; ++i) {
      REQUIRE(mesh_p.is_active(i, j) == mesh_m.is_active(mesh_p.elems_x - 1 - i, j));
    }
  }
  const auto rp = fe::run_simulation(mesh_p, mat, 90.9, 0.25, 50);
  const auto rm = fe::run_simulation(mesh_m, mat, 90.9, 0.25, 50);
  for (std::size_t i = 1; i < rp.force.size(); ++i) {
    CHECK(rm.force[i] == doctest::Approx(rp.force[i]).epsilon(1e-9));
  }
}

TEST_CASE("single element under constant strain rate recovers the overstress law") {
  // Uniaxial-strain compression at constant rate: the steady plastic
  // rate is 2/3 of the axial rate, and with a flat yield curve
  // q/sigma0 = 1 + (rate_pl/D)^(1/n) exactly at steady state.
  struct Setting {
    double D, n_exp;
  };
  for (const auto [D, n_exp] : {Setting{100.0, 2.0}, Setting{10.0, 1.0}, Setting{2000.0, 3.0}}) {
    auto mat = flat_yield(60e6, D, n_exp);
    const double rate = 50.0;             // axial strain rate, 1/s
    const double dt = 2e-7;
    const double lam = mat.lame_lambda();
    const double g2 = 2.0 * mat.shear_modulus();
    ElementState st;
    for (int step = 0; step < 150000; ++step) {
      Stress4 trial = st.stress;
      const double de = -rate * dt;
      trial.xx += (lam + g2) * de;
      trial.yy += lam * de;
      trial.zz += lam * de;
      st = fe::radial_return(trial, dt, st, mat).state;
    }
    const double q = fe::von_mises(st.stress);
    const double expected = 60e6 * (1.0 + std::pow((2.0 / 3.0) * rate / D, 1.0 / n_exp));
    CHECK(q == doctest::Approx(expected).epsilon(0.01));
  }
}
