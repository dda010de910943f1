#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "tdr/evaluate.hpp"
#include "tdr/models.hpp"
#include "tdr/quadrature.hpp"
#include "tdr/synth.hpp"

using Catch::Approx;

namespace {

struct Prepared {
  tdr::SynthOutput syn;
  tdr::FeatureBundle fb;
  Eigen::MatrixXd z;
  Eigen::VectorXd y;
};

Prepared prepare(const tdr::SynthConfig& cfg) {
  Prepared p;
  p.syn = tdr::generate(cfg);
  p.fb = tdr::build_features(p.syn.panel, tdr::default_t_grid(10), tdr::quantile_levels(99),
                             5.0, 4);
  const int n = p.fb.n();
  p.z.resize(n, 2);
  p.y.resize(n);
  for (int i = 0; i < n; ++i) {
    p.z(i, 0) = p.syn.records[static_cast<std::size_t>(i)].covariates[0];
    p.z(i, 1) = p.syn.records[static_cast<std::size_t>(i)].covariates[1];
    p.y(i) = p.syn.records[static_cast<std::size_t>(i)].outcome;
  }
  return p;
}

// constant-per-subject activity: every model's functional feature is an
// exact affine function of the subject mean
tdr::SynthConfig flat_config(tdr::Family outcome, std::uint64_t seed) {
  tdr::SynthConfig cfg;
  cfg.n_subjects = 200;
  cfg.n_days = 2;
  cfg.pattern = tdr::DiurnalTemplate::flat;
  cfg.zero_inflation = 0.0;
  cfg.dispersion = 0.0;
  cfg.subject_sd = 0.5;
  cfg.effect = tdr::PlantedEffect::scalar;
  cfg.effect_size = 2.0;
  cfg.outcome = outcome;
  cfg.noise = 0.5;
  cfg.seed = seed;
  return cfg;
}

double max_eta_gap(const tdr::ModelFit& a, const tdr::ModelFit& b, const Prepared& p,
                   const tdr::ModelDesigns& da, const tdr::ModelDesigns& db) {
  double gap = 0.0;
  for (int i = 0; i < p.fb.n(); ++i)
    gap = std::max(gap, std::abs(tdr::model_eta(a, p.fb, da, p.z, i) -
                                 tdr::model_eta(b, p.fb, db, p.z, i)));
  return gap;
}

}  // namespace

TEST_CASE("nesting chain on constant-activity data") {
  Prepared p = prepare(flat_config(tdr::Family::logit, 11));
  tdr::FitConfig base;
  base.family = tdr::Family::logit;
  base.seed = 7;
  tdr::ModelDesigns des_default = tdr::build_designs(p.fb, base);

  tdr::ModelFit m1 = tdr::fit_model(tdr::ModelKind::m1, p.fb, des_default, p.z, p.y, base);

  SECTION("model 4 with constant bases reproduces model 1") {
    tdr::FitConfig c = base;
    c.k0 = 1;
    c.l0 = 1;
    c.m4_t_kind = tdr::BasisKind::legendre;
    c.m4_p_kind = tdr::BasisKind::legendre;
    tdr::ModelDesigns des_const = tdr::build_designs(p.fb, c);
    tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des_const, p.z, p.y, c);
    REQUIRE_FALSE(m4.degenerate);
    CHECK(max_eta_gap(m1, m4, p, des_default, des_const) < 1e-4);
  }

  SECTION("model 4 with default cubic bases on constant surfaces reproduces model 1") {
    tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des_default, p.z, p.y, base);
    REQUIRE_FALSE(m4.degenerate);
    CHECK(max_eta_gap(m1, m4, p, des_default, des_default) < 1e-4);
  }

  SECTION("flat diurnal curves make model 2 equal model 1") {
    tdr::ModelFit m2 = tdr::fit_model(tdr::ModelKind::m2, p.fb, des_default, p.z, p.y, base);
    CHECK(max_eta_gap(m1, m2, p, des_default, des_default) < 1e-6);
  }

  SECTION("flat quantile functions make model 3 equal model 1") {
    tdr::ModelFit m3 = tdr::fit_model(tdr::ModelKind::m3, p.fb, des_default, p.z, p.y, base);
    CHECK(max_eta_gap(m1, m3, p, des_default, des_default) < 1e-6);
  }

  SECTION("SOTDR-L on constant data reduces to model 1 (only order 1 varies)") {
    tdr::ModelFit ml = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des_default, p.z, p.y, base);
    REQUIRE_FALSE(ml.degenerate);
    REQUIRE(ml.selected_groups == std::vector<int>{0});
    CHECK(max_eta_gap(m1, ml, p, des_default, des_default) < 1e-4);
  }

  SECTION("model 4 with L0 = 1 Legendre in p equals model 2 and SOTDR-L order 1") {
    tdr::FitConfig c = base;
    c.l0 = 1;
    c.m4_p_kind = tdr::BasisKind::legendre;
    tdr::ModelDesigns des_l1 = tdr::build_designs(p.fb, c);
    tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des_l1, p.z, p.y, c);
    tdr::ModelFit m2 = tdr::fit_model(tdr::ModelKind::m2, p.fb, des_default, p.z, p.y, base);
    tdr::ModelFit ml = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des_default, p.z, p.y, base);
    REQUIRE_FALSE(m4.degenerate);
    CHECK(max_eta_gap(m4, m2, p, des_l1, des_default) < 1e-4);
    CHECK(max_eta_gap(m4, ml, p, des_l1, des_default) < 1e-4);
  }
}

TEST_CASE("model 4 surface reconstruction identities") {
  tdr::SynthConfig scfg;
  scfg.n_subjects = 80;
  scfg.n_days = 3;
  scfg.effect = tdr::PlantedEffect::td_surface;
  scfg.outcome = tdr::Family::identity;
  scfg.effect_size = 2.0;
  scfg.noise = 0.5;
  scfg.seed = 21;
  Prepared p = prepare(scfg);
  tdr::FitConfig cfg;
  cfg.family = tdr::Family::identity;
  cfg.k0 = 8;
  cfg.l0 = 6;
  cfg.seed = 5;
  tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
  tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des, p.z, p.y, cfg);
  REQUIRE_FALSE(m4.degenerate);

  SECTION("assembled surface equals the basis expansion, unselected exactly zero") {
    Eigen::MatrixXd bt = tdr::eval_basis(des.basis_t, p.fb.t_grid);
    Eigen::MatrixXd bp = tdr::eval_basis(des.basis_p, p.fb.p_grid);
    for (int a = 0; a < 5; ++a) {
      for (int b = 0; b < 5; ++b) {
        int ti = a * 28, pi = b * 19;
        double manual = 0.0;
        for (int k = 0; k < cfg.k0; ++k)
          for (int l = 0; l < cfg.l0; ++l)
            manual += m4.theta(k * cfg.l0 + l) * bt(ti, k) * bp(pi, l);
        CHECK(m4.beta_surface(ti, pi) == Approx(manual).margin(1e-12));
      }
    }
    for (int j = 0; j < static_cast<int>(m4.theta.size()); ++j) {
      bool sel = std::find(m4.selected.begin(), m4.selected.end(), j) != m4.selected.end();
      if (!sel) CHECK(m4.theta(j) == 0.0);
    }
  }

  SECTION("re-projection through tensor features reproduces the linear predictor") {
    // W row is exactly linear in the surface, so W.theta equals the double
    // integral of Q_i against the assembled surface
    tdr::TensorDesigner designer(p.fb.t_grid, p.fb.p_grid, des.basis_t, des.basis_p);
    for (int i = 0; i < p.fb.n(); i += 9) {
      double via_w = des.w_tensor.row(i).dot(m4.theta);
      double via_recomputed = designer.row(p.fb.surfaces[static_cast<std::size_t>(i)]).dot(m4.theta);
      CHECK(via_w == Approx(via_recomputed).margin(1e-6));
      // grid-path quadrature agrees up to the surface-sampling error
      double via_grid = tdr::integrate_surface_product(p.fb.t_grid, p.fb.p_grid,
                                                       p.fb.surfaces[static_cast<std::size_t>(i)],
                                                       m4.beta_surface);
      CHECK(via_grid == Approx(via_w).margin(2e-3 * (1.0 + std::abs(via_w))));
    }
  }

  SECTION("fit is deterministic under identical inputs and seed") {
    tdr::ModelFit again = tdr::fit_model(tdr::ModelKind::m4, p.fb, des, p.z, p.y, cfg);
    CHECK(again.theta == m4.theta);
    CHECK(again.selected == m4.selected);
    CHECK(again.alpha == m4.alpha);
    tdr::ModelFit ml1 = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des, p.z, p.y, cfg);
    tdr::ModelFit ml2 = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des, p.z, p.y, cfg);
    CHECK(ml1.selected_groups == ml2.selected_groups);
    CHECK(ml1.beta_star == ml2.beta_star);
  }
}

TEST_CASE("model 4 recovers a planted smooth surface better than the null") {
  tdr::SynthConfig scfg;
  scfg.n_subjects = 300;
  scfg.n_days = 3;
  scfg.effect = tdr::PlantedEffect::td_surface;
  scfg.outcome = tdr::Family::identity;
  scfg.effect_size = 2.5;
  scfg.noise = 0.6;
  scfg.seed = 33;
  Prepared p = prepare(scfg);
  tdr::FitConfig cfg;
  cfg.family = tdr::Family::identity;
  cfg.seed = 12;
  tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
  tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des, p.z, p.y, cfg);
  REQUIRE_FALSE(m4.degenerate);
  Eigen::MatrixXd err = m4.beta_surface - p.syn.truth.beta_surface;
  double ise = tdr::integrate_surface_product(p.fb.t_grid, p.fb.p_grid, err, err);
  double ise_null = tdr::integrate_surface_product(p.fb.t_grid, p.fb.p_grid,
                                                   p.syn.truth.beta_surface,
                                                   p.syn.truth.beta_surface);
  CHECK(ise < ise_null);
}

TEST_CASE("two-step selection is calibrated on null tensor features") {
  int pass = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    tdr::SynthConfig scfg;
    scfg.n_subjects = 150;
    scfg.n_days = 2;
    scfg.effect = tdr::PlantedEffect::none;
    scfg.outcome = tdr::Family::identity;
    scfg.noise = 1.0;
    scfg.seed = 1000 + static_cast<std::uint64_t>(rep);
    Prepared p = prepare(scfg);
    // outcome driven by covariates only
    tdr::Rng rng(scfg.seed, 0xF00);
    for (int i = 0; i < p.fb.n(); ++i)
      p.y(i) = 0.05 * (p.z(i, 0) - 73.0) + 0.8 * p.z(i, 1) + rng.normal();
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    cfg.k0 = 8;
    cfg.l0 = 8;
    cfg.seed = scfg.seed;
    tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
    tdr::ModelFit m4 = tdr::fit_model(tdr::ModelKind::m4, p.fb, des, p.z, p.y, cfg);
    if (m4.selected.empty() || m4.joint_functional_p > 0.05) ++pass;
  }
  INFO("null-calibrated replicates: " << pass << "/" << reps);
  CHECK(pass >= 90);
}

TEST_CASE("temporal SOFR") {
  SECTION("constant coefficient truth is covered by pointwise bands") {
    tdr::SynthConfig scfg;
    scfg.n_subjects = 250;
    scfg.n_days = 3;
    scfg.pattern = tdr::DiurnalTemplate::unimodal;
    scfg.effect = tdr::PlantedEffect::scalar;  // constant beta(t) = scale/1440
    scfg.outcome = tdr::Family::identity;
    scfg.effect_size = 1.5;
    scfg.noise = 1.0;
    scfg.seed = 3;
    Prepared p = prepare(scfg);
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
    tdr::ModelFit m2 = tdr::fit_model(tdr::ModelKind::m2, p.fb, des, p.z, p.y, cfg);
    double truth = p.syn.truth.beta_scalar / 1440.0;
    int covered = 0;
    for (Eigen::Index k = 0; k < m2.beta_t.size(); ++k)
      if (std::abs(m2.beta_t(k) - truth) <= 2.0 * m2.beta_t_se(k)) ++covered;
    CHECK(static_cast<double>(covered) >= 0.95 * static_cast<double>(m2.beta_t.size()));
  }

  SECTION("zero-signal data: GCV smooths the estimate toward the penalty null space") {
    tdr::SynthConfig scfg;
    scfg.n_subjects = 150;
    scfg.n_days = 2;
    scfg.pattern = tdr::DiurnalTemplate::bimodal;
    scfg.effect = tdr::PlantedEffect::none;
    scfg.outcome = tdr::Family::identity;
    scfg.noise = 1.0;
    scfg.seed = 4;
    Prepared p = prepare(scfg);
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
    const int nz = static_cast<int>(p.z.cols());
    Eigen::MatrixXd x(p.fb.n(), 1 + nz + des.f_temporal.cols());
    x.col(0).setOnes();
    x.middleCols(1, nz) = p.z;
    x.rightCols(des.f_temporal.cols()) = des.f_temporal;
    auto rough = tdr::detail::fit_pspline_glm(x, p.y, tdr::Family::identity, 1 + nz,
                                              static_cast<int>(des.f_temporal.cols()), 1);
    auto gcv = tdr::detail::fit_pspline_glm(x, p.y, tdr::Family::identity, 1 + nz,
                                            static_cast<int>(des.f_temporal.cols()),
                                            cfg.gcv_points);
    CHECK(gcv.lambda > rough.lambda);
    Eigen::MatrixXd bt = tdr::eval_basis(tdr::BasisSpec::bspline(
                                             static_cast<int>(des.f_temporal.cols()), 0.0, 1440.0),
                                         p.fb.t_grid);
    double max_rough = (bt * rough.coef.tail(des.f_temporal.cols())).cwiseAbs().maxCoeff();
    double max_gcv = (bt * gcv.coef.tail(des.f_temporal.cols())).cwiseAbs().maxCoeff();
    CHECK(max_gcv <= max_rough + 1e-12);
  }
}

TEST_CASE("quantile SOFR") {
  SECTION("Legendre route reproduces a GLM on direct sample L-moments") {
    // unit-scale activity so quadrature tail error is negligible
    tdr::Rng vals(60);
    auto panel = oracle::make_panel(60, 2, [&](int, int, int) { return vals.uniform(); });
    tdr::FeatureBundle fb = tdr::build_features(panel, tdr::default_t_grid(10),
                                                tdr::quantile_levels(999), 5.0, 4);
    const int n = fb.n();
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, 1);
    Eigen::VectorXd y(n);
    tdr::Rng rng(61);
    for (int i = 0; i < n; ++i) {
      z(i, 0) = rng.normal();
      y(i) = 4.0 * fb.means(i) + 0.3 * z(i, 0) + 0.1 * rng.normal();
    }
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    cfg.l0 = 4;
    cfg.m3_legendre = true;
    tdr::ModelDesigns des = tdr::build_designs(fb, cfg);
    tdr::ModelFit m3 = tdr::fit_model(tdr::ModelKind::m3, fb, des, z, y, cfg);

    // direct route: GLM on sample L-moments of each subject's pooled data
    Eigen::MatrixXd x(n, 2 + 4);
    x.col(0).setOnes();
    x.col(1) = z.col(0);
    for (int i = 0; i < n; ++i) {
      std::vector<double> pooled;
      for (const auto& day : panel.subjects[static_cast<std::size_t>(i)].days)
        for (double v : day.values) pooled.push_back(v);
      std::sort(pooled.begin(), pooled.end());
      auto lm = tdr::l_moments_sorted(pooled, 4);
      for (int r = 0; r < 4; ++r) x(i, 2 + r) = lm[static_cast<std::size_t>(r)];
    }
    tdr::GlmFit direct = tdr::fit_glm(x, y, tdr::Family::identity);
    for (int i = 0; i < n; ++i) {
      double eta_leg = tdr::model_eta(m3, fb, des, z, i);
      double eta_direct = x.row(i).head(2).dot(direct.coef.head(2)) +
                          x.row(i).tail(4).dot(direct.coef.tail(4));
      CHECK(eta_leg == Approx(eta_direct).margin(1e-3));
    }
  }

  SECTION("zero predictor region carries no information") {
    tdr::Rng vals(71);
    auto panel = oracle::make_panel(40, 2, [&](int i, int, int) {
      return vals.bernoulli(0.7) ? 0.0 : vals.lognormal(0.0, 0.5) * (1.0 + 0.1 * i);
    });
    tdr::FeatureBundle fb = tdr::build_features(panel, tdr::default_t_grid(10),
                                                tdr::quantile_levels(99), 5.0, 4);
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    tdr::ModelDesigns des = tdr::build_designs(fb, cfg);
    // every quantile function is 0 below p ~ 0.6; spline columns supported
    // there are exact-zero features
    std::vector<int> zero_cols;
    for (Eigen::Index j = 0; j < des.f_quant.cols(); ++j)
      if (des.f_quant.col(j).cwiseAbs().maxCoeff() == 0.0) zero_cols.push_back(static_cast<int>(j));
    REQUIRE_FALSE(zero_cols.empty());
    // perturbing beta on that region never changes a fitted predictor
    Eigen::VectorXd theta = Eigen::VectorXd::Random(des.f_quant.cols());
    Eigen::VectorXd perturbed = theta;
    for (int j : zero_cols) perturbed(j) += 7.5;
    for (int i = 0; i < fb.n(); ++i)
      CHECK(des.f_quant.row(i).dot(theta) == des.f_quant.row(i).dot(perturbed));
  }
}

TEST_CASE("SOTDR-L selects the planted order-3 group") {
  int hit = 0, exact = 0;
  const int reps = 10;
  for (int rep = 0; rep < reps; ++rep) {
    tdr::SynthConfig scfg;
    scfg.n_subjects = 400;
    scfg.n_days = 4;
    scfg.effect = tdr::PlantedEffect::lmoment_order_r;
    scfg.lmoment_order = 3;
    scfg.outcome = tdr::Family::identity;
    scfg.effect_size = 1.5;
    scfg.noise = 0.5;
    scfg.seed = 500 + static_cast<std::uint64_t>(rep);
    Prepared p = prepare(scfg);
    tdr::FitConfig cfg;
    cfg.family = tdr::Family::identity;
    cfg.seed = scfg.seed;
    tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
    tdr::ModelFit fit = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des, p.z, p.y, cfg);
    bool has3 = std::find(fit.selected_groups.begin(), fit.selected_groups.end(), 2) !=
                fit.selected_groups.end();
    if (has3) ++hit;
    if (has3 && fit.selected_groups.size() == 1) ++exact;
  }
  INFO("order-3 selected " << hit << "/" << reps << ", exactly " << exact << "/" << reps);
  CHECK(hit >= 9);
  CHECK(exact >= 9);
}

TEST_CASE("SOTDR-L with no dispersion beyond order 1 never selects higher orders") {
  Prepared p = prepare(flat_config(tdr::Family::identity, 99));
  tdr::FitConfig cfg;
  cfg.family = tdr::Family::identity;
  tdr::ModelDesigns des = tdr::build_designs(p.fb, cfg);
  tdr::ModelFit fit = tdr::fit_model(tdr::ModelKind::sotdr_l, p.fb, des, p.z, p.y, cfg);
  for (int g : fit.selected_groups) CHECK(g == 0);
  for (std::size_t r = 1; r < fit.order_fpca.size(); ++r) CHECK(fit.order_fpca[r].retained == 0);
}
