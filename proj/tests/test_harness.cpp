// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "tendae/harness.hpp"

using namespace tendae;

namespace {

ScenarioConfig small_cfg(RisMode mode) {
  ScenarioConfig cfg;
  cfg.n_y = cfg.n_z = 2;
  cfg.l_st_y = 2;
  cfg.l_st_z = 1;
  cfg.l_sr_y = cfg.l_sr_z = 2;
  cfg.n_symbols = 4;
  cfg.n_subcarriers = 4;
  cfg.n_slots = 20;
  cfg.n_targets = 2;
  cfg.min_angle_sep_deg = 20.0;
  cfg.ris_mode = mode;
  return cfg;
}

ExperimentConfig noiseless_exp(RisMode mode) {
  ExperimentConfig exp;
  exp.scenario = small_cfg(mode);
  exp.estimators = {"ls", "ksa", "tendae_als"};
  exp.als_max_iter = 2000;
  exp.als_tol = 1e-14;
  exp.with_crlb = false;
  return exp;
}

double rel(double est, double truth) {
  return std::abs(est - truth) / std::abs(truth);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("dimension checks name the binding inequality", "[harness]") {
  SECTION("reference configuration passes") {
    const ScenarioConfig cfg;  // reference dims: N=16, T=512, MQ=64, K=2
    const IdentifiabilityReport rep = check_identifiability(cfg);
    REQUIRE(rep.ok());
    REQUIRE(rep.violations.empty());
    REQUIRE_NOTHROW(require_identifiable(cfg));
    REQUIRE(rep.kruskal.size() == 2);
    for (const auto& d : rep.kruskal) {
      REQUIRE(d.threshold == 2 * cfg.n_targets + 2);
      REQUIRE(d.k_rank_sum == 3 * cfg.n_targets);
      REQUIRE(d.unique_sufficient);
    }
  }

  SECTION("short schedule, fully connected") {
    ScenarioConfig cfg;
    cfg.n_slots = 100;  // < N^2 = 256
    const IdentifiabilityReport rep = check_identifiability(cfg);
    REQUIRE_FALSE(rep.ok());
    REQUIRE(rep.violations.size() == 1);
    REQUIRE(rep.violations[0].find("T >= N^2") != std::string::npos);
    REQUIRE_THROWS_AS(require_identifiable(cfg), identifiability_error);
    try {
      require_identifiable(cfg);
    } catch (const identifiability_error& e) {
      REQUIRE(std::string(e.what()).find("T >= N^2") != std::string::npos);
    }
  }

  SECTION("short schedule, diagonal") {
    ScenarioConfig cfg;
    cfg.ris_mode = RisMode::diagonal;
    cfg.n_slots = 10;  // < N = 16, but >= would pass: no N^2 demand
    const IdentifiabilityReport rep = check_identifiability(cfg);
    REQUIRE_FALSE(rep.ok());
    REQUIRE(rep.violations[0].find("T >= N") != std::string::npos);
    cfg.n_slots = 16;
    REQUIRE(check_identifiability(cfg).ok());
  }

  SECTION("pilot budget below the transmit array") {
    ScenarioConfig cfg;
    cfg.n_symbols = 1;
    cfg.n_subcarriers = 2;  // MQ = 2 < L_ST = 4
    const IdentifiabilityReport rep = check_identifiability(cfg);
    REQUIRE_FALSE(rep.ok());
    bool named = false;
    for (const auto& v : rep.violations)
      named = named || v.find("MQ >= max(L_ST, K)") != std::string::npos;
    REQUIRE(named);
  }

  SECTION("rank above the component budget") {
    ScenarioConfig cfg;
    cfg.n_y = cfg.n_z = 1;
    cfg.l_sr_y = cfg.l_sr_z = 1;
    cfg.n_targets = 2;
    cfg.n_slots = 4;
    const IdentifiabilityReport rep = check_identifiability(cfg);
    bool named = false;
    for (const auto& v : rep.violations)
      named = named || v.find("L_SR*N >= K") != std::string::npos;
    REQUIRE(named);
  }

  SECTION("generic factor k-rank oracle") {
    Rng rng(7u);
    int sum = 0;
    for (int i = 0; i < 3; ++i) sum += k_rank(rng.cnormal_matrix(4, 2));
    REQUIRE(sum == 6);
    REQUIRE(sum >= 2 * 2 + 2);
  }
}

TEST_CASE("channel error metric", "[harness]") {
  Rng rng(3u);
  const CMat w = rng.cnormal_matrix(6, 5);
  REQUIRE(channel_nmse(w, w) == 0.0);
  REQUIRE(channel_nmse(w, CMat(2.0 * w)) == Catch::Approx(1.0));
  REQUIRE(channel_nmse(w, CMat::Zero(6, 5)) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(channel_nmse(w, CMat::Zero(5, 6)), std::invalid_argument);
  REQUIRE_THROWS_AS(channel_nmse(CMat::Zero(6, 5), w), std::invalid_argument);
}

TEST_CASE("grid-tone polish is exact on clean masked tones", "[harness]") {
  const int s_n = 2, m_n = 5, q_n = 4, k = 2;
  RVec om_m(k), om_q(k);
  om_m << 0.9, -1.7;
  om_q << -0.4, 2.2;
  CMat coupling(s_n, k);
  coupling << cdouble(1.0, 0.3), cdouble(-0.5, 1.1), cdouble(0.2, -0.9),
      cdouble(1.4, 0.1);
  Tensor3 f(s_n, m_n, q_n);
  for (int s = 0; s < s_n; ++s)
    for (int m = 0; m < m_n; ++m)
      for (int q = 0; q < q_n; ++q) {
        cdouble v(0.0, 0.0);
        for (int c = 0; c < k; ++c)
          v += coupling(s, c) * std::polar(1.0, om_m(c) * m + om_q(c) * q);
        f(s, m, q) = v;
      }
  RMat w23 = RMat::Ones(m_n, q_n);
  w23.row(3).setZero();  // faded symbol row carries no information

  const RVec om_m0 = om_m + RVec::Constant(k, 0.08);
  const RVec om_q0 = om_q - RVec::Constant(k, 0.06);
  const detail::GridTones out =
      detail::refine_grid_tones(f, w23, om_m0, om_q0);
  for (int c = 0; c < k; ++c) {
    REQUIRE(out.omega_m(c) == Catch::Approx(om_m(c)).margin(1e-9));
    REQUIRE(out.omega_q(c) == Catch::Approx(om_q(c)).margin(1e-9));
  }
  REQUIRE((out.coupling - coupling).cwiseAbs().maxCoeff() < 1e-8);

  REQUIRE_THROWS_AS(detail::refine_grid_tones(f, w23, om_m0, RVec::Zero(3)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      detail::refine_grid_tones(f, RMat::Ones(q_n, m_n), om_m0, om_q0),
      std::invalid_argument);
}

TEST_CASE("array-pair polish is exact on clean slabs", "[harness]") {
  const int s_n = 3, b_ny = 2, b_nz = 2, c_ny = 3, c_nz = 2, k = 2;
  const int l_n = b_ny * b_nz, n_n = c_ny * c_nz;
  RVec mu_b(k), psi_b(k), mu_c(k), psi_c(k);
  mu_b << 1.2, -0.8;
  psi_b << 0.5, 2.4;
  mu_c << -1.9, 0.3;
  psi_c << 1.4, -0.6;
  Rng rng(41u);
  const CMat coupling = rng.cnormal_matrix(s_n, k);
  CMat b_true(l_n, k), c_true(n_n, k);
  for (int c = 0; c < k; ++c) {
    b_true.col(c) = detail::ura_tone(b_ny, b_nz, mu_b(c), psi_b(c));
    c_true.col(c) = detail::ura_tone(c_ny, c_nz, mu_c(c), psi_c(c));
  }
  Tensor3 g(s_n, l_n, n_n);
  for (int s = 0; s < s_n; ++s)
    for (int l = 0; l < l_n; ++l)
      for (int n = 0; n < n_n; ++n) {
        cdouble v(0.0, 0.0);
        for (int c = 0; c < k; ++c)
          v += coupling(s, c) * b_true(l, c) * c_true(n, c);
        g(s, l, n) = v;
      }

  // Factor inits perturbed off the manifold; the polish must land back.
  const CMat b0 = b_true + 0.05 * rng.cnormal_matrix(l_n, k);
  const CMat c0 = c_true + 0.05 * rng.cnormal_matrix(n_n, k);
  const detail::UraTones out =
      detail::refine_ura_pairs(g, b_ny, b_nz, c_ny, c_nz, b0, c0);
  for (int c = 0; c < k; ++c) {
    REQUIRE(out.mu_b(c) == Catch::Approx(mu_b(c)).margin(1e-9));
    REQUIRE(out.psi_b(c) == Catch::Approx(psi_b(c)).margin(1e-9));
    REQUIRE(out.mu_c(c) == Catch::Approx(mu_c(c)).margin(1e-9));
    REQUIRE(out.psi_c(c) == Catch::Approx(psi_c(c)).margin(1e-9));
  }
  REQUIRE((out.coupling - coupling).cwiseAbs().maxCoeff() < 1e-8);

  REQUIRE_THROWS_AS(
      detail::refine_ura_pairs(g, b_ny, 3, c_ny, c_nz, b0, c0),
      std::invalid_argument);
  REQUIRE_THROWS_AS(detail::refine_ura_pairs(g, b_ny, b_nz, c_ny, c_nz, b0,
                                             CMat::Ones(n_n, k + 1)),
                    std::invalid_argument);
}

TEST_CASE("cross-stage re-extraction recovers all six tone sets", "[harness]") {
  ScenarioConfig cfg;
  cfg.n_y = cfg.n_z = 2;
  cfg.l_sr_y = cfg.l_sr_z = 2;
  cfg.n_symbols = 4;
  cfg.n_subcarriers = 3;
  const int k = 2, l_sr = cfg.l_sr(), n = cfg.n(), mq = cfg.mq();

  detail::CrossTones truth;
  truth.omega_m = RVec(k);
  truth.omega_q = RVec(k);
  truth.mu_b = RVec(k);
  truth.psi_b = RVec(k);
  truth.mu_c = RVec(k);
  truth.psi_c = RVec(k);
  truth.omega_m << 0.9, -1.7;
  truth.omega_q << -0.4, 2.2;
  truth.mu_b << 1.2, -0.8;
  truth.psi_b << 0.5, 2.4;
  truth.mu_c << -1.9, 0.3;
  truth.psi_c << 1.4, -0.6;

  Rng rng(43u);
  const CVec xa = rng.cnormal_matrix(mq, 1);
  const CVec b_arr = detail::ura_tone(cfg.n_y, cfg.n_z, 0.7, -1.1);
  CVec gains(k);
  gains << cdouble(1.3, -0.4), cdouble(-0.8, 0.9);
  CMat r = CMat::Zero(static_cast<Eigen::Index>(l_sr) * n,
                      static_cast<Eigen::Index>(mq) * n);
  for (int c = 0; c < k; ++c) {
    const CVec g_c =
        kron(detail::ura_tone(cfg.n_y, cfg.n_z, truth.mu_c(c), truth.psi_c(c)),
             detail::ura_tone(cfg.l_sr_y, cfg.l_sr_z, truth.mu_b(c),
                              truth.psi_b(c)));
    const CVec j_c = kron(
        b_arr, CVec(xa.cwiseProduct(detail::grid_tone(
                   cfg.n_symbols, cfg.n_subcarriers, truth.omega_m(c),
                   truth.omega_q(c)))));
    r += gains(c) * g_c * j_c.transpose();
  }

  detail::CrossTones init = truth;
  init.omega_m.array() += 0.05;
  init.omega_q.array() -= 0.04;
  init.mu_b.array() += 0.06;
  init.psi_b.array() -= 0.05;
  init.mu_c.array() += 0.04;
  init.psi_c.array() -= 0.06;
  const detail::CrossTones out =
      detail::refine_cross_stage(r, xa, cfg, b_arr, init);
  for (int c = 0; c < k; ++c) {
    REQUIRE(out.omega_m(c) == Catch::Approx(truth.omega_m(c)).margin(1e-9));
    REQUIRE(out.omega_q(c) == Catch::Approx(truth.omega_q(c)).margin(1e-9));
    REQUIRE(out.mu_b(c) == Catch::Approx(truth.mu_b(c)).margin(1e-9));
    REQUIRE(out.psi_b(c) == Catch::Approx(truth.psi_b(c)).margin(1e-9));
    REQUIRE(out.mu_c(c) == Catch::Approx(truth.mu_c(c)).margin(1e-9));
    REQUIRE(out.psi_c(c) == Catch::Approx(truth.psi_c(c)).margin(1e-9));
  }

  REQUIRE_THROWS_AS(
      detail::refine_cross_stage(r.topRows(4), xa, cfg, b_arr, init),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      detail::refine_cross_stage(r, CVec::Ones(mq + 1), cfg, b_arr, init),
      std::invalid_argument);
}

TEST_CASE("folded planar inversion", "[harness]") {
  // Interior pairs agree with the strict principal-branch inversion.
  const double phi0 = deg2rad(42.0), theta0 = deg2rad(33.0);
  const double mu0 = kPi * std::sin(phi0) * std::sin(theta0);
  const double psi0 = kPi * std::cos(phi0);
  const AngleEstimate strict = ura_angles(mu0, psi0);
  const AngleEstimate folded = detail::invert_ura_folded(mu0, psi0);
  REQUIRE(folded.phi == Catch::Approx(strict.phi).margin(1e-12));
  REQUIRE(folded.theta == Catch::Approx(strict.theta).margin(1e-12));

  // A near-endfire elevation reported one full turn down is folded back.
  const double psi_hi = 3.0;  // phi = acos(3/pi), close to broadside normal
  const AngleEstimate wrapped =
      detail::invert_ura_folded(0.1, psi_hi - 2.0 * kPi);
  REQUIRE(wrapped.psi == Catch::Approx(psi_hi).margin(1e-12));
  REQUIRE(wrapped.phi == Catch::Approx(std::acos(psi_hi / kPi)).margin(1e-12));

  // Out-of-range frequencies are projected, never thrown.
  const AngleEstimate clamped = detail::invert_ura_folded(0.2, kPi + 0.05);
  REQUIRE(clamped.psi == Catch::Approx(kPi));
  REQUIRE(clamped.phi == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(std::isfinite(clamped.theta));
  const AngleEstimate saturated =
      detail::invert_ura_folded(3.0, kPi * std::cos(deg2rad(25.0)));
  REQUIRE(saturated.theta == Catch::Approx(kPi / 2.0));
}

TEST_CASE("noiseless trial recovers every parameter, fully connected",
          "[harness]") {
  const ExperimentConfig exp = noiseless_exp(RisMode::bd);
  const TrialResult tr = run_trial(exp, kInf, 101u);
  REQUIRE(tr.sigma2 == 0.0);

  const EstimatorOutcome& ls = tr.estimates.at("ls");
  REQUIRE(ls.ok);
  REQUIRE_FALSE(ls.has_report);  // channel-only baseline
  REQUIRE(ls.nmse <= 1e-20);

  const EstimatorOutcome& ksa = tr.estimates.at("ksa");
  REQUIRE(ksa.ok);
  REQUIRE_FALSE(ksa.has_report);
  REQUIRE(ksa.nmse <= 1e-20);

  const EstimatorOutcome& td = tr.estimates.at("tendae_als");
  REQUIRE(td.ok);
  REQUIRE(td.has_report);
  REQUIRE(td.nmse <= 1e-12);
  const EstimateReport& r = td.report;
  REQUIRE(r.has_ris_arrival);
  REQUIRE(r.has_ris_departure);
  const double ts = exp.scenario.symbol_time_s();
  for (int i = 0; i < 2; ++i) {
    const int j = r.permutation[static_cast<std::size_t>(i)];
    INFO("estimate " << i << " -> truth " << j);
    REQUIRE(rel(r.tau_s(i) / ts, tr.truth.tau_s(j) / ts) < 1e-6);
    REQUIRE(rel(r.nu_hz(i) * ts, tr.truth.nu_hz(j) * ts) < 1e-6);
    REQUIRE(rel(r.phi_sr(i), tr.truth.phi_sr(j)) < 1e-6);
    REQUIRE(rel(r.theta_sr(i), tr.truth.theta_sr(j)) < 1e-6);
    REQUIRE(rel(r.phi_ris_d(i), tr.truth.phi_ris_d(j)) < 1e-6);
    REQUIRE(rel(r.theta_ris_d(i), tr.truth.theta_ris_d(j)) < 1e-6);
    REQUIRE(std::abs(r.alpha(i) - tr.truth.alpha(j)) <
            1e-6 * std::abs(tr.truth.alpha(j)));
  }
  REQUIRE(rel(r.phi_ris_a, tr.truth.phi_ris_a) < 1e-6);
  REQUIRE(rel(r.theta_ris_a, tr.truth.theta_ris_a) < 1e-6);

  // Every iterative fit this trial kept its residual history nonincreasing
  // and finished below the noiseless floor.
  REQUIRE_FALSE(tr.residual_histories.empty());
  for (const auto& h : tr.residual_histories) {
    REQUIRE_FALSE(h.empty());
    for (std::size_t i = 1; i < h.size(); ++i)
      REQUIRE(h[i] <= h[i - 1] + 1e-12);
    REQUIRE(std::sqrt(h.back()) < 1e-6);
  }
}

TEST_CASE("noiseless trial recovers every parameter, diagonal", "[harness]") {
  const ExperimentConfig exp = noiseless_exp(RisMode::diagonal);
  const TrialResult tr = run_trial(exp, kInf, 202u);

  const EstimatorOutcome& td = tr.estimates.at("tendae_als");
  REQUIRE(td.ok);
  REQUIRE(td.has_report);
  REQUIRE(td.nmse <= 1e-12);
  const EstimateReport& r = td.report;
  REQUIRE_FALSE(r.has_ris_arrival);
  REQUIRE_FALSE(r.has_ris_departure);
  const double ts = exp.scenario.symbol_time_s();
  for (int i = 0; i < 2; ++i) {
    const int j = r.permutation[static_cast<std::size_t>(i)];
    REQUIRE(rel(r.tau_s(i) / ts, tr.truth.tau_s(j) / ts) < 1e-6);
    REQUIRE(rel(r.nu_hz(i) * ts, tr.truth.nu_hz(j) * ts) < 1e-6);
    REQUIRE(rel(r.phi_sr(i), tr.truth.phi_sr(j)) < 1e-6);
    REQUIRE(rel(r.theta_sr(i), tr.truth.theta_sr(j)) < 1e-6);
    REQUIRE(std::abs(r.alpha(i) - tr.truth.alpha(j)) <
            1e-6 * std::abs(tr.truth.alpha(j)));
  }
  REQUIRE(tr.estimates.at("ls").nmse <= 1e-20);
  REQUIRE(tr.estimates.at("ksa").nmse <= 1e-10);
}

TEST_CASE("trials are deterministic in the seed", "[harness]") {
  ExperimentConfig exp = noiseless_exp(RisMode::bd);
  exp.estimators = {"ls", "ksa", "tendae_als", "tendae_hosvd"};
  const TrialResult a = run_trial(exp, 15.0, 77u);
  const TrialResult b = run_trial(exp, 15.0, 77u);
  REQUIRE(a.sigma2 == b.sigma2);
  REQUIRE((a.truth.alpha - b.truth.alpha).norm() == 0.0);
  for (const auto& name : exp.estimators) {
    const EstimatorOutcome& ea = a.estimates.at(name);
    const EstimatorOutcome& eb = b.estimates.at(name);
    REQUIRE(ea.ok == eb.ok);
    if (ea.ok)
      REQUIRE(ea.nmse == eb.nmse);
    else
      REQUIRE(ea.error == eb.error);  // failures reproduce too
    if (ea.has_report) {
      REQUIRE((ea.report.tau_s - eb.report.tau_s).norm() == 0.0);
      REQUIRE((ea.report.alpha - eb.report.alpha).norm() == 0.0);
      REQUIRE(ea.report.permutation == eb.report.permutation);
    }
  }

  const TrialResult c = run_trial(exp, 15.0, 78u);
  REQUIRE((a.truth.alpha - c.truth.alpha).norm() > 0.0);
}

TEST_CASE("paired modes share ground truth", "[harness]") {
  ExperimentConfig eb = noiseless_exp(RisMode::bd);
  ExperimentConfig ed = noiseless_exp(RisMode::diagonal);
  const TrialResult a = run_trial(eb, 20.0, 55u);
  const TrialResult b = run_trial(ed, 20.0, 55u);
  REQUIRE((a.truth.alpha - b.truth.alpha).norm() == 0.0);
  REQUIRE((a.truth.tau_s - b.truth.tau_s).norm() == 0.0);
  REQUIRE((a.truth.nu_hz - b.truth.nu_hz).norm() == 0.0);
  REQUIRE(a.truth.phi_ris_a == b.truth.phi_ris_a);
}

TEST_CASE("sweep report layout and accounting", "[harness]") {
  ExperimentConfig exp = noiseless_exp(RisMode::bd);
  exp.snr_grid_db = {10.0, 30.0};
  exp.trials = 3;
  exp.with_crlb = true;
  exp.als_max_iter = 200;
  exp.als_tol = 1e-10;

  const MetricReport rep = run_sweep(exp);
  REQUIRE(rep.mode == RisMode::bd);
  REQUIRE(rep.trials_per_point == 3);
  REQUIRE(rep.wall_clock_s > 0.0);

  // Unique row keys.
  std::set<std::string> keys;
  for (const auto& row : rep.rows) {
    keys.insert(row.estimator + "|" + std::to_string(row.snr_db) + "|" +
                row.parameter + "|" + row.statistic);
    REQUIRE(std::isfinite(row.value));
    REQUIRE(row.value >= 0.0);
  }
  REQUIRE(keys.size() == rep.rows.size());

  auto find_row = [&](const std::string& est, double snr,
                      const std::string& param, const std::string& stat) {
    for (const auto& row : rep.rows)
      if (row.estimator == est && row.snr_db == snr && row.parameter == param &&
          row.statistic == stat)
        return row.value;
    FAIL("missing row " << est << "/" << snr << "/" << param << "/" << stat);
    return 0.0;
  };

  for (const double snr : exp.snr_grid_db) {
    for (const auto& est : exp.estimators) {
      REQUIRE(find_row(est, snr, "channel", "nmse") >= 0.0);
      REQUIRE(find_row(est, snr, "all", "trials") == 3.0);
      REQUIRE(find_row(est, snr, "all", "failures") >= 0.0);
    }
    for (const auto& p : {"tau_over_ts", "nu_ts", "phi_sr", "theta_sr",
                          "phi_ris_d", "theta_ris_d", "phi_ris_a",
                          "theta_ris_a", "alpha"}) {
      REQUIRE(find_row("tendae_als", snr, p, "rmse") >= 0.0);
      REQUIRE(find_row("crlb", snr, p, "crlb") > 0.0);
    }
  }

  // The LS baseline never emits per-target parameter rows.
  for (const auto& row : rep.rows)
    if (row.estimator == "ls") REQUIRE(row.statistic != "rmse");
}

TEST_CASE("sweeps are reproducible row for row", "[harness]") {
  ExperimentConfig exp = noiseless_exp(RisMode::diagonal);
  exp.snr_grid_db = {20.0};
  exp.trials = 2;
  exp.estimators = {"ls", "tendae_als"};
  exp.als_max_iter = 200;
  exp.als_tol = 1e-10;

  const MetricReport a = run_sweep(exp);
  const MetricReport b = run_sweep(exp);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    REQUIRE(a.rows[i].estimator == b.rows[i].estimator);
    REQUIRE(a.rows[i].snr_db == b.rows[i].snr_db);
    REQUIRE(a.rows[i].parameter == b.rows[i].parameter);
    REQUIRE(a.rows[i].statistic == b.rows[i].statistic);
    REQUIRE(a.rows[i].value == b.rows[i].value);  // bitwise
  }
}

TEST_CASE("architecture comparison emits mode-appropriate columns",
          "[harness]") {
  ExperimentConfig exp = noiseless_exp(RisMode::bd);
  exp.snr_grid_db = {20.0};
  exp.trials = 2;
  exp.estimators = {"tendae_als"};
  exp.als_max_iter = 200;
  exp.als_tol = 1e-10;
  exp.with_crlb = false;

  const ArchitectureComparison cmp = compare_architectures(exp);
  REQUIRE(cmp.bd.mode == RisMode::bd);
  REQUIRE(cmp.diagonal.mode == RisMode::diagonal);

  auto has_param = [](const MetricReport& rep, const std::string& p) {
    for (const auto& row : rep.rows)
      if (row.parameter == p) return true;
    return false;
  };
  REQUIRE(has_param(cmp.bd, "phi_ris_d"));
  REQUIRE(has_param(cmp.bd, "phi_ris_a"));
  REQUIRE_FALSE(has_param(cmp.diagonal, "phi_ris_d"));
  REQUIRE_FALSE(has_param(cmp.diagonal, "phi_ris_a"));
  REQUIRE(has_param(cmp.diagonal, "tau_over_ts"));
}

TEST_CASE("operation counts evaluate the closed forms", "[harness]") {
  const ScenarioConfig cfg;  // reference dims

  SECTION("matched filter baseline") {
    const ComplexityReport rep = complexity_estimate(cfg, "ls");
    REQUIRE(rep.stages.size() == 1);
    REQUIRE(rep.total == 33554432.0);  // 16^4 * 512
  }

  SECTION("component split") {
    const ComplexityReport rep = complexity_estimate(cfg, "ksa");
    REQUIRE(rep.total == 524288.0);  // 16 * 64 * 256 * 2
    ScenarioConfig diag = cfg;
    diag.ris_mode = RisMode::diagonal;
    const ComplexityReport drep = complexity_estimate(diag, "ksa");
    REQUIRE(drep.stages[0].first == "krsa");
    REQUIRE(drep.total == 32768.0);  // 16 * 64 * 16 * 2
  }

  SECTION("pipeline stages and rank growth") {
    const ComplexityReport als = complexity_estimate(cfg, "tendae_als");
    REQUIRE(als.stages.size() == 3);
    const ComplexityReport hosvd = complexity_estimate(cfg, "tendae_hosvd");
    REQUIRE(hosvd.stages.size() == 5);
    REQUIRE(hosvd.total > als.total);

    ScenarioConfig more = cfg;
    more.n_targets = 3;
    const ComplexityReport bigger = complexity_estimate(more, "tendae_als");
    for (std::size_t i = 0; i < als.stages.size(); ++i)
      REQUIRE(bigger.stages[i].second > als.stages[i].second);
  }

  SECTION("bad arguments") {
    REQUIRE_THROWS_AS(complexity_estimate(cfg, "nonsense"),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(complexity_estimate(cfg, "ls", 0), std::invalid_argument);
  }
}

TEST_CASE("experiment validation rejects malformed configs", "[harness]") {
  ExperimentConfig exp;
  exp.trials = 0;
  REQUIRE_THROWS_AS(exp.validate(), std::invalid_argument);
  exp = ExperimentConfig{};
  exp.estimators = {"gradient_descent"};
  REQUIRE_THROWS_AS(exp.validate(), std::invalid_argument);
  exp = ExperimentConfig{};
  exp.snr_grid_db.clear();
  REQUIRE_THROWS_AS(exp.validate(), std::invalid_argument);
  exp = ExperimentConfig{};
  exp.scenario.n_slots = 8;  // fails T >= N^2
  REQUIRE_THROWS_AS(run_sweep(exp), identifiability_error);
}
