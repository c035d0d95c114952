// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

#include "tendae/crlb.hpp"
#include "tendae/scenario.hpp"

using namespace tendae;

namespace {

ScenarioConfig small_cfg(RisMode mode) {
  ScenarioConfig cfg;
  cfg.n_y = cfg.n_z = 2;
  cfg.l_st_y = 2;
  cfg.l_st_z = 1;
  cfg.l_sr_y = cfg.l_sr_z = 2;
  cfg.n_symbols = 2;
  cfg.n_subcarriers = 2;
  cfg.n_slots = 20;
  cfg.n_targets = 2;
  cfg.ris_mode = mode;
  return cfg;
}

struct Scene {
  ScenarioConfig cfg;
  Targets targets;
  RisSchedule sch;
  ParamVector eta;
};

Scene make_scene(RisMode mode, std::uint64_t seed, bool unit_gains) {
  Scene s;
  s.cfg = small_cfg(mode);
  s.cfg.unit_gain_magnitude = unit_gains;
  Rng rng(seed);
  s.targets = sample_targets(s.cfg, rng);
  s.sch = make_ris_schedule(s.cfg, rng);
  s.eta = ParamVector::from_targets(s.targets);
  return s;
}

// Straight Gram of materialized derivatives, the slow oracle for fim().
RMat gram_fim(const Scene& s, double sigma2) {
  const int p = s.eta.size();
  std::vector<CMat> d(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i)
    d[static_cast<std::size_t>(i)] = d_mean_signal(
        s.cfg, s.eta, i, s.sch, s.targets.phi_st, s.targets.theta_st);
  RMat f(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      f(i, j) = 2.0 / sigma2 *
                std::real((d[static_cast<std::size_t>(i)].adjoint() *
                           d[static_cast<std::size_t>(j)])
                              .trace());
  return f;
}

CMat fd_derivative(const Scene& s, int i) {
  const double h = 1e-6 * s.eta.char_scale(i, s.cfg.symbol_time_s());
  ParamVector up = s.eta, dn = s.eta;
  up.set(i, s.eta.get(i) + h);
  dn.set(i, s.eta.get(i) - h);
  const CMat vp =
      mean_signal(s.cfg, up, s.sch, s.targets.phi_st, s.targets.theta_st);
  const CMat vm =
      mean_signal(s.cfg, dn, s.sch, s.targets.phi_st, s.targets.theta_st);
  return (vp - vm) / (2.0 * h);
}

}  // namespace

TEST_CASE("parameter vector bookkeeping", "[crlb]") {
  const Scene s = make_scene(RisMode::bd, 11u, false);
  ParamVector eta = s.eta;
  const int k = eta.targets();
  REQUIRE(k == 2);
  REQUIRE(eta.size() == 8 * k + 2);

  SECTION("flat accessors round-trip every slot") {
    for (int i = 0; i < eta.size(); ++i) {
      const double v = 0.5 + 0.01 * i;
      eta.set(i, v);
      REQUIRE(eta.get(i) == v);
    }
    REQUIRE(eta.phi_ris(0) == Catch::Approx(0.5 + 0.01 * 6 * k));
    REQUIRE(eta.theta_ris(k) == Catch::Approx(0.5 + 0.01 * (8 * k + 1)));
    REQUIRE_THROWS_AS(eta.get(-1), std::out_of_range);
    REQUIRE_THROWS_AS(eta.set(eta.size(), 0.0), std::out_of_range);
  }

  SECTION("names follow the block layout") {
    REQUIRE(eta.name(0) == "alpha_re[0]");
    REQUIRE(eta.name(2 * k) == "tau[0]");
    REQUIRE(eta.name(4 * k + 1) == "phi_sr[1]");
    REQUIRE(eta.name(6 * k) == "phi_ris_a");
    REQUIRE(eta.name(6 * k + 1) == "phi_ris_d[0]");
    REQUIRE(eta.name(7 * k + 1) == "theta_ris_a");
    REQUIRE(eta.name(8 * k + 1) == "theta_ris_d[1]");
    REQUIRE_THROWS_AS(eta.name(eta.size()), std::out_of_range);
  }

  SECTION("characteristic scales normalize delay and Doppler") {
    const double ts = s.cfg.symbol_time_s();
    REQUIRE(eta.char_scale(0, ts) == 1.0);
    REQUIRE(eta.char_scale(2 * k, ts) == ts);
    REQUIRE(eta.char_scale(3 * k, ts) == 1.0 / ts);
    REQUIRE(eta.char_scale(6 * k, ts) == 1.0);
  }

  SECTION("truth round-trips through the flat layout") {
    const Targets t =
        s.eta.to_targets(s.targets.phi_st, s.targets.theta_st);
    REQUIRE((t.alpha - s.targets.alpha).norm() == 0.0);
    REQUIRE((t.tau_s - s.targets.tau_s).norm() == 0.0);
    REQUIRE((t.phi_ris_d - s.targets.phi_ris_d).norm() == 0.0);
    REQUIRE(t.phi_ris_a == s.targets.phi_ris_a);
    REQUIRE(t.theta_ris_a == s.targets.theta_ris_a);
    REQUIRE(t.phi_st == s.targets.phi_st);
  }

  SECTION("inconsistent blocks are rejected") {
    ParamVector bad = s.eta;
    bad.phi_ris = RVec::Zero(k);  // missing the arrival slot
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s.eta;
    bad.nu_hz = RVec::Zero(k + 1);
    REQUIRE_THROWS_AS(bad.to_targets(0.0, 0.0), std::invalid_argument);
  }
}

TEST_CASE("mean signal matches the scenario synthesis", "[crlb]") {
  for (const RisMode mode : {RisMode::bd, RisMode::diagonal}) {
    const Scene s = make_scene(mode, 29u, false);
    const Channels ch = build_channels(s.cfg, s.targets);
    const CMat y0 = synthesize_noiseless(s.cfg, ch, s.sch);
    const CMat v =
        mean_signal(s.cfg, s.eta, s.sch, s.targets.phi_st, s.targets.theta_st);
    REQUIRE(v.rows() == y0.rows());
    REQUIRE(v.cols() == y0.cols());
    REQUIRE((v - y0).norm() <= 1e-13 * y0.norm());
  }
}

TEST_CASE("mean signal is linear in the gains", "[crlb]") {
  const Scene s = make_scene(RisMode::bd, 31u, false);
  const CMat base =
      mean_signal(s.cfg, s.eta, s.sch, s.targets.phi_st, s.targets.theta_st);

  ParamVector doubled = s.eta;
  doubled.alpha_re(0) *= 2.0;
  doubled.alpha_im(0) *= 2.0;
  const CMat bumped = mean_signal(s.cfg, doubled, s.sch, s.targets.phi_st,
                                  s.targets.theta_st);

  ParamVector only0 = s.eta;
  only0.alpha_re(1) = only0.alpha_im(1) = 0.0;
  const CMat lone = mean_signal(s.cfg, only0, s.sch, s.targets.phi_st,
                                s.targets.theta_st);
  REQUIRE((bumped - base - lone).norm() <= 1e-12 * base.norm());

  ParamVector zeroed = s.eta;
  zeroed.alpha_re.setZero();
  zeroed.alpha_im.setZero();
  const CMat off = mean_signal(s.cfg, zeroed, s.sch, s.targets.phi_st,
                               s.targets.theta_st);
  REQUIRE(off.norm() == 0.0);
}

TEST_CASE("steering derivative matches finite differences", "[crlb]") {
  const double phi = deg2rad(40.0), theta = deg2rad(25.0), h = 1e-6;

  for (const AngleAxis axis : {AngleAxis::phi, AngleAxis::theta}) {
    const CVec d = d_steering(4, 4, phi, theta, axis);
    const double pp = axis == AngleAxis::phi ? phi + h : phi;
    const double pm = axis == AngleAxis::phi ? phi - h : phi;
    const double tp = axis == AngleAxis::theta ? theta + h : theta;
    const double tm = axis == AngleAxis::theta ? theta - h : theta;
    const CVec fd =
        (ura_steering(4, 4, pp, tp) - ura_steering(4, 4, pm, tm)) / (2.0 * h);
    REQUIRE((d - fd).norm() <= 1e-6 * fd.norm());
  }

  // A single element carries no angle information.
  REQUIRE(d_steering(1, 1, phi, theta, AngleAxis::phi).norm() == 0.0);
  REQUIRE(d_steering(1, 1, phi, theta, AngleAxis::theta).norm() == 0.0);
  // The azimuth response is stationary at azimuth 90 degrees.
  REQUIRE(d_steering(4, 4, phi, deg2rad(90.0), AngleAxis::theta).norm() <=
          1e-13);
}

TEST_CASE("mean derivatives match finite differences", "[crlb]") {
  for (const auto [mode, unit_gains] :
       {std::pair{RisMode::bd, true}, std::pair{RisMode::diagonal, false}}) {
    const Scene s = make_scene(mode, 47u, unit_gains);
    for (int i = 0; i < s.eta.size(); ++i) {
      const CMat analytic = d_mean_signal(s.cfg, s.eta, i, s.sch,
                                          s.targets.phi_st, s.targets.theta_st);
      const CMat fd = fd_derivative(s, i);
      INFO("mode " << to_string(mode) << " parameter " << s.eta.name(i));
      REQUIRE(analytic.norm() > 0.0);
      REQUIRE((analytic - fd).norm() <= 1e-6 * fd.norm());
    }
  }
}

TEST_CASE("delay derivative vanishes on a single subcarrier", "[crlb]") {
  Scene s = make_scene(RisMode::bd, 53u, false);
  s.cfg.n_subcarriers = 1;
  Rng rng(53u);
  s.targets = sample_targets(s.cfg, rng);
  s.sch = make_ris_schedule(s.cfg, rng);
  s.eta = ParamVector::from_targets(s.targets);
  const int k = s.eta.targets();
  for (int t = 0; t < k; ++t) {
    const CMat d = d_mean_signal(s.cfg, s.eta, 2 * k + t, s.sch,
                                 s.targets.phi_st, s.targets.theta_st);
    REQUIRE(d.norm() == 0.0);
  }
}

TEST_CASE("information matrix reductions agree", "[crlb]") {
  for (const RisMode mode : {RisMode::bd, RisMode::diagonal}) {
    const Scene s = make_scene(mode, 61u, true);
    const double sigma2 = 0.37;
    const FimMatrix f =
        fim(s.cfg, s.eta, sigma2, s.sch, s.targets.phi_st, s.targets.theta_st);
    REQUIRE(f.sigma2 == sigma2);
    REQUIRE(f.f.rows() == s.eta.size());

    // Exactly symmetric by construction.
    REQUIRE((f.f - f.f.transpose()).norm() == 0.0);

    // Gram of the materialized derivatives is the independent oracle.
    const RMat slow = gram_fim(s, sigma2);
    REQUIRE((f.f - slow).norm() <= 1e-10 * slow.norm());

    // Diagonal entries are scaled derivative energies.
    for (int i = 0; i < s.eta.size(); ++i) {
      const CMat d = d_mean_signal(s.cfg, s.eta, i, s.sch, s.targets.phi_st,
                                   s.targets.theta_st);
      REQUIRE(f.f(i, i) ==
              Catch::Approx(2.0 / sigma2 * d.squaredNorm()).epsilon(1e-10));
    }

    // Positive semidefinite.
    Eigen::SelfAdjointEigenSolver<RMat> es(f.f);
    REQUIRE(es.eigenvalues().minCoeff() >=
            -1e-10 * es.eigenvalues().maxCoeff());
  }
}

TEST_CASE("information matrix scales inversely with noise power", "[crlb]") {
  const Scene s = make_scene(RisMode::bd, 67u, true);
  const FimMatrix f1 =
      fim(s.cfg, s.eta, 0.5, s.sch, s.targets.phi_st, s.targets.theta_st);
  const FimMatrix f2 =
      fim(s.cfg, s.eta, 1.0, s.sch, s.targets.phi_st, s.targets.theta_st);
  REQUIRE((f2.f - 0.5 * f1.f).norm() == 0.0);
  REQUIRE_THROWS_AS(
      fim(s.cfg, s.eta, 0.0, s.sch, s.targets.phi_st, s.targets.theta_st),
      std::invalid_argument);
}

TEST_CASE("information matrix matches finite differences", "[crlb]") {
  const Scene s = make_scene(RisMode::bd, 71u, true);
  const double sigma2 = 1.0;
  const FimMatrix f =
      fim(s.cfg, s.eta, sigma2, s.sch, s.targets.phi_st, s.targets.theta_st);

  const int p = s.eta.size();
  std::vector<CMat> d(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) d[static_cast<std::size_t>(i)] = fd_derivative(s, i);
  RMat fd(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      fd(i, j) = 2.0 / sigma2 *
                 std::real((d[static_cast<std::size_t>(i)].adjoint() *
                            d[static_cast<std::size_t>(j)])
                               .trace());
  REQUIRE((f.f - fd).norm() <= 1e-4 * fd.norm());
}

TEST_CASE("bound report inverts the information matrix", "[crlb]") {
  const Scene s = make_scene(RisMode::bd, 83u, true);
  const double ts = s.cfg.symbol_time_s();
  const int p = s.eta.size();
  const int k = s.eta.targets();

  SECTION("diagonal information gives reciprocal root bounds") {
    FimMatrix f;
    f.sigma2 = 1.0;
    f.f = RMat::Zero(p, p);
    for (int i = 0; i < p; ++i) f.f(i, i) = 4.0 * (i + 1);
    const CrlbReport rep = crlb(f, s.eta, ts);
    REQUIRE_FALSE(rep.singular);
    for (int i = 0; i < p; ++i) {
      REQUIRE(rep.bound(i) ==
              Catch::Approx(1.0 / std::sqrt(4.0 * (i + 1))).epsilon(1e-12));
      REQUIRE(rep.identifiable[static_cast<std::size_t>(i)]);
      const double scale = s.eta.char_scale(i, ts);
      REQUIRE(rep.bound_normalized(i) ==
              Catch::Approx(rep.bound(i) / scale).epsilon(1e-12));
    }
    // Delay bounds are reported in symbols, Doppler in inverse symbols.
    REQUIRE(rep.bound_normalized(2 * k) ==
            Catch::Approx(rep.bound(2 * k) / ts).epsilon(1e-12));
    REQUIRE(rep.bound_normalized(3 * k) ==
            Catch::Approx(rep.bound(3 * k) * ts).epsilon(1e-12));
  }

  SECTION("bounds scale with the noise standard deviation") {
    const FimMatrix f1 =
        fim(s.cfg, s.eta, 1.0, s.sch, s.targets.phi_st, s.targets.theta_st);
    FimMatrix f4 = f1;
    f4.f /= 4.0;
    f4.sigma2 = 4.0;
    const CrlbReport r1 = crlb(f1, s.eta, ts);
    const CrlbReport r4 = crlb(f4, s.eta, ts);
    REQUIRE((r4.bound - 2.0 * r1.bound).norm() <= 1e-10 * r1.bound.norm());
  }

  SECTION("well-posed scene is fully identifiable") {
    const FimMatrix f =
        fim(s.cfg, s.eta, 1.0, s.sch, s.targets.phi_st, s.targets.theta_st);
    const CrlbReport rep = crlb(f, s.eta, ts);
    REQUIRE_FALSE(rep.singular);
    for (int i = 0; i < p; ++i) {
      REQUIRE(rep.identifiable[static_cast<std::size_t>(i)]);
      REQUIRE(std::isfinite(rep.bound(i)));
      REQUIRE(rep.bound(i) > 0.0);
    }
  }

  SECTION("coincident targets are flagged, not fatal") {
    Scene dup = s;
    for (int i = 0; i < k; ++i) {
      dup.eta.set(i, dup.eta.get(0));  // same gain...
      dup.eta.alpha_im(i) = dup.eta.alpha_im(0);
      dup.eta.tau_s(i) = dup.eta.tau_s(0);
      dup.eta.nu_hz(i) = dup.eta.nu_hz(0);
      dup.eta.phi_sr(i) = dup.eta.phi_sr(0);
      dup.eta.theta_sr(i) = dup.eta.theta_sr(0);
      dup.eta.phi_ris(1 + i) = dup.eta.phi_ris(1);
      dup.eta.theta_ris(1 + i) = dup.eta.theta_ris(1);
    }
    const FimMatrix f = fim(dup.cfg, dup.eta, 1.0, dup.sch, dup.targets.phi_st,
                            dup.targets.theta_st);
    const CrlbReport rep = crlb(f, dup.eta, ts);
    REQUIRE(rep.singular);
    REQUIRE_FALSE(rep.identifiable[0]);  // gains split only through the sum
    for (int i = 0; i < p; ++i) REQUIRE(std::isfinite(rep.bound(i)));
  }

  SECTION("shape mismatches are rejected") {
    FimMatrix bad;
    bad.f = RMat::Identity(p + 1, p + 1);
    REQUIRE_THROWS_AS(crlb(bad, s.eta, ts), std::invalid_argument);
  }
}
