// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tendae/tensor.hpp"

namespace tendae {

// Thrown when a configuration violates one of the named dimension
// inequalities required for unique recovery.
struct identifiability_error : std::runtime_error {
  explicit identifiability_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

enum class RisMode { bd, diagonal };

[[nodiscard]] inline std::string to_string(RisMode m) {
  return m == RisMode::bd ? "bd" : "diagonal";
}

struct ScenarioConfig {
  // Array grids (y by z, half-wavelength spacing).
  int n_y = 4, n_z = 4;        // reflecting surface, N = n_y * n_z
  int l_st_y = 2, l_st_z = 2;  // transmit array, L_ST
  int l_sr_y = 4, l_sr_z = 4;  // receive array, L_SR
  int n_symbols = 8;           // M
  int n_subcarriers = 8;       // Q
  int n_slots = 512;           // T
  int n_targets = 2;           // K

  double carrier_hz = 28e9;
  double delta_f_hz = 120e3;  // subcarrier spacing; symbol time is 1/delta_f
  double rcs_m2 = 2.0;
  double dist_min_m = 10.0, dist_max_m = 250.0;
  double vel_min_mps = -25.0, vel_max_mps = 25.0;
  double angle_min_deg = 0.0, angle_max_deg = 90.0;
  // Minimum pairwise separation (deg, Euclidean in the azimuth/elevation
  // plane) enforced between targets on both per-target angle pairs.
  double min_angle_sep_deg = 0.0;
  bool unit_gain_magnitude = false;
  RisMode ris_mode = RisMode::bd;

  [[nodiscard]] int n() const { return n_y * n_z; }
  [[nodiscard]] int l_st() const { return l_st_y * l_st_z; }
  [[nodiscard]] int l_sr() const { return l_sr_y * l_sr_z; }
  [[nodiscard]] int mq() const { return n_symbols * n_subcarriers; }
  [[nodiscard]] double wavelength_m() const { return kSpeedOfLight / carrier_hz; }
  [[nodiscard]] double symbol_time_s() const { return 1.0 / delta_f_hz; }
};

struct Targets {
  CVec alpha;                   // complex path gains, length K
  RVec tau_s;                   // two-hop propagation delays
  RVec nu_hz;                   // Doppler shifts
  RVec phi_sr, theta_sr;        // arrival at the receive array, radians
  RVec phi_ris_d, theta_ris_d;  // departure from the surface, radians
  double phi_ris_a = 0, theta_ris_a = 0;  // arrival at the surface (shared)
  double phi_st = 0, theta_st = 0;        // departure at the transmitter (known)
  // Geometry bookkeeping, kept for serialization and re-derivation.
  double dist_st_ris_m = 0;
  RVec dist_ris_tgt_m, dist_tgt_sr_m, velocity_mps;
};

// Unit-modulus planar-array steering vector, element n = iy*nz + iz:
//   a(n) = exp(-j pi (iy sin(phi) sin(theta) + iz cos(phi)))
// phi is elevation from the array axis, theta azimuth; first element is 1.
[[nodiscard]] inline CVec ura_steering(int ny, int nz, double phi,
                                       double theta) {
  if (ny < 1 || nz < 1)
    throw std::invalid_argument("ura_steering: grid dimensions must be >= 1");
  CVec a(static_cast<Eigen::Index>(ny) * nz);
  const double mu = kPi * std::sin(phi) * std::sin(theta);
  const double psi = kPi * std::cos(phi);
  for (int iy = 0; iy < ny; ++iy)
    for (int iz = 0; iz < nz; ++iz)
      a(iy * nz + iz) = std::polar(1.0, -(iy * mu + iz * psi));
  return a;
}

// Subcarrier-domain delay signature: element q = exp(-j 2 pi q delta_f tau).
[[nodiscard]] inline CVec delay_steering(int q_count, double delta_f_hz,
                                         double tau_s) {
  if (q_count < 1)
    throw std::invalid_argument("delay_steering: q_count must be >= 1");
  CVec c(q_count);
  for (int q = 0; q < q_count; ++q)
    c(q) = std::polar(1.0, -2.0 * kPi * q * delta_f_hz * tau_s);
  return c;
}

// Symbol-domain Doppler signature: element m = exp(+j 2 pi m t_s nu).
[[nodiscard]] inline CVec doppler_steering(int m_count, double t_s,
                                           double nu_hz) {
  if (m_count < 1)
    throw std::invalid_argument("doppler_steering: m_count must be >= 1");
  CVec d(m_count);
  for (int m = 0; m < m_count; ++m)
    d(m) = std::polar(1.0, 2.0 * kPi * m * t_s * nu_hz);
  return d;
}

// Draws a random scene. Shared quantities first (transmitter departure and
// surface arrival angles, transmitter-surface distance), then per-target
// blocks; per-target angle pairs are rejection-sampled until every pair of
// targets is separated by at least min_angle_sep_deg on both the receive-side
// and departure-side angle planes.
[[nodiscard]] inline Targets sample_targets(const ScenarioConfig& cfg,
                                            Rng& rng) {
  const int k_count = cfg.n_targets;
  if (k_count < 1)
    throw std::invalid_argument("sample_targets: n_targets must be >= 1");
  const double lo = deg2rad(cfg.angle_min_deg), hi = deg2rad(cfg.angle_max_deg);
  const double sep = deg2rad(cfg.min_angle_sep_deg);

  Targets t;
  t.alpha = CVec::Zero(k_count);
  t.tau_s = t.nu_hz = t.phi_sr = t.theta_sr = t.phi_ris_d = t.theta_ris_d =
      t.dist_ris_tgt_m = t.dist_tgt_sr_m = t.velocity_mps =
          RVec::Zero(k_count);

  t.phi_st = rng.uniform(lo, hi);
  t.theta_st = rng.uniform(lo, hi);
  t.phi_ris_a = rng.uniform(lo, hi);
  t.theta_ris_a = rng.uniform(lo, hi);
  t.dist_st_ris_m = rng.uniform(cfg.dist_min_m, cfg.dist_max_m);

  auto far_enough = [&](double p, double th, const RVec& ps, const RVec& ths,
                        int upto) {
    for (int l = 0; l < upto; ++l) {
      const double dp = p - ps(l), dth = th - ths(l);
      if (std::sqrt(dp * dp + dth * dth) < sep) return false;
    }
    return true;
  };

  for (int k = 0; k < k_count; ++k) {
    bool placed = false;
    for (int tries = 0; tries < 10000 && !placed; ++tries) {
      const double p_sr = rng.uniform(lo, hi), th_sr = rng.uniform(lo, hi);
      const double p_d = rng.uniform(lo, hi), th_d = rng.uniform(lo, hi);
      if (far_enough(p_sr, th_sr, t.phi_sr, t.theta_sr, k) &&
          far_enough(p_d, th_d, t.phi_ris_d, t.theta_ris_d, k)) {
        t.phi_sr(k) = p_sr;
        t.theta_sr(k) = th_sr;
        t.phi_ris_d(k) = p_d;
        t.theta_ris_d(k) = th_d;
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error(
          "sample_targets: could not satisfy min_angle_sep_deg=" +
          std::to_string(cfg.min_angle_sep_deg));

    t.dist_ris_tgt_m(k) = rng.uniform(cfg.dist_min_m, cfg.dist_max_m);
    t.dist_tgt_sr_m(k) = rng.uniform(cfg.dist_min_m, cfg.dist_max_m);
    t.tau_s(k) = (t.dist_st_ris_m + t.dist_ris_tgt_m(k) + t.dist_tgt_sr_m(k)) /
                 kSpeedOfLight;
    t.velocity_mps(k) = rng.uniform(cfg.vel_min_mps, cfg.vel_max_mps);
    t.nu_hz(k) = 2.0 * t.velocity_mps(k) / cfg.wavelength_m();

    // Bistatic power budget over the two target-facing hops; the
    // transmitter-surface hop is carried by the surface channel factor.
    double mag = 1.0;
    if (!cfg.unit_gain_magnitude) {
      const double lam = cfg.wavelength_m();
      const double d2 = t.dist_ris_tgt_m(k), d3 = t.dist_tgt_sr_m(k);
      mag = std::sqrt(lam * lam * cfg.rcs_m2 /
                      (std::pow(4.0 * kPi, 3) * d2 * d2 * d3 * d3));
    }
    t.alpha(k) = std::polar(mag, rng.uniform(0.0, 2.0 * kPi));
  }
  return t;
}

struct RisSchedule {
  RisMode mode = RisMode::bd;
  // bd: N^2 x T, column t is vec of the t-th unitary slot matrix.
  // diagonal: N x T, column t holds the unit-modulus per-element phases.
  CMat s;
};

// Per-slot reflection patterns. bd mode draws independent Haar-style random
// unitaries (QR of a complex Gaussian matrix, R-diagonal phases normalized);
// diagonal mode draws i.i.d. unit-modulus phases.
[[nodiscard]] inline RisSchedule make_ris_schedule(const ScenarioConfig& cfg,
                                                   Rng& rng) {
  const int n = cfg.n(), t_count = cfg.n_slots;
  RisSchedule sch;
  sch.mode = cfg.ris_mode;
  if (cfg.ris_mode == RisMode::bd) {
    if (t_count < n * n)
      throw identifiability_error(
          "make_ris_schedule: T >= N^2 required to right-filter the bd "
          "schedule (T=" +
          std::to_string(t_count) + ", N^2=" + std::to_string(n * n) + ")");
    sch.s = CMat(n * n, t_count);
    for (int t = 0; t < t_count; ++t) {
      const CMat a = rng.cnormal_matrix(n, n);
      Eigen::HouseholderQR<CMat> qr(a);
      CMat q = qr.householderQ();
      const CMat r = qr.matrixQR().triangularView<Eigen::Upper>();
      for (int i = 0; i < n; ++i) {
        const cdouble rii = r(i, i);
        const double m = std::abs(rii);
        q.col(i) *= m > 0 ? rii / m : cdouble(1.0, 0.0);
      }
      sch.s.col(t) = Eigen::Map<const CVec>(q.data(), n * n);
    }
    return sch;
  }
  if (t_count < n)
    throw identifiability_error(
        "make_ris_schedule: T >= N required to right-filter the diagonal "
        "schedule (T=" +
        std::to_string(t_count) + ", N=" + std::to_string(n) + ")");
  sch.s = CMat(n, t_count);
  for (int t = 0; t < t_count; ++t)
    for (int i = 0; i < n; ++i)
      sch.s(i, t) = std::polar(1.0, rng.uniform(0.0, 2.0 * kPi));
  return sch;
}

// l_st rows of the mq x mq Sylvester-type +/-1 orthogonal matrix, so
// x * x^T = mq * I. Only power-of-two sizes exist in this family.
//
// Row selection matters beyond orthogonality: row i of this matrix is the
// Walsh function w_i, and w_i .* w_j = w_(i xor j). If the selected index set
// S is mapped onto itself by xor with some j != 0, then the elementwise mask
// w_j maps the pilot row space onto itself, and the bilinear channel fit that
// divides the data between a transmitter-side channel and a delay-Doppler
// part is only determined up to that mask: the fit can converge to an exact
// solution whose delay-Doppler columns are w_j-modulated and useless for
// frequency readout. Indices are therefore chosen so that the final set has
// no such nonzero stabilizer whenever one exists ({0} plus powers of two,
// then checked fill-ins). For l_st = 2 every two-row +/-1 selection is
// stabilized by construction; callers that need the gauge pinned should use
// l_st >= 3 with mq > l_st.
[[nodiscard]] inline CMat make_pilots(int l_st, int mq) {
  if (mq < 1 || (mq & (mq - 1)) != 0)
    throw std::invalid_argument(
        "make_pilots: unsupported size, mq must be a power of two (got " +
        std::to_string(mq) + ")");
  if (l_st < 1 || l_st > mq)
    throw std::invalid_argument("make_pilots: need 1 <= l_st <= mq");
  RMat h(1, 1);
  h(0, 0) = 1.0;
  while (h.rows() < mq) {
    const Eigen::Index s = h.rows();
    RMat g(2 * s, 2 * s);
    g.topLeftCorner(s, s) = h;
    g.topRightCorner(s, s) = h;
    g.bottomLeftCorner(s, s) = h;
    g.bottomRightCorner(s, s) = -h;
    h = g;
  }

  std::vector<int> sel;
  sel.reserve(static_cast<std::size_t>(l_st));
  sel.push_back(0);
  for (int p = 1; static_cast<int>(sel.size()) < l_st && p < mq; p <<= 1)
    sel.push_back(p);
  const auto has_nonzero_stabilizer = [](const std::vector<int>& s) {
    for (const int j : s) {
      if (j == 0) continue;
      bool stab = true;
      for (const int a : s)
        if (std::find(s.begin(), s.end(), a ^ j) == s.end()) {
          stab = false;
          break;
        }
      if (stab) return true;
    }
    return false;
  };
  for (int cand = 3; static_cast<int>(sel.size()) < l_st && cand < mq; ++cand) {
    if (std::find(sel.begin(), sel.end(), cand) != sel.end()) continue;
    sel.push_back(cand);
    if (has_nonzero_stabilizer(sel)) sel.pop_back();
  }
  for (int cand = 1; static_cast<int>(sel.size()) < l_st; ++cand)
    if (std::find(sel.begin(), sel.end(), cand) == sel.end())
      sel.push_back(cand);  // no pinning selection exists, take what is left

  CMat x(l_st, mq);
  for (int i = 0; i < l_st; ++i)
    x.row(i) = h.row(sel[static_cast<std::size_t>(i)]).cast<cdouble>();
  return x;
}

struct Channels {
  CVec a_st;                  // L_ST, transmitter departure signature
  CVec b_rx;                  // N, surface arrival signature
  CMat a_sr;                  // L_SR x K, receive-side signatures
  CMat b_tx;                  // N x K, surface departure signatures
  CMat h;                     // N x L_ST, transmitter-surface channel
  CMat c_tau;                 // Q x K delay signatures
  CMat d_nu;                  // M x K Doppler signatures
  std::vector<CMat> g;        // K matrices, L_SR x N
  std::vector<CMat> j;        // K matrices, N x MQ
  CMat x;                     // L_ST x MQ pilots
};

// Deterministic channel construction from a sampled scene:
//   g_k = alpha_k a_sr_k b_tx_k^T,  h = b_rx a_st^T,
//   j_k = h x diag(c(tau_k) kron d(nu_k)).
[[nodiscard]] inline Channels build_channels(const ScenarioConfig& cfg,
                                             const Targets& t) {
  const int k_count = cfg.n_targets;
  Channels ch;
  ch.a_st = ura_steering(cfg.l_st_y, cfg.l_st_z, t.phi_st, t.theta_st);
  ch.b_rx = ura_steering(cfg.n_y, cfg.n_z, t.phi_ris_a, t.theta_ris_a);
  ch.a_sr = CMat(cfg.l_sr(), k_count);
  ch.b_tx = CMat(cfg.n(), k_count);
  ch.c_tau = CMat(cfg.n_subcarriers, k_count);
  ch.d_nu = CMat(cfg.n_symbols, k_count);
  ch.h = ch.b_rx * ch.a_st.transpose();
  ch.x = make_pilots(cfg.l_st(), cfg.mq());
  ch.g.resize(k_count);
  ch.j.resize(k_count);
  for (int k = 0; k < k_count; ++k) {
    ch.a_sr.col(k) =
        ura_steering(cfg.l_sr_y, cfg.l_sr_z, t.phi_sr(k), t.theta_sr(k));
    ch.b_tx.col(k) =
        ura_steering(cfg.n_y, cfg.n_z, t.phi_ris_d(k), t.theta_ris_d(k));
    ch.c_tau.col(k) =
        delay_steering(cfg.n_subcarriers, cfg.delta_f_hz, t.tau_s(k));
    ch.d_nu.col(k) = doppler_steering(cfg.n_symbols, cfg.symbol_time_s(),
                                      t.nu_hz(k));
    ch.g[k] = t.alpha(k) * ch.a_sr.col(k) * ch.b_tx.col(k).transpose();
    const CVec cd = kron(CVec(ch.c_tau.col(k)), CVec(ch.d_nu.col(k)));
    ch.j[k] = ch.h * ch.x * cd.asDiagonal();
  }
  return ch;
}

struct Synthesis {
  CMat y;         // observed (L_SR MQ) x T
  CMat y0;        // noiseless part
  double noise_scale = 0.0;    // multiplier applied to the unit-variance draw
  double sigma2 = 0.0;         // nominal per-entry noise variance
  double snr_db = std::numeric_limits<double>::infinity();
};

// Noiseless observation: column t is vec(sum_k g_k s_t j_k) where s_t is the
// t-th slot matrix (bd) or diag of the t-th phase column (diagonal).
[[nodiscard]] inline CMat synthesize_noiseless(const ScenarioConfig& cfg,
                                               const Channels& ch,
                                               const RisSchedule& sch) {
  const int n = cfg.n(), t_count = static_cast<int>(sch.s.cols());
  const Eigen::Index rows = static_cast<Eigen::Index>(cfg.l_sr()) * cfg.mq();
  CMat y0 = CMat::Zero(rows, t_count);
  CMat acc(cfg.l_sr(), cfg.mq());
  for (int t = 0; t < t_count; ++t) {
    acc.setZero();
    if (sch.mode == RisMode::bd) {
      Eigen::Map<const CMat> st(sch.s.col(t).data(), n, n);
      for (std::size_t k = 0; k < ch.g.size(); ++k)
        acc += ch.g[k] * st * ch.j[k];
    } else {
      for (std::size_t k = 0; k < ch.g.size(); ++k)
        acc += ch.g[k] * sch.s.col(t).asDiagonal() * ch.j[k];
    }
    y0.col(t) = Eigen::Map<const CVec>(acc.data(), rows);
  }
  return y0;
}

// Adds circularly symmetric white noise scaled so that
// ||y0||_F^2 / ||noise||_F^2 equals the linear SNR exactly for this
// realization. snr_db = +inf yields the noiseless observation.
[[nodiscard]] inline Synthesis synthesize(const ScenarioConfig& cfg,
                                          const Channels& ch,
                                          const RisSchedule& sch,
                                          double snr_db, Rng& rng) {
  Synthesis out;
  out.snr_db = snr_db;
  out.y0 = synthesize_noiseless(cfg, ch, sch);
  if (std::isinf(snr_db) && snr_db > 0) {
    out.y = out.y0;
    return out;
  }
  const double snr_lin = std::pow(10.0, snr_db / 10.0);
  const CMat z = rng.cnormal_matrix(out.y0.rows(), out.y0.cols());
  const double zn = z.norm();
  if (zn == 0.0) throw std::runtime_error("synthesize: degenerate noise draw");
  out.noise_scale = out.y0.norm() / (zn * std::sqrt(snr_lin));
  out.sigma2 = out.y0.squaredNorm() /
               (snr_lin * static_cast<double>(out.y0.size()));
  out.y = out.y0 + out.noise_scale * z;
  return out;
}

}  // namespace tendae
