// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tendae/crlb.hpp"
#include "tendae/extraction.hpp"
#include "tendae/ksa.hpp"
#include "tendae/ntfe.hpp"
#include "tendae/scenario.hpp"

namespace tendae {

// Experiment description consumed by the sweep drivers and the CLI.
struct ExperimentConfig {
  ScenarioConfig scenario;
  std::vector<double> snr_grid_db = {0.0, 10.0, 20.0, 30.0};
  int trials = 100;
  std::vector<std::string> estimators = {"ls", "ksa", "tendae_als"};
  std::string outputs = "out";
  std::uint64_t master_seed = 1;
  bool with_crlb = true;     // attach bound columns to sweep reports
  int als_max_iter = 500;    // iteration cap for every trilinear fit
  double als_tol = 1e-6;     // residual-change stop for every trilinear fit
  int complexity_als_iter = 10;  // iteration count assumed by op-count rows

  void validate() const {
    if (trials < 1)
      throw std::invalid_argument("ExperimentConfig: trials must be >= 1");
    if (snr_grid_db.empty())
      throw std::invalid_argument("ExperimentConfig: empty SNR grid");
    if (estimators.empty())
      throw std::invalid_argument("ExperimentConfig: empty estimator set");
    for (const auto& e : estimators)
      if (e != "ls" && e != "ksa" && e != "tendae_als" && e != "tendae_hosvd")
        throw std::invalid_argument("ExperimentConfig: unknown estimator \"" +
                                    e + "\"");
    if (als_max_iter < 1 || als_tol <= 0.0 || complexity_als_iter < 1)
      throw std::invalid_argument("ExperimentConfig: bad fit controls");
  }
};

// Sufficient-condition diagnostic for trilinear uniqueness on synthetic
// generic factors at the stage dimensions: sum of factor k-ranks against
// 2*rank + 2.
struct KruskalDiagnostic {
  std::string stage;
  int k_rank_sum = 0;
  int threshold = 0;
  bool unique_sufficient = false;
};

struct IdentifiabilityReport {
  std::vector<std::string> violations;  // each names the binding inequality
  std::vector<KruskalDiagnostic> kruskal;
  [[nodiscard]] bool ok() const { return violations.empty(); }
};

// Pure dimension check; never throws. Every violated inequality is reported
// by name with the offending numbers.
[[nodiscard]] inline IdentifiabilityReport check_identifiability(
    const ScenarioConfig& cfg) {
  IdentifiabilityReport rep;
  const long long n = cfg.n(), l_sr = cfg.l_sr(), l_st = cfg.l_st();
  const long long mq = cfg.mq(), k = cfg.n_targets, t = cfg.n_slots;

  if (cfg.ris_mode == RisMode::bd) {
    if (t < n * n)
      rep.violations.push_back("T >= N^2 violated: T=" + std::to_string(t) +
                               " < " + std::to_string(n * n));
  } else if (t < n) {
    rep.violations.push_back("T >= N violated: T=" + std::to_string(t) +
                             " < " + std::to_string(n));
  }
  if (l_sr * n < k)
    rep.violations.push_back("L_SR*N >= K violated: " +
                             std::to_string(l_sr * n) + " < " +
                             std::to_string(k));
  if (mq < std::max(l_st, k))
    rep.violations.push_back(
        "MQ >= max(L_ST, K) violated: MQ=" + std::to_string(mq) +
        " < max(" + std::to_string(l_st) + ", " + std::to_string(k) + ")");
  if (cfg.ris_mode == RisMode::bd) {
    if (l_sr * n * mq * n < k)
      rep.violations.push_back("L_SR*N*MQ*N >= K violated: " +
                               std::to_string(l_sr * n * mq * n) + " < " +
                               std::to_string(k));
  } else if (l_sr * mq * n < k) {
    rep.violations.push_back("L_SR*MQ*N >= K violated: " +
                             std::to_string(l_sr * mq * n) + " < " +
                             std::to_string(k));
  }

  // Generic-factor diagnostic at the two trilinear stages. Row counts are
  // capped: the k-rank of a generic tall matrix saturates at the column
  // count anyway.
  Rng rng(0x6b72736bu);
  auto diagnose = [&](const std::string& stage, int d1, int d2, int d3) {
    KruskalDiagnostic d;
    d.stage = stage;
    d.threshold = 2 * cfg.n_targets + 2;
    for (const int rows : {d1, d2, d3})
      d.k_rank_sum +=
          k_rank(rng.cnormal_matrix(std::min(rows, 16), cfg.n_targets));
    d.unique_sufficient = d.k_rank_sum >= d.threshold;
    return d;
  };
  rep.kruskal.push_back(diagnose("angular", cfg.n_targets,
                                 static_cast<int>(l_sr),
                                 static_cast<int>(n)));
  rep.kruskal.push_back(diagnose("delay_doppler", cfg.n_targets,
                                 cfg.n_symbols, cfg.n_subcarriers));
  return rep;
}

// Gate used by synthesis-running entry points; the message lists every
// violated inequality by name.
inline void require_identifiable(const ScenarioConfig& cfg) {
  const IdentifiabilityReport rep = check_identifiability(cfg);
  if (rep.ok()) return;
  std::string msg = "identifiability check failed:";
  for (const auto& v : rep.violations) msg += " [" + v + "]";
  throw identifiability_error(msg);
}

// Relative squared reconstruction error of the filtered effective channel.
[[nodiscard]] inline double channel_nmse(const CMat& w_true,
                                         const CMat& w_hat) {
  const double den = w_true.squaredNorm();
  if (den == 0.0)
    throw std::invalid_argument("channel_nmse: zero reference channel");
  if (w_hat.rows() != w_true.rows() || w_hat.cols() != w_true.cols())
    throw std::invalid_argument("channel_nmse: shape mismatch");
  return (w_hat - w_true).squaredNorm() / den;
}

namespace detail {

// Effective filtered channel W from per-target component matrices: the
// Kronecker stack for the fully connected mode, the columnwise (Khatri-Rao)
// stack when the schedule is diagonal.
[[nodiscard]] inline CMat stack_channel(const std::vector<CMat>& g,
                                        const std::vector<CMat>& jt,
                                        RisMode mode) {
  const Eigen::Index l_sr = g[0].rows(), n = g[0].cols();
  const Eigen::Index mq = jt[0].rows();
  const Eigen::Index cols = mode == RisMode::bd ? n * n : n;
  CMat w = CMat::Zero(l_sr * mq, cols);
  for (std::size_t k = 0; k < g.size(); ++k)
    w += mode == RisMode::bd ? kron(jt[k], g[k]) : khatri_rao(jt[k], g[k]);
  return w;
}

[[nodiscard]] inline CMat effective_channel(const Channels& ch, RisMode mode) {
  std::vector<CMat> g, jt;
  g.reserve(ch.g.size());
  jt.reserve(ch.j.size());
  for (std::size_t k = 0; k < ch.g.size(); ++k) {
    g.push_back(ch.g[k]);
    jt.push_back(ch.j[k].transpose());
  }
  return stack_channel(g, jt, mode);
}

[[nodiscard]] inline CMat ksa_channel(const KsaFactors& f, int l_sr, int n,
                                      int mq, RisMode mode) {
  std::vector<CMat> g, jt;
  for (Eigen::Index k = 0; k < f.g.cols(); ++k) {
    g.emplace_back(Eigen::Map<const CMat>(f.g.col(k).data(), l_sr, n));
    jt.emplace_back(Eigen::Map<const CMat>(f.j.col(k).data(), mq, n));
  }
  return stack_channel(g, jt, mode);
}

// Exhaustive column assignment between the two stage couplings: returns,
// for each second-stage column, the first-stage column describing the same
// target, by maximizing the summed magnitude of the picked entries of
// m = A1^T A2 (a scaled permutation in the exact case).
[[nodiscard]] inline std::vector<int> assign_columns(const CMat& m) {
  const int k = static_cast<int>(m.cols());
  if (m.rows() != k)
    throw std::invalid_argument("assign_columns: square coupling required");
  if (k > 6)
    throw std::invalid_argument("assign_columns: exhaustive search capped at 6");
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> best = order;
  double best_score = -1.0;
  do {
    double score = 0;
    for (int c = 0; c < k; ++c)
      score += std::abs(m(order[static_cast<std::size_t>(c)], c));
    if (score > best_score) {
      best_score = score;
      best = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

struct PipelineOut {
  EstimateReport report;
  CMat w_hat;  // structured reconstruction of the filtered channel
};

// Structured polish of the symbol/subcarrier readout. Each target's grid
// signature is an exact 2-D tone, so with the slab couplings held the tones
// can be re-fit one target at a time on the deflated grid with the exact
// weighted 2-D ML fit; couplings are re-solved between rounds. This escapes
// the stalls an unstructured trilinear fit is prone to when the weight grid
// masks rows and the tone columns are nearly parallel, and pools the whole
// grid into each tone estimate. Tones enter and leave in target order.
struct GridTones {
  RVec omega_m;   // per-target symbol-axis frequency
  RVec omega_q;   // per-target subcarrier-axis frequency
  CMat coupling;  // slabs x targets
};

[[nodiscard]] inline GridTones refine_grid_tones(const Tensor3& f,
                                                 const RMat& w23,
                                                 const RVec& omega_m0,
                                                 const RVec& omega_q0,
                                                 double pinv_rcond = 1e-10,
                                                 int rounds = 4) {
  const Eigen::Index s_n = f.dim1(), m_n = f.dim2(), q_n = f.dim3();
  const Eigen::Index r_n = omega_m0.size();
  if (omega_q0.size() != r_n)
    throw std::invalid_argument("refine_grid_tones: tone lengths must match");
  if (w23.rows() != m_n || w23.cols() != q_n)
    throw std::invalid_argument("refine_grid_tones: weight grid must match");

  GridTones out;
  out.omega_m = omega_m0;
  out.omega_q = omega_q0;
  const CMat u1 = unfold(f, 1);  // s_n x (m_n * q_n), symbol index fast
  RVec sw1(m_n * q_n);
  for (Eigen::Index q = 0; q < q_n; ++q)
    for (Eigen::Index m = 0; m < m_n; ++m)
      sw1(q * m_n + m) = std::sqrt(w23(m, q));

  const auto steering = [&]() {
    CMat s(m_n * q_n, r_n);
    for (Eigen::Index k = 0; k < r_n; ++k)
      for (Eigen::Index q = 0; q < q_n; ++q)
        for (Eigen::Index m = 0; m < m_n; ++m)
          s(q * m_n + m, k) =
              std::polar(1.0, out.omega_m(k) * static_cast<double>(m) +
                                  out.omega_q(k) * static_cast<double>(q));
    return s;
  };

  for (int round = 0; round < rounds; ++round) {
    const CMat s = steering();
    out.coupling = detail::ls_factor(CMat(u1 * sw1.asDiagonal()),
                                     CMat(sw1.asDiagonal() * s), pinv_rcond,
                                     nullptr);
    double moved = 0.0;
    for (Eigen::Index k = 0; k < r_n; ++k) {
      // Deflate the other targets, collapse the slabs onto target k's
      // coupling column, and re-fit its tone on the weighted grid.
      CMat resid = u1;
      for (Eigen::Index o = 0; o < r_n; ++o)
        if (o != k) resid -= out.coupling.col(o) * s.col(o).transpose();
      const CVec g_k = resid.transpose() * out.coupling.col(k).conjugate();
      const Eigen::Map<const CMat> grid(g_k.data(), m_n, q_n);
      const Tone2dEstimate tone = tone2d_ml(grid, w23);
      moved = std::max({moved, std::abs(tone.omega_row - out.omega_m(k)),
                        std::abs(tone.omega_col - out.omega_q(k))});
      out.omega_m(k) = tone.omega_row;
      out.omega_q(k) = tone.omega_col;
    }
    if (moved < 1e-12) break;
  }
  out.coupling = detail::ls_factor(CMat(u1 * sw1.asDiagonal()),
                                   CMat(sw1.asDiagonal() * steering()),
                                   pinv_rcond, nullptr);
  return out;
}

// Planar-array tone in the ura_steering phase convention, from raw
// frequencies (which may sit outside the invertible angle range
// mid-iteration).
[[nodiscard]] inline CVec ura_tone(int ny, int nz, double mu, double psi) {
  CVec v(static_cast<Eigen::Index>(ny) * nz);
  for (int iy = 0; iy < ny; ++iy)
    for (int iz = 0; iz < nz; ++iz)
      v(static_cast<Eigen::Index>(iy) * nz + iz) =
          std::polar(1.0, -(iy * mu + iz * psi));
  return v;
}

// Symbol/subcarrier grid tone matching the fold layout p = q*M + m.
[[nodiscard]] inline CVec grid_tone(int m_n, int q_n, double omega_m,
                                    double omega_q) {
  CVec v(static_cast<Eigen::Index>(m_n) * q_n);
  for (int q = 0; q < q_n; ++q)
    for (int m = 0; m < m_n; ++m)
      v(static_cast<Eigen::Index>(q) * m_n + m) =
          std::polar(1.0, omega_m * m + omega_q * q);
  return v;
}

// Structured polish of the two planar-array readouts. Each target's slab
// signature is the outer product of two array tones, so with the slab
// couplings held each pair is re-fit on the deflated slab stack by
// alternating exact 2-D tone fits across the two apertures; couplings are
// re-solved between rounds. Pools every element of both arrays into each
// estimate instead of reading one factor column at a time. Pairs enter and
// leave in target order.
struct UraTones {
  RVec mu_b;      // per-target receive-array azimuthal frequency
  RVec psi_b;     // per-target receive-array elevation frequency
  RVec mu_c;      // per-target departure-array azimuthal frequency
  RVec psi_c;     // per-target departure-array elevation frequency
  CMat coupling;  // slabs x targets
};

[[nodiscard]] inline UraTones refine_ura_pairs(const Tensor3& g, int b_ny,
                                               int b_nz, int c_ny, int c_nz,
                                               const CMat& b0, const CMat& c0,
                                               double pinv_rcond = 1e-10,
                                               int rounds = 4) {
  const Eigen::Index l_n = g.dim2(), n_n = g.dim3();
  if (l_n != static_cast<Eigen::Index>(b_ny) * b_nz ||
      n_n != static_cast<Eigen::Index>(c_ny) * c_nz)
    throw std::invalid_argument("refine_ura_pairs: array sizes must match");
  if (b0.rows() != l_n || c0.rows() != n_n || b0.cols() != c0.cols())
    throw std::invalid_argument("refine_ura_pairs: factor sizes must match");
  const Eigen::Index r_n = b0.cols();

  UraTones out;
  out.mu_b = RVec(r_n);
  out.psi_b = RVec(r_n);
  out.mu_c = RVec(r_n);
  out.psi_c = RVec(r_n);
  for (Eigen::Index k = 0; k < r_n; ++k) {
    const auto fb = ura_freqs(b0.col(k), b_ny, b_nz);
    const auto fc = ura_freqs(c0.col(k), c_ny, c_nz);
    out.mu_b(k) = fb[0];
    out.psi_b(k) = fb[1];
    out.mu_c(k) = fc[0];
    out.psi_c(k) = fc[1];
  }

  const CMat u1 = unfold(g, 1);  // slabs x (l_n * n_n), receive index fast
  const RMat wb = RMat::Ones(b_nz, b_ny);
  const RMat wc = RMat::Ones(c_nz, c_ny);
  const auto& tone_vec = ura_tone;

  const auto steering = [&]() {
    CMat s(l_n * n_n, r_n);
    for (Eigen::Index k = 0; k < r_n; ++k)
      s.col(k) = kron(tone_vec(c_ny, c_nz, out.mu_c(k), out.psi_c(k)),
                      tone_vec(b_ny, b_nz, out.mu_b(k), out.psi_b(k)));
    return s;
  };

  for (int round = 0; round < rounds; ++round) {
    const CMat s = steering();
    out.coupling = detail::ls_factor(u1, s, pinv_rcond, nullptr);
    double moved = 0.0;
    for (Eigen::Index k = 0; k < r_n; ++k) {
      // Deflate the other targets, collapse the slabs onto target k's
      // coupling column, and alternate the two aperture fits on the
      // collapsed receive x departure grid.
      CMat resid = u1;
      for (Eigen::Index o = 0; o < r_n; ++o)
        if (o != k) resid -= out.coupling.col(o) * s.col(o).transpose();
      const CVec g_k = resid.transpose() * out.coupling.col(k).conjugate();
      const Eigen::Map<const CMat> grid(g_k.data(), l_n, n_n);
      for (int it = 0; it < 2; ++it) {
        const CVec c_fix = tone_vec(c_ny, c_nz, out.mu_c(k), out.psi_c(k));
        const CVec b_raw = grid * c_fix.conjugate();
        const Tone2dEstimate tb =
            tone2d_ml(Eigen::Map<const CMat>(b_raw.data(), b_nz, b_ny), wb);
        moved = std::max({moved, std::abs(-tb.omega_col - out.mu_b(k)),
                          std::abs(-tb.omega_row - out.psi_b(k))});
        out.mu_b(k) = -tb.omega_col;
        out.psi_b(k) = -tb.omega_row;
        const CVec b_fix = tone_vec(b_ny, b_nz, out.mu_b(k), out.psi_b(k));
        const CVec c_raw = grid.transpose() * b_fix.conjugate();
        const Tone2dEstimate tc =
            tone2d_ml(Eigen::Map<const CMat>(c_raw.data(), c_nz, c_ny), wc);
        moved = std::max({moved, std::abs(-tc.omega_col - out.mu_c(k)),
                          std::abs(-tc.omega_row - out.psi_c(k))});
        out.mu_c(k) = -tc.omega_col;
        out.psi_c(k) = -tc.omega_row;
      }
    }
    if (moved < 1e-12) break;
  }
  out.coupling = detail::ls_factor(u1, steering(), pinv_rcond, nullptr);
  return out;
}

// Joint polish across the two stages. The rearranged data matrix is a sum of
// K outer products of an angular signature kron(departure tone, receive
// tone) and a pilot-grid signature kron(arrival tone, pilot .* grid tone).
// Holding either side's rebuilt signatures fixed, the other side's
// per-target vectors are a linear LS extract of the full data; each extract
// is followed by exact tone re-fits. The extract stays well posed whenever
// at least one side separates the targets, so near-coincident delay/Doppler
// pairs are resolved through the angular side and near-coincident angle
// pairs through the grid side, which the per-stage fits cannot do on their
// own. Frequencies travel raw; angle inversion is the caller's problem.
struct CrossTones {
  RVec omega_m;  // grid symbol-axis tones, target order
  RVec omega_q;  // grid subcarrier-axis tones, target order
  RVec mu_b, psi_b;  // receive-array tones
  RVec mu_c, psi_c;  // departure-array tones
};

[[nodiscard]] inline CrossTones refine_cross_stage(
    const CMat& r, const CVec& xa, const ScenarioConfig& cfg, const CVec& b_rx,
    CrossTones t, double pinv_rcond = 1e-10, int rounds = 12) {
  const int l_sr = cfg.l_sr(), n = cfg.n(), mq = cfg.mq();
  const int m_n = cfg.n_symbols, q_n = cfg.n_subcarriers;
  const Eigen::Index k = t.omega_m.size();
  if (r.rows() != static_cast<Eigen::Index>(l_sr) * n ||
      r.cols() != static_cast<Eigen::Index>(mq) * n)
    throw std::invalid_argument(
        "refine_cross_stage: rearranged data must be (L_SR N) x (MQ N)");
  if (xa.size() != mq || b_rx.size() != n)
    throw std::invalid_argument("refine_cross_stage: signature sizes");

  const RMat wb = RMat::Ones(cfg.l_sr_z, cfg.l_sr_y);
  const RMat wc = RMat::Ones(cfg.n_z, cfg.n_y);
  const RMat wg = RMat::Ones(m_n, q_n);
  const CMat rt = r.transpose();

  // Data residual of the rank-K model r ~ sum_k gain_k g_k j_k^T at a tone
  // set, with the gains solved in closed form. The Gram matrix of the
  // vectorized outer products factors into elementwise products of the two
  // sides' Grams, so this never forms the big design matrix.
  const auto model_residual = [&](const CrossTones& s) {
    CMat gs(static_cast<Eigen::Index>(l_sr) * n, k);
    CMat js(static_cast<Eigen::Index>(mq) * n, k);
    for (Eigen::Index c = 0; c < k; ++c) {
      gs.col(c) = kron(ura_tone(cfg.n_y, cfg.n_z, s.mu_c(c), s.psi_c(c)),
                       ura_tone(cfg.l_sr_y, cfg.l_sr_z, s.mu_b(c), s.psi_b(c)));
      js.col(c) = kron(
          b_rx, CVec(xa.cwiseProduct(
                    grid_tone(m_n, q_n, s.omega_m(c), s.omega_q(c)))));
    }
    const CMat gram =
        (gs.adjoint() * gs).cwiseProduct(js.adjoint() * js);
    CVec rhs(k);
    for (Eigen::Index c = 0; c < k; ++c)
      rhs(c) = gs.col(c).adjoint() * (r * js.col(c).conjugate());
    const CVec gains = gram.completeOrthogonalDecomposition().solve(rhs);
    const double fit = std::real((gains.adjoint() * gram * gains)(0, 0)) -
                       2.0 * std::real((gains.adjoint() * rhs)(0));
    return r.squaredNorm() + fit;
  };

  CrossTones best = t;
  double best_resid = model_residual(t);

  // Two alternation variants: one carries the incoming angular pairs through
  // the rounds (right when the per-stage fits were sound but the grid tones
  // were not), one re-seeds each pair from its extract's dominant rank-1
  // SVD (the escape when the incoming pairs are degenerate, e.g. two targets
  // initialized onto the same tones). Neither dominates; the best tone set
  // by data residual wins, so the polish can only improve its start.
  for (int svd_seed = 0; svd_seed < 2; ++svd_seed) {
    CrossTones cur = t;
    for (int round = 0; round < rounds; ++round) {
      const CrossTones prev = cur;
      // Angular side against the grid side.
      CMat jk(static_cast<Eigen::Index>(mq) * n, k);
      for (Eigen::Index c = 0; c < k; ++c)
        jk.col(c) = kron(
            b_rx, CVec(xa.cwiseProduct(
                      grid_tone(m_n, q_n, cur.omega_m(c), cur.omega_q(c)))));
      const CMat gk = detail::ls_factor(r, jk, pinv_rcond, nullptr);
      for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Map<const CMat> gm(gk.col(c).data(), l_sr, n);
        if (svd_seed != 0) {
          Eigen::BDCSVD<CMat> svd(gm,
                                  Eigen::ComputeThinU | Eigen::ComputeThinV);
          const CVec u = svd.matrixU().col(0);
          const CVec v = svd.matrixV().col(0).conjugate();
          const Tone2dEstimate tb0 = tone2d_ml(
              Eigen::Map<const CMat>(u.data(), cfg.l_sr_z, cfg.l_sr_y), wb);
          cur.mu_b(c) = -tb0.omega_col;
          cur.psi_b(c) = -tb0.omega_row;
          const Tone2dEstimate tc0 = tone2d_ml(
              Eigen::Map<const CMat>(v.data(), cfg.n_z, cfg.n_y), wc);
          cur.mu_c(c) = -tc0.omega_col;
          cur.psi_c(c) = -tc0.omega_row;
        }
        for (int it = 0; it < 2; ++it) {
          const CVec c_fix =
              ura_tone(cfg.n_y, cfg.n_z, cur.mu_c(c), cur.psi_c(c));
          const CVec b_raw = gm * c_fix.conjugate();
          const Tone2dEstimate tb = tone2d_ml(
              Eigen::Map<const CMat>(b_raw.data(), cfg.l_sr_z, cfg.l_sr_y),
              wb);
          cur.mu_b(c) = -tb.omega_col;
          cur.psi_b(c) = -tb.omega_row;
          const CVec b_fix =
              ura_tone(cfg.l_sr_y, cfg.l_sr_z, cur.mu_b(c), cur.psi_b(c));
          const CVec c_raw = gm.transpose() * b_fix.conjugate();
          const Tone2dEstimate tc = tone2d_ml(
              Eigen::Map<const CMat>(c_raw.data(), cfg.n_z, cfg.n_y), wc);
          cur.mu_c(c) = -tc.omega_col;
          cur.psi_c(c) = -tc.omega_row;
        }
      }

      // Grid side against the angular side. The pilot factor stays inside
      // the matched filter, so faded cells contribute nothing instead of
      // noise.
      CMat ga(static_cast<Eigen::Index>(l_sr) * n, k);
      for (Eigen::Index c = 0; c < k; ++c)
        ga.col(c) =
            kron(ura_tone(cfg.n_y, cfg.n_z, cur.mu_c(c), cur.psi_c(c)),
                 ura_tone(cfg.l_sr_y, cfg.l_sr_z, cur.mu_b(c), cur.psi_b(c)));
      const CMat jj = detail::ls_factor(rt, ga, pinv_rcond, nullptr);
      for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Map<const CMat> fm(jj.col(c).data(), mq, n);
        const CVec z =
            xa.conjugate().cwiseProduct(CVec(fm * b_rx.conjugate()));
        const Tone2dEstimate tg =
            tone2d_ml(Eigen::Map<const CMat>(z.data(), m_n, q_n), wg);
        cur.omega_m(c) = tg.omega_row;
        cur.omega_q(c) = tg.omega_col;
      }

      const double resid = model_residual(cur);
      if (resid < best_resid) {
        best_resid = resid;
        best = cur;
      }
      const double moved = (cur.omega_m - prev.omega_m).cwiseAbs().sum() +
                           (cur.omega_q - prev.omega_q).cwiseAbs().sum() +
                           (cur.mu_b - prev.mu_b).cwiseAbs().sum() +
                           (cur.psi_b - prev.psi_b).cwiseAbs().sum() +
                           (cur.mu_c - prev.mu_c).cwiseAbs().sum() +
                           (cur.psi_c - prev.psi_c).cwiseAbs().sum();
      if (moved < 1e-12) break;
    }
  }
  return best;
}

// Final-readout angle inversion. The elevation frequency is observable only
// mod 2pi and scenes sample elevations in the upper quarter-space, so a psi
// estimate that wrapped past -pi is folded back to the positive side before
// inverting; the azimuth ratio is projected onto the invertible disc instead
// of rejected, which is the boundary ML choice when noise pushes an estimate
// past the manifold edge near endfire.
[[nodiscard]] inline AngleEstimate invert_ura_folded(double mu, double psi) {
  if (psi < -kPi / 2.0) psi += 2.0 * kPi;
  psi = std::clamp(psi, -kPi, kPi);
  AngleEstimate est;
  est.mu = mu;
  est.psi = psi;
  est.phi = std::acos(std::clamp(psi / kPi, -1.0, 1.0));
  const double denom = kPi * std::max(std::sin(est.phi), 1e-12);
  est.theta = std::asin(std::clamp(mu / denom, -1.0, 1.0));
  return est;
}

// Full two-stage pipeline for the fully connected mode: trilinear fit of the
// receive-side component tensor, nested fit of the transmit-side tensor,
// per-column frequency readout, cross-stage pairing through the coupling
// factors, manifold rebuild, and the closed-form gain solve.
[[nodiscard]] inline PipelineOut tendae_bd(const ScenarioConfig& cfg,
                                           const KsaFactors& ks, const CMat& x,
                                           const CVec& a_st, const CMat& y_filt,
                                           AlsOptions::Init angular_init,
                                           int als_max_iter, double als_tol,
                                           std::uint64_t seed,
                                           std::vector<std::vector<double>>*
                                               histories) {
  const int k = cfg.n_targets;
  const double ts = cfg.symbol_time_s();

  AlsOptions aopt;
  aopt.max_iter = als_max_iter;
  aopt.tol = als_tol;
  aopt.init = angular_init;
  aopt.seed = derive_seed(seed, 10);
  const AlsResult ang = fit_angular(ks.g_tensor, k, aopt);

  AlsOptions nopt = aopt;
  nopt.init = AlsOptions::Init::gevd;  // robust to correlated Doppler columns
  nopt.seed = derive_seed(seed, 11);
  const NestedResult nest =
      fit_nested(ks.j_tensor, x, cfg.n_symbols, cfg.n_subcarriers, k, nopt,
                 &a_st);
  if (histories != nullptr) {
    histories->push_back(ang.residual_history);
    histories->push_back(nest.outer.residual_history);
    histories->push_back(nest.inner.residual_history);
  }

  // Delay/Doppler from the inner factor columns; target order of the report
  // follows the inner fit. Factor rows inherit the pilot-projection weights
  // of the pinned refit (see fit_nested), so the readout uses the per-row
  // weight masses and ignores rows the fade masked.
  const CVec xa = x.transpose() * a_st;
  const RVec xa2 = xa.cwiseAbs2();
  const Eigen::Map<const RMat> w23(xa2.data(), cfg.n_symbols,
                                   cfg.n_subcarriers);
  const RVec w_symbol = w23.rowwise().sum();
  const RVec w_subcarrier = w23.colwise().sum().transpose();

  PipelineOut out;
  out.report.tau_s = RVec(k);
  out.report.nu_hz = RVec(k);
  out.report.phi_sr = RVec(k);
  out.report.theta_sr = RVec(k);
  out.report.phi_ris_d = RVec(k);
  out.report.theta_ris_d = RVec(k);
  RVec omega_m(k), omega_q(k);
  for (int c = 0; c < k; ++c) {
    omega_m(c) = tone_omega_ml(nest.inner.b.col(c), w_symbol);
    omega_q(c) = tone_omega_ml(nest.inner.c.col(c), w_subcarrier);
  }
  const GridTones tones =
      refine_grid_tones(nest.inner_input, w23, omega_m, omega_q);

  const UraTones ura = refine_ura_pairs(ks.g_tensor, cfg.l_sr_y, cfg.l_sr_z,
                                        cfg.n_y, cfg.n_z, ang.b, ang.c);
  const std::vector<int> s1 =
      assign_columns(CMat(ura.coupling.transpose() * tones.coupling));

  // Joint cross-stage polish on the rearranged data, with the angular pairs
  // aligned to the grid-tone target order. No angle inversion happens until
  // the refined frequencies are final.
  const auto arrf = ura_freqs(nest.h_left, cfg.n_y, cfg.n_z);
  CrossTones ct;
  ct.omega_m = tones.omega_m;
  ct.omega_q = tones.omega_q;
  ct.mu_b = RVec(k);
  ct.psi_b = RVec(k);
  ct.mu_c = RVec(k);
  ct.psi_c = RVec(k);
  for (int c = 0; c < k; ++c) {
    const int r = s1[static_cast<std::size_t>(c)];
    ct.mu_b(c) = ura.mu_b(r);
    ct.psi_b(c) = ura.psi_b(r);
    ct.mu_c(c) = ura.mu_c(r);
    ct.psi_c(c) = ura.psi_c(r);
  }
  const CMat rr = rearrange(y_filt, cfg.mq(), cfg.n(), cfg.l_sr(), cfg.n());
  ct = refine_cross_stage(rr, xa, cfg,
                          ura_tone(cfg.n_y, cfg.n_z, arrf[0], arrf[1]), ct);

  for (int c = 0; c < k; ++c) {
    out.report.nu_hz(c) = ct.omega_m(c) / (2.0 * kPi * ts);
    out.report.tau_s(c) = -ct.omega_q(c) / (2.0 * kPi * cfg.delta_f_hz);
    const AngleEstimate rx = invert_ura_folded(ct.mu_b(c), ct.psi_b(c));
    const AngleEstimate dep = invert_ura_folded(ct.mu_c(c), ct.psi_c(c));
    out.report.phi_sr(c) = rx.phi;
    out.report.theta_sr(c) = rx.theta;
    out.report.phi_ris_d(c) = dep.phi;
    out.report.theta_ris_d(c) = dep.theta;
  }
  const AngleEstimate arr = invert_ura_folded(arrf[0], arrf[1]);
  out.report.phi_ris_a = arr.phi;
  out.report.theta_ris_a = arr.theta;
  out.report.has_ris_arrival = true;
  out.report.has_ris_departure = true;

  // Rebuild exact signatures at the estimates and solve the gains.
  const CMat a_sr_hat = refine_manifold(out.report.phi_sr, out.report.theta_sr,
                                        cfg.l_sr_y, cfg.l_sr_z);
  const CMat b_tx_hat = refine_manifold(out.report.phi_ris_d,
                                        out.report.theta_ris_d, cfg.n_y,
                                        cfg.n_z);
  const CVec b_rx_hat = ura_steering(cfg.n_y, cfg.n_z, arr.phi, arr.theta);
  CMat c_hat(cfg.n_subcarriers, k), d_hat(cfg.n_symbols, k);
  for (int c = 0; c < k; ++c) {
    c_hat.col(c) = delay_steering(cfg.n_subcarriers, cfg.delta_f_hz,
                                  out.report.tau_s(c));
    d_hat.col(c) = doppler_steering(cfg.n_symbols, ts, out.report.nu_hz(c));
  }
  const CMat h_hat = b_rx_hat * a_st.transpose();
  out.report.alpha =
      estimate_gains(y_filt, a_sr_hat, b_tx_hat, h_hat, x, c_hat, d_hat);

  const CMat hx = h_hat * x;
  std::vector<CMat> g_hat, jt_hat;
  for (int c = 0; c < k; ++c) {
    g_hat.emplace_back(out.report.alpha(c) * a_sr_hat.col(c) *
                       b_tx_hat.col(c).transpose());
    const CVec cd = kron(CVec(c_hat.col(c)), CVec(d_hat.col(c)));
    jt_hat.emplace_back(CMat(hx * cd.asDiagonal()).transpose());
  }
  out.w_hat = stack_channel(g_hat, jt_hat, RisMode::bd);
  return out;
}

// Single-stage pipeline for the diagonal mode. The trilinear fit already
// separates targets; the element-axis factor only exposes the product of the
// two surface-side profiles, so no surface angles are reported. The
// pilot-weighted delay-Doppler profile is unweighted by the known transmit
// signature and read out as a rank-one symbol/subcarrier grid. Dividing by
// the pilot projection shapes the cell noise by 1/|(a_st^T x)_p|^2, so the
// grid fit carries the matching weights: a pilot column that fades against
// the transmit signature masks its cell instead of poisoning the readout.
[[nodiscard]] inline PipelineOut tendae_diag(const ScenarioConfig& cfg,
                                             const KsaFactors& ks,
                                             const CMat& x, const CVec& a_st,
                                             const CMat& y_filt,
                                             int als_max_iter, double als_tol,
                                             std::uint64_t seed,
                                             std::vector<std::vector<double>>*
                                                 histories) {
  const int k = cfg.n_targets;
  const int l_sr = cfg.l_sr(), n = cfg.n(), mq = cfg.mq();
  const double ts = cfg.symbol_time_s();

  const CVec xa = x.transpose() * a_st;  // known pilot weighting, length MQ
  const double xa_max = xa.cwiseAbs().maxCoeff();
  const RVec xa2 = xa.cwiseAbs2();
  const Eigen::Map<const RMat> w23(xa2.data(), cfg.n_symbols,
                                   cfg.n_subcarriers);
  const RVec w_symbol = w23.rowwise().sum();
  const RVec w_subcarrier = w23.colwise().sum().transpose();

  PipelineOut out;
  out.report.tau_s = RVec(k);
  out.report.nu_hz = RVec(k);
  out.report.phi_sr = RVec(k);
  out.report.theta_sr = RVec(k);
  out.report.phi_ris_d = RVec::Zero(k);
  out.report.theta_ris_d = RVec::Zero(k);
  out.report.has_ris_arrival = false;
  out.report.has_ris_departure = false;

  CMat w_hat(mq, k), c_comb_hat(n, k);
  for (int c = 0; c < k; ++c) {
    // The component split packs a_sr into the rows and the combined surface
    // profile into the columns of the k-th channel slab.
    Eigen::Map<const CMat> g_k(ks.g.col(c).data(), l_sr, n);
    Eigen::BDCSVD<CMat> svd(g_k, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const CVec a_sig = svd.matrixU().col(0);
    const CVec c_sig = svd.matrixV().col(0).conjugate();

    const auto rxf = ura_freqs(a_sig, cfg.l_sr_y, cfg.l_sr_z);
    const AngleEstimate rx = invert_ura_folded(rxf[0], rxf[1]);
    out.report.phi_sr(c) = rx.phi;
    out.report.theta_sr(c) = rx.theta;

    // Delay-Doppler grid: element (m, q) carries d(m) c(q) after the pilot
    // division; faded cells are zeroed (their weight vanishes anyway).
    CVec cd = ks.j.col(c).head(mq);
    for (int p = 0; p < mq; ++p)
      cd(p) = std::abs(xa(p)) > 1e-12 * xa_max ? cd(p) / xa(p) : cdouble(0, 0);
    const Tensor3 grid = fold(CMat(cd.transpose()), 1, 1, cfg.n_symbols,
                              cfg.n_subcarriers);
    AlsOptions gopt;
    gopt.max_iter = als_max_iter;
    gopt.tol = als_tol;
    gopt.init = AlsOptions::Init::gevd;
    gopt.seed = derive_seed(seed, static_cast<std::uint64_t>(c));
    const AlsResult gfit = als_parafac3_weighted(grid, 1, w23, gopt);
    if (histories != nullptr) histories->push_back(gfit.residual_history);
    RVec omega_m(1), omega_q(1);
    omega_m(0) = tone_omega_ml(gfit.b.col(0), w_symbol);
    omega_q(0) = tone_omega_ml(gfit.c.col(0), w_subcarrier);
    const GridTones tones = refine_grid_tones(grid, w23, omega_m, omega_q);
    out.report.nu_hz(c) = tones.omega_m(0) / (2.0 * kPi * ts);
    out.report.tau_s(c) = -tones.omega_q(0) / (2.0 * kPi * cfg.delta_f_hz);

    // Combined surface profile: a planar signature at the sum frequencies;
    // rebuilt on the exact grid without inverting to angles.
    const auto freqs = ura_freqs(c_sig, cfg.n_y, cfg.n_z);
    for (int iy = 0; iy < cfg.n_y; ++iy)
      for (int iz = 0; iz < cfg.n_z; ++iz)
        c_comb_hat(iy * cfg.n_z + iz, c) =
            std::polar(1.0, -(iy * freqs[0] + iz * freqs[1]));

    const CVec cd_hat =
        kron(delay_steering(cfg.n_subcarriers, cfg.delta_f_hz,
                            out.report.tau_s(c)),
             doppler_steering(cfg.n_symbols, ts, out.report.nu_hz(c)));
    w_hat.col(c) = xa.cwiseProduct(cd_hat);
  }

  const CMat a_sr_hat = refine_manifold(out.report.phi_sr, out.report.theta_sr,
                                        cfg.l_sr_y, cfg.l_sr_z);
  out.report.alpha = estimate_gains_diag(y_filt, a_sr_hat, w_hat, c_comb_hat);

  out.w_hat = CMat::Zero(static_cast<Eigen::Index>(l_sr) * mq, n);
  for (int c = 0; c < k; ++c)
    out.w_hat += out.report.alpha(c) *
                 kron(CVec(w_hat.col(c)), CVec(a_sr_hat.col(c))) *
                 c_comb_hat.col(c).transpose();
  return out;
}

}  // namespace detail

struct EstimatorOutcome {
  bool ok = false;
  std::string error;  // populated when ok is false
  double nmse = std::numeric_limits<double>::quiet_NaN();
  bool has_report = false;
  EstimateReport report;  // per-target parameters (tendae estimators only)
};

struct TrialResult {
  Targets truth;
  double sigma2 = 0;   // per-entry noise variance realized by the SNR lock
  double snr_db = 0;
  std::map<std::string, EstimatorOutcome> estimates;
  // Residual history of every iterative fit executed during the trial, in
  // execution order; monotonicity is an invariant of the exact LS substeps.
  std::vector<std::vector<double>> residual_histories;
};

// One Monte Carlo draw: fresh scene, schedule, and noise, all derived from
// trial_seed, then every requested estimator on the same data. Estimator
// errors are recorded, not propagated; identical inputs give identical
// results.
[[nodiscard]] inline TrialResult run_trial(const ExperimentConfig& exp,
                                           double snr_db,
                                           std::uint64_t trial_seed) {
  exp.validate();
  const ScenarioConfig& cfg = exp.scenario;
  const bool bd = cfg.ris_mode == RisMode::bd;
  const int l_sr = cfg.l_sr(), n = cfg.n(), mq = cfg.mq(), k = cfg.n_targets;
  const double ts = cfg.symbol_time_s();

  Rng rng_targets(derive_seed(trial_seed, 1));
  Rng rng_schedule(derive_seed(trial_seed, 2));
  Rng rng_noise(derive_seed(trial_seed, 3));

  TrialResult res;
  res.snr_db = snr_db;
  res.truth = sample_targets(cfg, rng_targets);
  const Channels ch = build_channels(cfg, res.truth);
  const RisSchedule sch = make_ris_schedule(cfg, rng_schedule);
  const Synthesis syn = synthesize(cfg, ch, sch, snr_db, rng_noise);
  res.sigma2 = syn.sigma2;

  const CMat y_filt = right_filter(syn.y, sch);
  const CMat w_true = detail::effective_channel(ch, cfg.ris_mode);

  // Ground-truth tuples for evaluation-side matching. The diagonal mode
  // reports no surface angles, so those coordinates are neutralized.
  std::vector<TargetParams> truth_params(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto& tp = truth_params[static_cast<std::size_t>(i)];
    tp.tau_s = res.truth.tau_s(i);
    tp.nu_hz = res.truth.nu_hz(i);
    tp.phi_sr = res.truth.phi_sr(i);
    tp.theta_sr = res.truth.theta_sr(i);
    tp.phi_ris_d = bd ? res.truth.phi_ris_d(i) : 0.0;
    tp.theta_ris_d = bd ? res.truth.theta_ris_d(i) : 0.0;
  }

  std::optional<KsaFactors> ks;
  auto component_split = [&]() -> const KsaFactors& {
    if (!ks) {
      if (bd) {
        ks = ksa_rank_k(y_filt, l_sr, n, mq, k);
      } else {
        AlsOptions kopt;
        kopt.max_iter = exp.als_max_iter;
        kopt.tol = exp.als_tol;
        kopt.init = AlsOptions::Init::gevd;
        kopt.seed = derive_seed(trial_seed, 4);
        ks = krsa_rank_k(y_filt, l_sr, mq, n, k, kopt);
        res.residual_histories.push_back(ks->residual_history);
      }
    }
    return *ks;
  };

  for (const auto& name : exp.estimators) {
    EstimatorOutcome out;
    try {
      if (name == "ls") {
        out.nmse = channel_nmse(w_true, y_filt);
      } else if (name == "ksa") {
        const KsaFactors& f = component_split();
        out.nmse = channel_nmse(
            w_true, detail::ksa_channel(f, l_sr, n, mq, cfg.ris_mode));
      } else {  // tendae_als / tendae_hosvd
        const KsaFactors& f = component_split();
        detail::PipelineOut pipe =
            bd ? detail::tendae_bd(cfg, f, ch.x, ch.a_st, y_filt,
                                   name == "tendae_hosvd"
                                       ? AlsOptions::Init::hosvd
                                       : AlsOptions::Init::random,
                                   exp.als_max_iter, exp.als_tol, trial_seed,
                                   &res.residual_histories)
               : detail::tendae_diag(cfg, f, ch.x, ch.a_st, y_filt,
                                     exp.als_max_iter, exp.als_tol,
                                     derive_seed(trial_seed, 12),
                                     &res.residual_histories);
        out.nmse = channel_nmse(w_true, pipe.w_hat);

        std::vector<TargetParams> est_params(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
          auto& ep = est_params[static_cast<std::size_t>(i)];
          ep.tau_s = pipe.report.tau_s(i);
          ep.nu_hz = pipe.report.nu_hz(i);
          ep.phi_sr = pipe.report.phi_sr(i);
          ep.theta_sr = pipe.report.theta_sr(i);
          ep.phi_ris_d = bd ? pipe.report.phi_ris_d(i) : 0.0;
          ep.theta_ris_d = bd ? pipe.report.theta_ris_d(i) : 0.0;
        }
        pipe.report.permutation = match_targets(truth_params, est_params, ts);
        out.report = std::move(pipe.report);
        out.has_report = true;
      }
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
    res.estimates[name] = std::move(out);
  }
  return res;
}

struct MetricRow {
  std::string estimator;
  double snr_db = 0;
  std::string parameter;
  std::string statistic;
  double value = 0;
};

struct MetricReport {
  RisMode mode = RisMode::bd;
  std::vector<MetricRow> rows;
  std::map<std::string, long> failures;  // per estimator, whole sweep
  long trials_per_point = 0;
  double wall_clock_s = 0;
};

namespace detail {

[[nodiscard]] inline std::vector<std::string> rmse_parameters(bool bd) {
  if (bd)
    return {"tau_over_ts",  "nu_ts",        "phi_sr",
            "theta_sr",     "phi_ris_d",    "theta_ris_d",
            "phi_ris_a",    "theta_ris_a",  "alpha"};
  return {"tau_over_ts", "nu_ts", "phi_sr", "theta_sr", "alpha"};
}

// Squared normalized estimation errors of one matched report, accumulated
// per parameter vector (summed over targets, as the RMSE definition needs).
inline void accumulate_errors(const Targets& truth, const EstimateReport& r,
                              double ts, bool bd,
                              std::map<std::string, double>& sq) {
  const int k = static_cast<int>(truth.alpha.size());
  for (int i = 0; i < k; ++i) {
    const int j = r.permutation[static_cast<std::size_t>(i)];
    const double dt = (r.tau_s(i) - truth.tau_s(j)) / ts;
    const double dn = (r.nu_hz(i) - truth.nu_hz(j)) * ts;
    sq["tau_over_ts"] += dt * dt;
    sq["nu_ts"] += dn * dn;
    sq["phi_sr"] += std::pow(r.phi_sr(i) - truth.phi_sr(j), 2);
    sq["theta_sr"] += std::pow(r.theta_sr(i) - truth.theta_sr(j), 2);
    sq["alpha"] += std::norm(r.alpha(i) - truth.alpha(j));
    if (bd) {
      sq["phi_ris_d"] += std::pow(r.phi_ris_d(i) - truth.phi_ris_d(j), 2);
      sq["theta_ris_d"] +=
          std::pow(r.theta_ris_d(i) - truth.theta_ris_d(j), 2);
    }
  }
  if (bd) {
    sq["phi_ris_a"] += std::pow(r.phi_ris_a - truth.phi_ris_a, 2);
    sq["theta_ris_a"] += std::pow(r.theta_ris_a - truth.theta_ris_a, 2);
  }
}

// Squared bound aggregates in the same normalization and target aggregation
// as the RMSE accumulators, so the two column families are comparable.
inline bool accumulate_crlb(const CrlbReport& rep, int k,
                            std::map<std::string, double>& sq, bool bd) {
  std::map<std::string, double> add;
  auto sum_sq = [&](const RVec& v, int offset, int count) {
    double s = 0;
    for (int i = 0; i < count; ++i) s += v(offset + i) * v(offset + i);
    return s;
  };
  add["tau_over_ts"] = sum_sq(rep.bound_normalized, 2 * k, k);
  add["nu_ts"] = sum_sq(rep.bound_normalized, 3 * k, k);
  add["phi_sr"] = sum_sq(rep.bound, 4 * k, k);
  add["theta_sr"] = sum_sq(rep.bound, 5 * k, k);
  add["alpha"] = sum_sq(rep.bound, 0, 2 * k);
  if (bd) {
    add["phi_ris_a"] = std::pow(rep.bound(6 * k), 2);
    add["theta_ris_a"] = std::pow(rep.bound(7 * k + 1), 2);
    add["phi_ris_d"] = sum_sq(rep.bound, 6 * k + 1, k);
    add["theta_ris_d"] = sum_sq(rep.bound, 7 * k + 2, k);
  }
  for (const auto& [key, v] : add)
    if (!std::isfinite(v)) return false;  // unidentifiable draw, skip whole
  for (const auto& [key, v] : add) sq[key] += v;
  return true;
}

}  // namespace detail

// Monte Carlo sweep over the SNR grid. Fresh scene per trial; per-trial
// seeds derive from the master seed, so reruns reproduce every byte. Failed
// trials are excluded from averages and counted per estimator.
[[nodiscard]] inline MetricReport run_sweep(const ExperimentConfig& exp) {
  exp.validate();
  require_identifiable(exp.scenario);
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioConfig& cfg = exp.scenario;
  const bool bd = cfg.ris_mode == RisMode::bd;
  const int k = cfg.n_targets;
  const double ts = cfg.symbol_time_s();
  const std::vector<std::string> params = detail::rmse_parameters(bd);

  MetricReport rep;
  rep.mode = cfg.ris_mode;
  rep.trials_per_point = exp.trials;
  for (const auto& e : exp.estimators) rep.failures[e] = 0;

  for (std::size_t si = 0; si < exp.snr_grid_db.size(); ++si) {
    const double snr = exp.snr_grid_db[si];
    std::map<std::string, double> nmse_sum;
    std::map<std::string, long> ok_count, fail_count;
    std::map<std::string, std::map<std::string, double>> sq;  // estimator -> param
    std::map<std::string, long> report_count;
    std::map<std::string, double> crlb_sq;
    long crlb_count = 0;

    for (int trial = 0; trial < exp.trials; ++trial) {
      const std::uint64_t seed =
          derive_seed(exp.master_seed, static_cast<std::uint64_t>(si),
                      static_cast<std::uint64_t>(trial));
      TrialResult tr;
      try {
        tr = run_trial(exp, snr, seed);
      } catch (const std::exception&) {
        for (const auto& e : exp.estimators) ++fail_count[e];
        continue;
      }
      for (const auto& e : exp.estimators) {
        const EstimatorOutcome& out = tr.estimates.at(e);
        if (!out.ok) {
          ++fail_count[e];
          continue;
        }
        nmse_sum[e] += out.nmse;
        ++ok_count[e];
        if (out.has_report) {
          detail::accumulate_errors(tr.truth, out.report, ts, bd, sq[e]);
          ++report_count[e];
        }
      }
      if (exp.with_crlb && tr.sigma2 > 0.0) {
        Rng rng_schedule(derive_seed(seed, 2));  // the trial's schedule stream
        const RisSchedule sch = make_ris_schedule(cfg, rng_schedule);
        const ParamVector eta = ParamVector::from_targets(tr.truth);
        const CrlbReport bounds =
            crlb(fim(cfg, eta, tr.sigma2, sch, tr.truth.phi_st,
                     tr.truth.theta_st),
                 eta, ts);
        if (detail::accumulate_crlb(bounds, k, crlb_sq, bd)) ++crlb_count;
      }
    }

    for (const auto& e : exp.estimators) {
      if (ok_count[e] > 0)
        rep.rows.push_back(
            {e, snr, "channel", "nmse", nmse_sum[e] / ok_count[e]});
      if (report_count[e] > 0)
        for (const auto& p : params)
          rep.rows.push_back(
              {e, snr, p, "rmse", std::sqrt(sq[e][p] / report_count[e])});
      rep.rows.push_back(
          {e, snr, "all", "trials", static_cast<double>(exp.trials)});
      rep.rows.push_back(
          {e, snr, "all", "failures", static_cast<double>(fail_count[e])});
      rep.failures[e] += fail_count[e];
    }
    if (crlb_count > 0)
      for (const auto& p : params)
        rep.rows.push_back(
            {"crlb", snr, p, "crlb", std::sqrt(crlb_sq[p] / crlb_count)});
  }

  rep.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return rep;
}

struct ArchitectureComparison {
  MetricReport bd;
  MetricReport diagonal;
};

// Paired sweep of the two reflection architectures under common random
// numbers: the same master seed drives the same per-trial target draws in
// both modes, so differences are architectural, not statistical.
[[nodiscard]] inline ArchitectureComparison compare_architectures(
    const ExperimentConfig& exp) {
  ExperimentConfig eb = exp;
  eb.scenario.ris_mode = RisMode::bd;
  ExperimentConfig ed = exp;
  ed.scenario.ris_mode = RisMode::diagonal;
  require_identifiable(eb.scenario);
  require_identifiable(ed.scenario);
  return {run_sweep(eb), run_sweep(ed)};
}

struct ComplexityReport {
  std::string estimator;
  std::vector<std::pair<std::string, double>> stages;
  double total = 0;
};

// Dominant operation counts of each stage as closed forms of the scenario
// dimensions, with the trilinear fits assumed to run als_iter sweeps.
[[nodiscard]] inline ComplexityReport complexity_estimate(
    const ScenarioConfig& cfg, const std::string& estimator,
    int als_iter = 10) {
  if (als_iter < 1)
    throw std::invalid_argument("complexity_estimate: als_iter must be >= 1");
  const double n = cfg.n(), l_sr = cfg.l_sr(), l_st = cfg.l_st();
  const double m = cfg.n_symbols, q = cfg.n_subcarriers, mq = cfg.mq();
  const double k = cfg.n_targets, t = cfg.n_slots, it = als_iter;
  const bool bd = cfg.ris_mode == RisMode::bd;

  ComplexityReport rep;
  rep.estimator = estimator;
  auto add = [&](const std::string& stage, double ops) {
    rep.stages.emplace_back(stage, ops);
    rep.total += ops;
  };

  const auto split_stage = [&] {
    if (bd)
      add("ksa", l_sr * mq * n * n * k);
    else
      add("krsa", l_sr * mq * n * k);
  };

  if (estimator == "ls") {
    add("ls", n * n * n * n * t);
  } else if (estimator == "ksa") {
    split_stage();
  } else if (estimator == "tendae_als" || estimator == "tendae_hosvd") {
    split_stage();
    if (bd) {
      if (estimator == "tendae_hosvd") {
        add("angular_init", l_sr * n * k * (l_sr + n + k));
        add("delay_doppler_init", mq * n * k * (mq + n + k) + 3 * mq * k * k);
      }
      add("angular_als", (l_sr * l_sr * n / k + l_sr + n) * k * k * it +
                             2 * (l_sr + n) * k +
                             (5 * l_sr + 3 * n + 1) * k * k + 6 * k * k * k);
      add("delay_doppler_als",
          ((mq * n + k * k * l_st) * mq + (mq / k + m + q) * k * k * k) * it +
              (3 + 2 * l_st) * n + (m + n + q + 1) * k +
              3 * (m + q) * k * k + 6 * k * k * k);
    }
  } else {
    throw std::invalid_argument("complexity_estimate: unknown estimator \"" +
                                estimator + "\"");
  }
  return rep;
}

}  // namespace tendae
