// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tendae/scenario.hpp"

namespace tendae {

// Deterministic-parameter vector for the noiseless mean of the observation.
// Layout (length 8K+2), offsets in order:
//   alpha_re[K], alpha_im[K], tau[K], nu[K], phi_sr[K], theta_sr[K],
//   phi_ris[K+1], theta_ris[K+1]
// where each angle block of length K+1 holds the shared arrival angle in
// slot 0 followed by the K departure angles. The transmitter departure
// angles are known inputs and deliberately not part of the vector.
struct ParamVector {
  RVec alpha_re, alpha_im, tau_s, nu_hz, phi_sr, theta_sr;
  RVec phi_ris, theta_ris;  // length K+1, arrival first

  [[nodiscard]] static ParamVector from_targets(const Targets& t) {
    const Eigen::Index k = t.alpha.size();
    ParamVector p;
    p.alpha_re = t.alpha.real();
    p.alpha_im = t.alpha.imag();
    p.tau_s = t.tau_s;
    p.nu_hz = t.nu_hz;
    p.phi_sr = t.phi_sr;
    p.theta_sr = t.theta_sr;
    p.phi_ris = RVec(k + 1);
    p.theta_ris = RVec(k + 1);
    p.phi_ris(0) = t.phi_ris_a;
    p.theta_ris(0) = t.theta_ris_a;
    p.phi_ris.tail(k) = t.phi_ris_d;
    p.theta_ris.tail(k) = t.theta_ris_d;
    return p;
  }

  [[nodiscard]] int targets() const {
    return static_cast<int>(alpha_re.size());
  }
  [[nodiscard]] int size() const { return 8 * targets() + 2; }

  void validate() const {
    const Eigen::Index k = alpha_re.size();
    if (k < 1 || alpha_im.size() != k || tau_s.size() != k ||
        nu_hz.size() != k || phi_sr.size() != k || theta_sr.size() != k ||
        phi_ris.size() != k + 1 || theta_ris.size() != k + 1)
      throw std::invalid_argument("ParamVector: inconsistent block sizes");
  }

  // Flat accessors in the canonical ordering; shared by the FIM assembly,
  // finite-difference checks, and report columns.
  [[nodiscard]] double get(int i) const {
    const int k = targets();
    if (i < 0 || i >= size())
      throw std::out_of_range("ParamVector: index out of range");
    if (i < k) return alpha_re(i);
    if (i < 2 * k) return alpha_im(i - k);
    if (i < 3 * k) return tau_s(i - 2 * k);
    if (i < 4 * k) return nu_hz(i - 3 * k);
    if (i < 5 * k) return phi_sr(i - 4 * k);
    if (i < 6 * k) return theta_sr(i - 5 * k);
    if (i < 7 * k + 1) return phi_ris(i - 6 * k);
    return theta_ris(i - 7 * k - 1);
  }

  void set(int i, double v) {
    const int k = targets();
    if (i < 0 || i >= size())
      throw std::out_of_range("ParamVector: index out of range");
    if (i < k)
      alpha_re(i) = v;
    else if (i < 2 * k)
      alpha_im(i - k) = v;
    else if (i < 3 * k)
      tau_s(i - 2 * k) = v;
    else if (i < 4 * k)
      nu_hz(i - 3 * k) = v;
    else if (i < 5 * k)
      phi_sr(i - 4 * k) = v;
    else if (i < 6 * k)
      theta_sr(i - 5 * k) = v;
    else if (i < 7 * k + 1)
      phi_ris(i - 6 * k) = v;
    else
      theta_ris(i - 7 * k - 1) = v;
  }

  [[nodiscard]] std::string name(int i) const {
    const int k = targets();
    if (i < 0 || i >= size())
      throw std::out_of_range("ParamVector: index out of range");
    auto tag = [](const std::string& base, int idx) {
      return base + "[" + std::to_string(idx) + "]";
    };
    if (i < k) return tag("alpha_re", i);
    if (i < 2 * k) return tag("alpha_im", i - k);
    if (i < 3 * k) return tag("tau", i - 2 * k);
    if (i < 4 * k) return tag("nu", i - 3 * k);
    if (i < 5 * k) return tag("phi_sr", i - 4 * k);
    if (i < 6 * k) return tag("theta_sr", i - 5 * k);
    if (i < 7 * k + 1) {
      const int j = i - 6 * k;
      return j == 0 ? "phi_ris_a" : tag("phi_ris_d", j - 1);
    }
    const int j = i - 7 * k - 1;
    return j == 0 ? "theta_ris_a" : tag("theta_ris_d", j - 1);
  }

  // Natural unit of each parameter, used to size finite-difference steps
  // and to normalize reported bounds (delay in symbols, Doppler-symbol
  // product dimensionless).
  [[nodiscard]] double char_scale(int i, double symbol_time_s) const {
    const int k = targets();
    if (i >= 2 * k && i < 3 * k) return symbol_time_s;
    if (i >= 3 * k && i < 4 * k) return 1.0 / symbol_time_s;
    return 1.0;
  }

  // Scene truth with the known transmitter departure angles supplied by the
  // caller; geometry bookkeeping fields stay zero (unused by the channel
  // build).
  [[nodiscard]] Targets to_targets(double phi_st, double theta_st) const {
    validate();
    const int k = targets();
    Targets t;
    t.alpha = CVec(k);
    for (int i = 0; i < k; ++i) t.alpha(i) = cdouble(alpha_re(i), alpha_im(i));
    t.tau_s = tau_s;
    t.nu_hz = nu_hz;
    t.phi_sr = phi_sr;
    t.theta_sr = theta_sr;
    t.phi_ris_d = phi_ris.tail(k);
    t.theta_ris_d = theta_ris.tail(k);
    t.phi_ris_a = phi_ris(0);
    t.theta_ris_a = theta_ris(0);
    t.phi_st = phi_st;
    t.theta_st = theta_st;
    t.dist_ris_tgt_m = t.dist_tgt_sr_m = t.velocity_mps = RVec::Zero(k);
    return t;
  }
};

enum class AngleAxis { phi, theta };

// Elementwise analytic derivative of ura_steering. With element
// a(n) = exp(-j pi (iy sin(phi) sin(theta) + iz cos(phi))), n = iy*nz + iz:
//   d/dphi   multiplies by -j pi (iy cos(phi) sin(theta) - iz sin(phi))
//   d/dtheta multiplies by -j pi  iy sin(phi) cos(theta)
[[nodiscard]] inline CVec d_steering(int ny, int nz, double phi, double theta,
                                     AngleAxis wrt) {
  const CVec a = ura_steering(ny, nz, phi, theta);
  CVec out(a.size());
  for (int iy = 0; iy < ny; ++iy)
    for (int iz = 0; iz < nz; ++iz) {
      const double rate =
          wrt == AngleAxis::phi
              ? kPi * (iy * std::cos(phi) * std::sin(theta) -
                       iz * std::sin(phi))
              : kPi * iy * std::sin(phi) * std::cos(theta);
      out(iy * nz + iz) = cdouble(0.0, -rate) * a(iy * nz + iz);
    }
  return out;
}

namespace detail {

// One additive piece of the mean signal: column t of the contribution is
// vec(g * s_t * j) with s_t the t-th reflection pattern.
struct SignalTerm {
  CMat g;  // L_SR x N
  CMat j;  // N x MQ
};

[[nodiscard]] inline std::vector<SignalTerm> signal_terms(
    const ScenarioConfig& cfg, const ParamVector& eta, double phi_st,
    double theta_st) {
  const Channels ch = build_channels(cfg, eta.to_targets(phi_st, theta_st));
  std::vector<SignalTerm> terms(static_cast<std::size_t>(cfg.n_targets));
  for (int k = 0; k < cfg.n_targets; ++k)
    terms[static_cast<std::size_t>(k)] = {ch.g[static_cast<std::size_t>(k)],
                                          ch.j[static_cast<std::size_t>(k)]};
  return terms;
}

// Analytic derivative of the mean with respect to eta entry `index`, as a
// term list. Per-target parameters touch only their own term; the shared
// arrival angle touches every term through the transmitter-surface channel.
[[nodiscard]] inline std::vector<SignalTerm> derivative_terms(
    const ScenarioConfig& cfg, const ParamVector& eta, int index,
    double phi_st, double theta_st) {
  eta.validate();
  const int k_count = eta.targets();
  if (index < 0 || index >= eta.size())
    throw std::out_of_range("derivative_terms: index out of range");
  if (cfg.n_targets != k_count)
    throw std::invalid_argument("derivative_terms: config target mismatch");
  const Channels ch = build_channels(cfg, eta.to_targets(phi_st, theta_st));

  auto cd = [&](int k) {
    return CVec(kron(CVec(ch.c_tau.col(k)), CVec(ch.d_nu.col(k))));
  };
  auto unit_g = [&](int k) {
    return CMat(ch.a_sr.col(k) * ch.b_tx.col(k).transpose());
  };
  const cdouble jay(0.0, 1.0);

  const int block = index / k_count;  // valid for the six K-sized blocks
  const int k = index % k_count;
  switch (block < 6 ? block : 6) {
    case 0:  // alpha_re
      return {{unit_g(k), ch.j[static_cast<std::size_t>(k)]}};
    case 1:  // alpha_im
      return {{CMat(jay * unit_g(k)), ch.j[static_cast<std::size_t>(k)]}};
    case 2: {  // tau: subcarrier ramp -j 2 pi q delta_f on the delay part
      CVec dc(cfg.n_subcarriers);
      for (int q = 0; q < cfg.n_subcarriers; ++q)
        dc(q) = -jay * (2.0 * kPi * q * cfg.delta_f_hz) * ch.c_tau(q, k);
      const CVec dcd = kron(dc, CVec(ch.d_nu.col(k)));
      return {{ch.g[static_cast<std::size_t>(k)],
               CMat(ch.h * ch.x * dcd.asDiagonal())}};
    }
    case 3: {  // nu: symbol ramp +j 2 pi m t_s on the Doppler part
      CVec dd(cfg.n_symbols);
      for (int m = 0; m < cfg.n_symbols; ++m)
        dd(m) = jay * (2.0 * kPi * m * cfg.symbol_time_s()) * ch.d_nu(m, k);
      const CVec dcd = kron(CVec(ch.c_tau.col(k)), dd);
      return {{ch.g[static_cast<std::size_t>(k)],
               CMat(ch.h * ch.x * dcd.asDiagonal())}};
    }
    case 4: {  // phi_sr
      const CVec da = d_steering(cfg.l_sr_y, cfg.l_sr_z, eta.phi_sr(k),
                                 eta.theta_sr(k), AngleAxis::phi);
      const cdouble alpha(eta.alpha_re(k), eta.alpha_im(k));
      return {{CMat(alpha * da * ch.b_tx.col(k).transpose()),
               ch.j[static_cast<std::size_t>(k)]}};
    }
    case 5: {  // theta_sr
      const CVec da = d_steering(cfg.l_sr_y, cfg.l_sr_z, eta.phi_sr(k),
                                 eta.theta_sr(k), AngleAxis::theta);
      const cdouble alpha(eta.alpha_re(k), eta.alpha_im(k));
      return {{CMat(alpha * da * ch.b_tx.col(k).transpose()),
               ch.j[static_cast<std::size_t>(k)]}};
    }
    default:
      break;
  }

  // Surface angle blocks of length K+1, arrival slot first.
  const int rest = index - 6 * k_count;
  const AngleAxis axis = rest < k_count + 1 ? AngleAxis::phi : AngleAxis::theta;
  const int slot = rest < k_count + 1 ? rest : rest - (k_count + 1);
  if (slot == 0) {  // shared arrival angle enters every term through h
    const CVec db = d_steering(cfg.n_y, cfg.n_z, eta.phi_ris(0),
                               eta.theta_ris(0), axis);
    const CMat dh = db * ch.a_st.transpose();
    std::vector<SignalTerm> terms;
    terms.reserve(static_cast<std::size_t>(k_count));
    for (int t = 0; t < k_count; ++t)
      terms.push_back({ch.g[static_cast<std::size_t>(t)],
                       CMat(dh * ch.x * cd(t).asDiagonal())});
    return terms;
  }
  const int t = slot - 1;  // departure angle of target t
  const CVec db = d_steering(cfg.n_y, cfg.n_z, eta.phi_ris(slot),
                             eta.theta_ris(slot), axis);
  const cdouble alpha(eta.alpha_re(t), eta.alpha_im(t));
  return {{CMat(alpha * ch.a_sr.col(t) * db.transpose()),
           ch.j[static_cast<std::size_t>(t)]}};
}

// Materializes a term list against the reflection schedule.
[[nodiscard]] inline CMat contract(const ScenarioConfig& cfg,
                                   const std::vector<SignalTerm>& terms,
                                   const RisSchedule& sch) {
  const int n = cfg.n(), t_count = static_cast<int>(sch.s.cols());
  const Eigen::Index rows = static_cast<Eigen::Index>(cfg.l_sr()) * cfg.mq();
  CMat out = CMat::Zero(rows, t_count);
  CMat acc(cfg.l_sr(), cfg.mq());
  for (int t = 0; t < t_count; ++t) {
    acc.setZero();
    if (sch.mode == RisMode::bd) {
      Eigen::Map<const CMat> st(sch.s.col(t).data(), n, n);
      for (const auto& term : terms) acc += term.g * st * term.j;
    } else {
      for (const auto& term : terms)
        acc += term.g * sch.s.col(t).asDiagonal() * term.j;
    }
    out.col(t) = Eigen::Map<const CVec>(acc.data(), rows);
  }
  return out;
}

// tr(M_i^H M_j W) where M = sum_r kron(j_r^T, g_r) (bd) or the Khatri-Rao
// stack (diagonal) and W is the schedule Gram. The mixed products collapse
// to N x N factors, so the trace never touches the large signal space.
[[nodiscard]] inline cdouble term_gram(const std::vector<SignalTerm>& a,
                                       const std::vector<SignalTerm>& b,
                                       const CMat& w, RisMode mode) {
  cdouble acc(0.0, 0.0);
  for (const auto& ta : a)
    for (const auto& tb : b) {
      const CMat jj = ta.j.conjugate() * tb.j.transpose();  // N x N
      const CMat gg = ta.g.adjoint() * tb.g;                // N x N
      if (mode == RisMode::bd)
        acc += (kron(jj, gg).cwiseProduct(w.transpose())).sum();
      else
        acc += (jj.cwiseProduct(gg).cwiseProduct(w.transpose())).sum();
    }
  return acc;
}

}  // namespace detail

// Noiseless mean of the observation at the given parameters; identical
// contraction to the scenario synthesis, so it reproduces the noiseless
// observation of the generating scene exactly.
[[nodiscard]] inline CMat mean_signal(const ScenarioConfig& cfg,
                                      const ParamVector& eta,
                                      const RisSchedule& sch, double phi_st,
                                      double theta_st) {
  eta.validate();
  if (cfg.n_targets != eta.targets())
    throw std::invalid_argument("mean_signal: config target mismatch");
  return detail::contract(cfg, detail::signal_terms(cfg, eta, phi_st,
                                                    theta_st),
                          sch);
}

// Analytic partial derivative of the mean with respect to eta entry `index`.
[[nodiscard]] inline CMat d_mean_signal(const ScenarioConfig& cfg,
                                        const ParamVector& eta, int index,
                                        const RisSchedule& sch, double phi_st,
                                        double theta_st) {
  return detail::contract(
      cfg, detail::derivative_terms(cfg, eta, index, phi_st, theta_st), sch);
}

struct FimMatrix {
  RMat f;               // (8K+2) x (8K+2), symmetric PSD
  double sigma2 = 1.0;  // per-entry complex noise variance
};

// Fisher information for the complex Gaussian observation with constant
// covariance sigma2 I: [F]_ij = (2/sigma2) Re tr(dV_i^H dV_j), evaluated
// through the schedule Gram so each entry costs O(K^2 N^4) instead of
// touching the full signal.
[[nodiscard]] inline FimMatrix fim(const ScenarioConfig& cfg,
                                   const ParamVector& eta, double sigma2,
                                   const RisSchedule& sch, double phi_st,
                                   double theta_st) {
  eta.validate();
  if (sigma2 <= 0.0) throw std::invalid_argument("fim: sigma2 must be > 0");
  if (cfg.n_targets != eta.targets())
    throw std::invalid_argument("fim: config target mismatch");

  const int p = eta.size();
  std::vector<std::vector<detail::SignalTerm>> deriv(
      static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i)
    deriv[static_cast<std::size_t>(i)] =
        detail::derivative_terms(cfg, eta, i, phi_st, theta_st);

  const CMat w = sch.s * sch.s.adjoint();
  FimMatrix out;
  out.sigma2 = sigma2;
  out.f = RMat::Zero(p, p);
  const double scale = 2.0 / sigma2;
  for (int i = 0; i < p; ++i)
    for (int j = i; j < p; ++j) {
      const double v =
          scale * std::real(detail::term_gram(deriv[static_cast<std::size_t>(i)],
                                              deriv[static_cast<std::size_t>(j)],
                                              w, sch.mode));
      out.f(i, j) = v;
      out.f(j, i) = v;
    }
  return out;
}

struct CrlbReport {
  RVec bound;             // sqrt of the inverse-FIM diagonal, eta ordering
  RVec bound_normalized;  // delay in symbols, Doppler-symbol product
  std::vector<bool> identifiable;  // per parameter, null-space support test
  bool singular = false;
};

// Per-parameter bounds. The FIM diagonal spans many orders of magnitude
// because gains, delays, Dopplers, and angles carry different units, so the
// matrix is Jacobi-equilibrated to unit diagonal before the rank decision;
// the cutoff is then invariant to parameter rescaling. A rank-deficient FIM
// is pseudo-inverted and the parameters supported by its null space are
// flagged instead of failing; parameters with zero information get an
// infinite bound.
[[nodiscard]] inline CrlbReport crlb(const FimMatrix& f,
                                     const ParamVector& eta,
                                     double symbol_time_s,
                                     double rcond = 1e-10) {
  const Eigen::Index p = f.f.rows();
  if (f.f.cols() != p || p != eta.size())
    throw std::invalid_argument("crlb: FIM/parameter size mismatch");

  CrlbReport rep;
  rep.bound = RVec::Constant(p, std::numeric_limits<double>::infinity());
  rep.bound_normalized = rep.bound;
  rep.identifiable.assign(static_cast<std::size_t>(p), false);

  std::vector<Eigen::Index> active;
  active.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index i = 0; i < p; ++i)
    if (f.f(i, i) > 0.0) active.push_back(i);
  const Eigen::Index pa = static_cast<Eigen::Index>(active.size());
  rep.singular = pa < p;
  if (pa == 0) return rep;

  RVec d(pa);
  for (Eigen::Index a = 0; a < pa; ++a)
    d(a) = 1.0 / std::sqrt(f.f(active[static_cast<std::size_t>(a)],
                               active[static_cast<std::size_t>(a)]));
  RMat fn(pa, pa);
  for (Eigen::Index a = 0; a < pa; ++a)
    for (Eigen::Index b = 0; b < pa; ++b)
      fn(a, b) = f.f(active[static_cast<std::size_t>(a)],
                     active[static_cast<std::size_t>(b)]) *
                 d(a) * d(b);

  Eigen::SelfAdjointEigenSolver<RMat> es(fn);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("crlb: eigendecomposition failed");
  const RVec& lam = es.eigenvalues();
  const RMat& vec = es.eigenvectors();
  const double tol = std::max(lam(pa - 1), 0.0) * rcond;

  for (Eigen::Index a = 0; a < pa; ++a) {
    double var = 0, null_mass = 0;
    for (Eigen::Index m = 0; m < pa; ++m) {
      const double c2 = vec(a, m) * vec(a, m);
      if (lam(m) > tol)
        var += c2 / lam(m);
      else {
        null_mass += c2;
        rep.singular = true;
      }
    }
    const Eigen::Index i = active[static_cast<std::size_t>(a)];
    rep.identifiable[static_cast<std::size_t>(i)] = null_mass <= 1e-8;
    rep.bound(i) = d(a) * std::sqrt(var);
    const double s = eta.char_scale(static_cast<int>(i), symbol_time_s);
    rep.bound_normalized(i) = rep.bound(i) / s;
  }
  return rep;
}

}  // namespace tendae
