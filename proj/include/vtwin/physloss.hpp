#pragma once

// Physics-informed self-supervised objective on predicted (P, Q) along the
// centerline: 1D Navier-Stokes residual, global and sliding-window pressure
// drop consistency, with analytic gradients.

#include <cmath>
#include <span>
#include <vector>

#include "vtwin/hemo1d.hpp"

namespace vtwin::physloss {

using hemo::HemoConstants;
using hemo::PhysicalGeometry;
using hemo::SegmentMap;

/// Sign of the friction term in the momentum residual. `dissipative` makes the
/// residual vanish on profiles whose pressure falls by the healthy drop law;
/// `reversed` flips the sign of the friction term.
enum class FrictionSign { dissipative, reversed };

struct LossConfig {
  double epsilon = 1e-6;
  std::size_t k_end = 5;
  std::size_t window = 50;
  std::size_t stride = 25;
  double w_residual = 1.0;
  double w_global = 1.0;
  double w_local = 1.0;
  FrictionSign friction = FrictionSign::dissipative;
  /// Average k_end points at each window edge instead of using endpoints.
  bool local_edge_average = false;
  HemoConstants constants;

  void validate(std::size_t n) const {
    if (!(epsilon > 0)) throw Error("LossConfig: epsilon must be > 0");
    if (k_end < 1 || 2 * k_end > n) throw Error("LossConfig: need 1 <= k_end <= N/2");
    if (window < 2 || window > n) throw Error("LossConfig: need 2 <= window <= N");
    if (stride < 1 || stride > window) throw Error("LossConfig: need 1 <= stride <= window");
    if (local_edge_average && 2 * k_end > window) throw Error("LossConfig: k_end too large for window");
    if (w_residual < 0 || w_global < 0 || w_local < 0) throw Error("LossConfig: weights must be >= 0");
    constants.validate();
  }
};

/// A scalar loss and its gradients with respect to P and Q.
struct LossPart {
  double value = 0.0;
  std::vector<double> grad_p;
  std::vector<double> grad_q;
};

struct LossReport {
  double residual = 0.0;
  double global = 0.0;
  double local = 0.0;
  double total = 0.0;
  std::vector<double> grad_p;
  std::vector<double> grad_q;
};

/// Second-order first derivative: central in the interior, one-sided at the ends.
inline std::vector<double> derivative(std::span<const double> f, double dx) {
  const std::size_t n = f.size();
  std::vector<double> d(n);
  const double h = 1.0 / (2.0 * dx);
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * h;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) * h;
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * h;
  return d;
}

/// Transpose of `derivative` applied to g.
inline std::vector<double> derivative_transpose(std::span<const double> g, double dx) {
  const std::size_t n = g.size();
  std::vector<double> out(n, 0.0);
  const double h = 1.0 / (2.0 * dx);
  out[0] += -3.0 * g[0] * h;
  out[1] += 4.0 * g[0] * h;
  out[2] += -1.0 * g[0] * h;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    out[i + 1] += g[i] * h;
    out[i - 1] -= g[i] * h;
  }
  out[n - 1] += 3.0 * g[n - 1] * h;
  out[n - 2] += -4.0 * g[n - 1] * h;
  out[n - 3] += 1.0 * g[n - 1] * h;
  return out;
}

/// Pointwise momentum + mass residual
///   d(Q^2/A)/dx + (A/rho) dP/dx +- (2 (zeta+2) mu pi / rho) Q/A + dQ/dx.
inline std::vector<double> residual(std::span<const double> p, std::span<const double> q,
                                    std::span<const double> area, double dx,
                                    const HemoConstants& c = {},
                                    FrictionSign sign = FrictionSign::dissipative) {
  const std::size_t n = p.size();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = q[i] * q[i] / area[i];
  const auto dw = derivative(w, dx);
  const auto dp = derivative(p, dx);
  const auto dq = derivative(q, dx);
  const double s = sign == FrictionSign::dissipative ? 1.0 : -1.0;
  const double fr = c.healthy_friction() / c.rho;
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = dw[i] + area[i] / c.rho * dp[i] + s * fr * q[i] / area[i] + dq[i];
  }
  return r;
}

/// Mean squared residual over all points.
inline LossPart residual_loss(std::span<const double> p, std::span<const double> q,
                              std::span<const double> area, double dx, const HemoConstants& c = {},
                              FrictionSign sign = FrictionSign::dissipative) {
  const std::size_t n = p.size();
  if (n < 3) throw Error("residual_loss: need N >= 3 points");
  if (q.size() != n || area.size() != n) throw Error("residual_loss: length mismatch");
  if (!(dx > 0)) throw Error("residual_loss: dx must be > 0");
  for (double a : area) {
    if (!(a > 0)) throw Error("residual_loss: non-positive area");
  }
  const auto r = residual(p, q, area, dx, c, sign);
  LossPart out;
  std::vector<double> g(n), ga(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.value += r[i] * r[i];
    g[i] = 2.0 * r[i] / static_cast<double>(n);
    ga[i] = g[i] * area[i] / c.rho;
  }
  out.value /= static_cast<double>(n);
  out.grad_p = derivative_transpose(ga, dx);
  const auto dtg = derivative_transpose(g, dx);
  const double s = sign == FrictionSign::dissipative ? 1.0 : -1.0;
  const double fr = c.healthy_friction() / c.rho;
  out.grad_q.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_q[i] = dtg[i] * 2.0 * q[i] / area[i] + s * fr / area[i] * g[i] + dtg[i];
  }
  return out;
}

/// [ln(1 + |(pred - phys) / (phys + eps)|)]^2 and its partials.
struct DropMismatch {
  double value = 0.0;
  double d_pred = 0.0;
  double d_phys = 0.0;
};

inline DropMismatch drop_mismatch(double pred, double phys, double eps) {
  const double denom = phys + eps;
  if (!(std::abs(denom) > 0.0) || !std::isfinite(denom) || !std::isfinite(pred)) {
    throw Error("pressure drop loss: physical drop + epsilon is zero or non-finite");
  }
  const double e = pred - phys;
  const double u = std::abs(e) / std::abs(denom);
  const double l = std::log1p(u);
  DropMismatch m;
  m.value = l * l;
  const double dl_du = 2.0 * l / (1.0 + u);
  const double sg_e = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);  // subgradient 0 at e = 0
  const double sg_d = denom > 0 ? 1.0 : -1.0;
  const double du_dpred = sg_e / std::abs(denom);
  const double du_dphys = -sg_e / std::abs(denom) - std::abs(e) * sg_d / (denom * denom);
  m.d_pred = dl_du * du_dpred;
  m.d_phys = dl_du * du_dphys;
  return m;
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Predicted vs physical drop over the whole vessel; predicted drop is the
/// difference of the mean pressures over the first and last k_end points,
/// physical drop is the segment drop law at the mean predicted flow.
inline LossPart global_drop_loss(std::span<const double> p, std::span<const double> q,
                                 const PhysicalGeometry& geom, const SegmentMap& seg,
                                 const LossConfig& cfg) {
  const std::size_t n = p.size();
  if (q.size() != n || geom.size() != n) throw Error("global_drop_loss: length mismatch");
  if (n < 2 * cfg.k_end) throw Error("global_drop_loss: need N >= 2 k_end");
  const std::size_t k = cfg.k_end;
  const double pred = mean(p.subspan(0, k)) - mean(p.subspan(n - k, k));
  const double qbar = mean(q);
  const auto coef = hemo::total_coefficients(geom, seg, cfg.constants);
  const auto m = drop_mismatch(pred, coef.at(qbar), cfg.epsilon);
  LossPart out;
  out.value = m.value;
  out.grad_p.assign(n, 0.0);
  out.grad_q.assign(n, m.d_phys * coef.slope(qbar) / static_cast<double>(n));
  for (std::size_t i = 0; i < k; ++i) {
    out.grad_p[i] += m.d_pred / static_cast<double>(k);
    out.grad_p[n - k + i] -= m.d_pred / static_cast<double>(k);
  }
  return out;
}

/// Window start offsets: m * stride while the window fits, plus one
/// right-aligned window if the tail is not covered.
inline std::vector<std::size_t> window_offsets(std::size_t n, std::size_t window, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a + window <= n; a += stride) out.push_back(a);
  if (out.empty() || out.back() + window < n) out.push_back(n - window);
  return out;
}

/// Mean over sliding windows of the drop mismatch restricted to each window.
inline LossPart local_drop_loss(std::span<const double> p, std::span<const double> q,
                                const PhysicalGeometry& geom, const SegmentMap& seg,
                                const LossConfig& cfg) {
  const std::size_t n = p.size();
  if (q.size() != n || geom.size() != n) throw Error("local_drop_loss: length mismatch");
  if (cfg.window > n || cfg.window < 2) throw Error("local_drop_loss: window must be in [2, N]");
  hemo::check_segments(seg, n);
  const auto offsets = window_offsets(n, cfg.window, cfg.stride);
  const double inv_m = 1.0 / static_cast<double>(offsets.size());
  const std::size_t w = cfg.window;
  const std::size_t k = cfg.local_edge_average ? cfg.k_end : 1;
  LossPart out;
  out.grad_p.assign(n, 0.0);
  out.grad_q.assign(n, 0.0);
  for (std::size_t a : offsets) {
    const auto pw = p.subspan(a, w);
    const double pred = mean(pw.subspan(0, k)) - mean(pw.subspan(w - k, k));
    const double qbar = mean(q.subspan(a, w));
    PhysicalGeometry sub;
    sub.dx = geom.dx;
    sub.area.assign(geom.area.begin() + static_cast<std::ptrdiff_t>(a),
                    geom.area.begin() + static_cast<std::ptrdiff_t>(a + w));
    const auto coef = hemo::total_coefficients(sub, hemo::clip_segments(seg, a, a + w), cfg.constants);
    const auto m = drop_mismatch(pred, coef.at(qbar), cfg.epsilon);
    out.value += inv_m * m.value;
    for (std::size_t i = 0; i < k; ++i) {
      out.grad_p[a + i] += inv_m * m.d_pred / static_cast<double>(k);
      out.grad_p[a + w - k + i] -= inv_m * m.d_pred / static_cast<double>(k);
    }
    const double gq = inv_m * m.d_phys * coef.slope(qbar) / static_cast<double>(w);
    for (std::size_t i = a; i < a + w; ++i) out.grad_q[i] += gq;
  }
  return out;
}

/// Weighted sum of the three parts and of their gradients.
inline LossReport total_loss(std::span<const double> p, std::span<const double> q,
                             const PhysicalGeometry& geom, const SegmentMap& seg, const LossConfig& cfg) {
  const std::size_t n = p.size();
  cfg.validate(n);
  LossReport r;
  r.grad_p.assign(n, 0.0);
  r.grad_q.assign(n, 0.0);
  auto accumulate = [&](const LossPart& part, double w) {
    for (std::size_t i = 0; i < n; ++i) {
      r.grad_p[i] += w * part.grad_p[i];
      r.grad_q[i] += w * part.grad_q[i];
    }
  };
  const auto res = residual_loss(p, q, geom.area, geom.dx, cfg.constants, cfg.friction);
  const auto glo = global_drop_loss(p, q, geom, seg, cfg);
  const auto loc = local_drop_loss(p, q, geom, seg, cfg);
  r.residual = res.value;
  r.global = glo.value;
  r.local = loc.value;
  r.total = cfg.w_residual * res.value + cfg.w_global * glo.value + cfg.w_local * loc.value;
  accumulate(res, cfg.w_residual);
  accumulate(glo, cfg.w_global);
  accumulate(loc, cfg.w_local);
  return r;
}

}  // namespace vtwin::physloss
