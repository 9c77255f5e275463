#pragma once

// Reduced-order steady hemodynamics: segment pressure-drop laws, marched
// pressure profiles and FFR curves. CGS units throughout.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vtwin/geometry.hpp"

namespace vtwin::hemo {

inline constexpr double kDynePerMmHg = 1333.22;

struct HemoConstants {
  double rho = 1.05;   // g/cm^3
  double mu = 0.035;   // poise (dyne s / cm^2)
  double zeta = 4.31;  // velocity profile factor
  double kt = 1.52;    // stenosis expansion coefficient

  void validate() const {
    if (!(rho > 0) || !(mu > 0) || !(zeta > 0) || !(kt > 0)) {
      throw Error("HemoConstants: all constants must be strictly positive");
    }
  }
  /// Healthy-segment friction coefficient 2 (zeta + 2) pi mu.
  double healthy_friction() const { return 2.0 * (zeta + 2.0) * std::numbers::pi * mu; }
  /// Lesion-segment viscous coefficient 8 pi mu.
  double lesion_friction() const { return 8.0 * std::numbers::pi * mu; }
};

enum class SegmentKind { healthy, lesion };

inline const char* to_string(SegmentKind k) { return k == SegmentKind::healthy ? "healthy" : "lesion"; }

/// Points [start, end). A segment integrates over the intervals from its
/// first point up to the first point of the next segment (or the last point).
struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;
  SegmentKind kind = SegmentKind::healthy;

  bool operator==(const Segment&) const = default;
};

using SegmentMap = std::vector<Segment>;

inline void check_segments(const SegmentMap& seg, std::size_t n) {
  if (seg.empty()) throw Error("segment map is empty");
  std::size_t expect = 0;
  for (const auto& s : seg) {
    if (s.start != expect || s.end <= s.start) {
      throw Error("segment map must be contiguous and non-overlapping");
    }
    expect = s.end;
  }
  if (expect != n) throw Error("segment map does not cover the centerline");
}

/// Inclusive last point of segment `idx`'s integration span.
inline std::size_t span_last(const SegmentMap& seg, std::size_t idx, std::size_t n) {
  return idx + 1 < seg.size() ? seg[idx + 1].start : n - 1;
}

/// Per-point area (cm^2) and uniform spacing (cm) of a twin in physical units.
struct PhysicalGeometry {
  std::vector<double> area;
  double dx = 0.0;

  std::size_t size() const { return area.size(); }
  double length() const { return dx * static_cast<double>(area.size() - 1); }
};

/// Maximum relative spacing deviation accepted as "uniform".
inline constexpr double kUniformSpacingTol = 1e-2;

inline PhysicalGeometry physical_geometry(const DigitalTwin& t) {
  if (t.centerline.spacing_deviation() > kUniformSpacingTol) {
    throw Error("hemodynamics requires a uniformly resampled centerline");
  }
  PhysicalGeometry g;
  const double scale = t.meta.unit_scale;
  g.area = section_areas(t);
  for (auto& a : g.area) a /= scale * scale;
  g.dx = t.centerline.total_length() / static_cast<double>(t.size() - 1) / scale;
  return g;
}

struct DropTerms {
  double viscous = 0.0;
  double kinetic = 0.0;  // kinetic (healthy) or expansion (lesion) part

  double total() const { return viscous + kinetic; }
};

namespace detail {

inline void check_areas(std::span<const double> area) {
  if (area.empty()) throw Error("pressure drop over an empty segment");
  for (double a : area) {
    if (!(a > 0.0) || !std::isfinite(a)) throw Error("pressure drop: non-positive cross-sectional area");
  }
}

/// Trapezoidal integral of 1/A^2 over the points, spacing dx.
inline double inv_area_sq_integral(std::span<const double> area, double dx) {
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < area.size(); ++i) {
    sum += 0.5 * (1.0 / (area[i] * area[i]) + 1.0 / (area[i + 1] * area[i + 1]));
  }
  return sum * dx;
}

inline std::size_t argmin(std::span<const double> v) {
  std::size_t m = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[m]) m = i;
  }
  return m;
}

}  // namespace detail

/// Drop coefficients: drop(Q) = linear Q + quadratic Q^2.
struct DropCoefficients {
  double linear = 0.0;
  double quadratic = 0.0;

  double at(double q) const { return linear * q + quadratic * q * q; }
  double slope(double q) const { return linear + 2.0 * quadratic * q; }
  DropCoefficients& operator+=(const DropCoefficients& o) {
    linear += o.linear;
    quadratic += o.quadratic;
    return *this;
  }
};

inline DropCoefficients healthy_coefficients(std::span<const double> area, double dx,
                                             const HemoConstants& c) {
  detail::check_areas(area);
  const double a_in = area.front(), a_out = area.back();
  return {c.healthy_friction() * detail::inv_area_sq_integral(area, dx),
          0.5 * c.rho * (1.0 / (a_out * a_out) - 1.0 / (a_in * a_in))};
}

inline DropCoefficients stenosis_coefficients(std::span<const double> area, double dx,
                                              const HemoConstants& c) {
  detail::check_areas(area);
  const double a0 = 0.5 * (area.front() + area.back());
  const double as = area[detail::argmin(area)];
  const double ratio = a0 / as - 1.0;
  return {c.lesion_friction() * detail::inv_area_sq_integral(area, dx),
          c.kt * c.rho / (2.0 * a0 * a0) * ratio * ratio};
}

/// Healthy-segment drop: viscous Q int 2(zeta+2) pi mu / A^2 dx plus
/// kinetic (rho/2)(1/A_out^2 - 1/A_in^2) Q^2.
inline DropTerms healthy_drop(std::span<const double> area, double dx, double q,
                              const HemoConstants& c = {}) {
  if (q < 0) throw Error("healthy_drop: flow must be >= 0");
  const auto k = healthy_coefficients(area, dx, c);
  return {k.linear * q, k.quadratic * q * q};
}

/// Lesion-segment drop: viscous Q int 8 pi mu / A^2 dx plus expansion
/// Kt rho / (2 A0^2) (A0/As - 1)^2 Q^2.
inline DropTerms stenosis_drop(std::span<const double> area, double dx, double q,
                               const HemoConstants& c = {}) {
  if (q < 0) throw Error("stenosis_drop: flow must be >= 0");
  const auto k = stenosis_coefficients(area, dx, c);
  return {k.linear * q, k.quadratic * q * q};
}

inline DropCoefficients total_coefficients(const PhysicalGeometry& g, const SegmentMap& seg,
                                           const HemoConstants& c = {}) {
  const std::size_t n = g.size();
  check_segments(seg, n);
  DropCoefficients total;
  const std::span<const double> area(g.area);
  for (std::size_t s = 0; s < seg.size(); ++s) {
    const std::size_t first = seg[s].start;
    const auto sub = area.subspan(first, span_last(seg, s, n) - first + 1);
    total += seg[s].kind == SegmentKind::healthy ? healthy_coefficients(sub, g.dx, c)
                                                 : stenosis_coefficients(sub, g.dx, c);
  }
  return total;
}

/// Sum of healthy_drop over healthy segments and stenosis_drop over lesions.
inline DropTerms total_drop(const PhysicalGeometry& g, const SegmentMap& seg, double q,
                            const HemoConstants& c = {}) {
  if (q < 0) throw Error("total_drop: flow must be >= 0");
  const std::size_t n = g.size();
  check_segments(seg, n);
  DropTerms total;
  const std::span<const double> area(g.area);
  for (std::size_t s = 0; s < seg.size(); ++s) {
    const std::size_t first = seg[s].start;
    const auto sub = area.subspan(first, span_last(seg, s, n) - first + 1);
    const auto d = seg[s].kind == SegmentKind::healthy ? healthy_drop(sub, g.dx, q, c)
                                                       : stenosis_drop(sub, g.dx, q, c);
    total.viscous += d.viscous;
    total.kinetic += d.kinetic;
  }
  return total;
}

struct HemoProfile {
  std::vector<double> q;     // cm^3/s
  std::vector<double> p;     // dyne/cm^2
  std::vector<double> area;  // cm^2
  std::vector<double> ffr;

  std::size_t size() const { return p.size(); }
};

/// P_i / P_0 per point.
inline std::vector<double> ffr_curve(std::span<const double> p) {
  if (p.empty() || !(p[0] > 0.0)) throw Error("ffr_curve: inlet pressure must be positive");
  std::vector<double> f(p.size());
  f[0] = 1.0;
  for (std::size_t i = 1; i < p.size(); ++i) f[i] = p[i] / p[0];
  return f;
}

inline std::vector<double> ffr_curve(const HemoProfile& h) { return ffr_curve(std::span<const double>(h.p)); }

/// Per-interval pressure loss (size n - 1) whose sum equals total_drop.
/// Viscous loss uses the trapezoidal integrand of the segment's law. Healthy
/// kinetic loss is spread as (rho/2) Q^2 (1/A_{i+1}^2 - 1/A_i^2) per interval,
/// which telescopes to the segment term; the lesion expansion loss sits on the
/// interval ending at the segment's minimal area.
inline std::vector<double> interval_losses(const PhysicalGeometry& g, const SegmentMap& seg, double q,
                                           const HemoConstants& c = {}) {
  const std::size_t n = g.size();
  check_segments(seg, n);
  const auto& a = g.area;
  detail::check_areas(a);
  std::vector<double> loss(n - 1, 0.0);
  const std::span<const double> area(a);
  for (std::size_t s = 0; s < seg.size(); ++s) {
    const std::size_t first = seg[s].start;
    const std::size_t last = span_last(seg, s, n);
    const bool healthy = seg[s].kind == SegmentKind::healthy;
    const double coef = healthy ? c.healthy_friction() : c.lesion_friction();
    for (std::size_t i = first; i < last; ++i) {
      const double inv0 = 1.0 / (a[i] * a[i]);
      const double inv1 = 1.0 / (a[i + 1] * a[i + 1]);
      loss[i] += q * coef * 0.5 * (inv0 + inv1) * g.dx;
      if (healthy) loss[i] += 0.5 * c.rho * q * q * (inv1 - inv0);
    }
    if (!healthy && last > first) {
      const auto sub = area.subspan(first, last - first + 1);
      const std::size_t m = first + detail::argmin(sub);
      const std::size_t interval = m > first ? m - 1 : first;
      loss[interval] += stenosis_coefficients(sub, g.dx, c).quadratic * q * q;
    }
  }
  return loss;
}

/// March P from p_in distally by the interval losses.
inline HemoProfile pressure_profile(const PhysicalGeometry& g, const SegmentMap& seg, double q,
                                    double p_in, const HemoConstants& c = {}) {
  c.validate();
  if (!(p_in > 0.0)) throw Error("pressure_profile: inlet pressure must be positive");
  if (q < 0) throw Error("pressure_profile: flow must be >= 0");
  const auto loss = interval_losses(g, seg, q, c);
  HemoProfile h;
  h.q.assign(g.size(), q);
  h.area = g.area;
  h.p.resize(g.size());
  h.p[0] = p_in;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    h.p[i + 1] = h.p[i] - loss[i];
    if (h.p[i + 1] < 0.0) {
      throw NonPhysiologicalError("pressure driven below zero at point " + std::to_string(i + 1) +
                                  " (non-physiological configuration)");
    }
  }
  h.ffr = ffr_curve(std::span<const double>(h.p));
  return h;
}

/// Runs of the lesion mask as segments. Lesion runs shorter than 3 points are
/// dropped; healthy runs shorter than 3 points then join the adjacent lesion.
inline SegmentMap derive_segments(const std::vector<bool>& mask) {
  constexpr std::size_t kMinRun = 3;
  const std::size_t n = mask.size();
  if (n == 0) throw Error("derive_segments: empty mask");
  auto runs_of = [n](const std::vector<bool>& m) {
    SegmentMap runs;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= n; ++i) {
      if (i == n || m[i] != m[start]) {
        runs.push_back({start, i, m[start] ? SegmentKind::lesion : SegmentKind::healthy});
        start = i;
      }
    }
    return runs;
  };
  std::vector<bool> m = mask;
  for (const auto& r : runs_of(m)) {
    if (r.kind == SegmentKind::lesion && r.end - r.start < kMinRun) {
      std::fill(m.begin() + static_cast<std::ptrdiff_t>(r.start), m.begin() + static_cast<std::ptrdiff_t>(r.end), false);
    }
  }
  auto runs = runs_of(m);
  if (runs.size() > 1) {
    for (const auto& r : runs) {
      if (r.kind == SegmentKind::healthy && r.end - r.start < kMinRun) {
        std::fill(m.begin() + static_cast<std::ptrdiff_t>(r.start), m.begin() + static_cast<std::ptrdiff_t>(r.end), true);
      }
    }
    runs = runs_of(m);
  }
  return runs;
}

inline SegmentMap derive_segments(const DigitalTwin& t) { return derive_segments(t.lesion_mask); }

/// Segments restricted to points [begin, end), re-indexed from zero.
inline SegmentMap clip_segments(const SegmentMap& seg, std::size_t begin, std::size_t end) {
  SegmentMap out;
  for (const auto& s : seg) {
    const std::size_t a = std::max(s.start, begin), b = std::min(s.end, end);
    if (a < b) out.push_back({a - begin, b - begin, s.kind});
  }
  return out;
}

inline std::size_t lesion_count(const SegmentMap& seg) {
  std::size_t n = 0;
  for (const auto& s : seg) n += s.kind == SegmentKind::lesion;
  return n;
}

}  // namespace vtwin::hemo
