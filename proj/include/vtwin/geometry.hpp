#pragma once

// Vessel geometry: centerlines, frames, cross-sections and the digital twin.
// All lengths are in cm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vtwin/error.hpp"

namespace vtwin {

using Vec3 = Eigen::Vector3d;

/// Ordered 3D polyline with cumulative arc length (s_0 = 0).
class Centerline {
 public:
  Centerline() = default;

  explicit Centerline(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.size() < 2) {
      throw InvariantError("centerline.size", "need at least 2 points, got " +
                                                  std::to_string(points_.size()));
    }
    arc_.assign(points_.size(), 0.0);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!points_[i].allFinite()) {
        throw InvariantError("centerline.finite",
                             "non-finite coordinate at point " + std::to_string(i));
      }
      if (i > 0) {
        const double step = (points_[i] - points_[i - 1]).norm();
        if (!(step > 0.0)) {
          throw InvariantError("centerline.arc_length",
                               "repeated consecutive point at index " + std::to_string(i));
        }
        arc_[i] = arc_[i - 1] + step;
      }
    }
  }

  const std::vector<Vec3>& points() const noexcept { return points_; }
  const std::vector<double>& arc_length() const noexcept { return arc_; }
  std::size_t size() const noexcept { return points_.size(); }
  double total_length() const noexcept { return arc_.empty() ? 0.0 : arc_.back(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

  /// Largest relative deviation of a step from the mean step.
  double spacing_deviation() const {
    const double mean = total_length() / static_cast<double>(size() - 1);
    double worst = 0.0;
    for (std::size_t i = 1; i < size(); ++i) {
      worst = std::max(worst, std::abs(arc_[i] - arc_[i - 1] - mean) / mean);
    }
    return worst;
  }

 private:
  std::vector<Vec3> points_;
  std::vector<double> arc_;
};

struct RadiusProfile {
  std::vector<double> radii;

  std::size_t size() const noexcept { return radii.size(); }
  double operator[](std::size_t i) const { return radii[i]; }
};

struct Frame {
  Vec3 t{0, 0, 1};
  Vec3 n{1, 0, 0};
  Vec3 u{0, 1, 0};
};

struct CrossSection {
  Vec3 center = Vec3::Zero();
  Frame frame;
  std::vector<Vec3> boundary;
};

/// Provenance record carried by every twin.
struct TwinMeta {
  std::string id;
  /// "synthetic" and "phantom" twins have circular swept sections.
  std::string kind = "imported";
  std::vector<std::string> source_ids;
  nlohmann::json augment = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  /// Product of all normalize_scale factors applied (stored = physical * unit_scale).
  double unit_scale = 1.0;

  bool swept() const { return kind == "synthetic" || kind == "phantom"; }
};

struct DigitalTwin {
  Centerline centerline;
  RadiusProfile radii;
  std::vector<CrossSection> sections;
  std::vector<bool> lesion_mask;
  TwinMeta meta;

  std::size_t size() const noexcept { return centerline.size(); }
  std::size_t k() const noexcept { return sections.empty() ? 0 : sections.front().boundary.size(); }
};

namespace detail {

inline Vec3 any_orthogonal(const Vec3& t) {
  // Seed from the coordinate axis least aligned with t.
  Vec3 axis = Vec3::UnitX();
  const Vec3 a = t.cwiseAbs();
  if (a.y() <= a.x() && a.y() <= a.z()) axis = Vec3::UnitY();
  else if (a.z() <= a.x() && a.z() <= a.y()) axis = Vec3::UnitZ();
  return (axis - axis.dot(t) * t).normalized();
}

inline double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

inline bool segments_cross(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2,
                           const Eigen::Vector2d& q1, const Eigen::Vector2d& q2) {
  const Eigen::Vector2d r = p2 - p1;
  const Eigen::Vector2d s = q2 - q1;
  const double d1 = cross2(r.x(), r.y(), (q1 - p1).x(), (q1 - p1).y());
  const double d2 = cross2(r.x(), r.y(), (q2 - p1).x(), (q2 - p1).y());
  const double d3 = cross2(s.x(), s.y(), (p1 - q1).x(), (p1 - q1).y());
  const double d4 = cross2(s.x(), s.y(), (p2 - q1).x(), (p2 - q1).y());
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 &&
         d4 != 0;
}

/// Linear interpolation of `values` sampled at `src` positions onto `dst`.
inline std::vector<double> interpolate(std::span<const double> src, std::span<const double> values,
                                       std::span<const double> dst) {
  std::vector<double> out(dst.size());
  std::size_t seg = 0;
  for (std::size_t j = 0; j < dst.size(); ++j) {
    const double x = dst[j];
    while (seg + 2 < src.size() && src[seg + 1] < x) ++seg;
    const double x0 = src[seg], x1 = src[seg + 1];
    const double w = std::clamp((x - x0) / (x1 - x0), 0.0, 1.0);
    out[j] = (1.0 - w) * values[seg] + w * values[seg + 1];
  }
  return out;
}

}  // namespace detail

/// Uniform arc-length resampling by linear interpolation along the polyline.
inline Centerline resample(const Centerline& c, std::size_t n) {
  if (n < 2) throw Error("resample: n must be >= 2");
  const double length = c.total_length();
  if (!(length > 0.0)) throw Error("resample: degenerate centerline (zero length)");
  const auto& s = c.arc_length();
  const auto& p = c.points();
  std::vector<Vec3> out(n);
  out.front() = p.front();
  out.back() = p.back();
  std::size_t seg = 0;
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double target = length * static_cast<double>(j) / static_cast<double>(n - 1);
    while (seg + 2 < p.size() && s[seg + 1] < target) ++seg;
    const double w = (target - s[seg]) / (s[seg + 1] - s[seg]);
    out[j] = (1.0 - w) * p[seg] + w * p[seg + 1];
  }
  return Centerline(std::move(out));
}

/// Finite-difference tangents with rotation-minimizing (parallel-transported) normals.
inline std::vector<Frame> compute_frames(const Centerline& c) {
  const auto& p = c.points();
  const std::size_t n = p.size();
  std::vector<Frame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = (i == 0) ? Vec3(p[1] - p[0])
                   : (i + 1 == n) ? Vec3(p[n - 1] - p[n - 2])
                                  : Vec3(p[i + 1] - p[i - 1]);
    const double len = d.norm();
    if (!(len > 0.0) || !std::isfinite(len)) {
      throw Error("compute_frames: zero-length tangent at point " + std::to_string(i));
    }
    frames[i].t = d / len;
  }
  frames[0].n = detail::any_orthogonal(frames[0].t);
  for (std::size_t i = 1; i < n; ++i) {
    const Vec3& t0 = frames[i - 1].t;
    const Vec3& t1 = frames[i].t;
    Vec3 nrm = frames[i - 1].n;
    const Vec3 axis = t0.cross(t1);
    const double sin_a = axis.norm();
    const double cos_a = t0.dot(t1);
    if (sin_a > 1e-15) {
      // Rodrigues rotation taking t0 onto t1.
      const Vec3 k = axis / sin_a;
      nrm = nrm * cos_a + k.cross(nrm) * sin_a + k * k.dot(nrm) * (1.0 - cos_a);
    }
    nrm -= nrm.dot(t1) * t1;
    const double len = nrm.norm();
    frames[i].n = len > 1e-12 ? Vec3(nrm / len) : detail::any_orthogonal(t1);
  }
  for (auto& f : frames) f.u = f.t.cross(f.n);
  return frames;
}

/// Boundary projected to 2D coordinates in the section's (n, u) plane.
inline std::vector<Eigen::Vector2d> planar_boundary(const CrossSection& s) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(s.boundary.size());
  for (const auto& q : s.boundary) {
    const Vec3 d = q - s.center;
    out.emplace_back(d.dot(s.frame.n), d.dot(s.frame.u));
  }
  return out;
}

/// Shoelace area of the boundary polygon in the section plane (cm^2).
inline double section_area(const CrossSection& s) {
  const std::size_t k = s.boundary.size();
  if (k < 3) throw Error("section_area: need K >= 3 boundary points");
  const auto xy = planar_boundary(s);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 2; b < k; ++b) {
      if (a == 0 && b == k - 1) continue;  // adjacent through the wrap
      if (detail::segments_cross(xy[a], xy[a + 1], xy[b], xy[(b + 1) % k])) {
        throw Error("section_area: self-intersecting boundary polygon");
      }
    }
  }
  double twice = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    const auto& p = xy[a];
    const auto& q = xy[(a + 1) % k];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(twice);
}

/// Circular sections q_ij = c_i + r_i (cos th_j n_i + sin th_j u_i), th_j = 2 pi j / k.
inline std::vector<CrossSection> sweep_sections(const Centerline& c, const RadiusProfile& r,
                                                std::size_t k) {
  if (r.size() != c.size()) throw Error("sweep: radius profile length does not match centerline");
  if (k < 3) throw Error("sweep: need k >= 3");
  const auto frames = compute_frames(c);
  std::vector<double> cos_t(k), sin_t(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(k);
    cos_t[j] = std::cos(th);
    sin_t[j] = std::sin(th);
  }
  std::vector<CrossSection> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto& s = out[i];
    s.center = c[i];
    s.frame = frames[i];
    s.boundary.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      s.boundary[j] = c[i] + r[i] * (cos_t[j] * frames[i].n + sin_t[j] * frames[i].u);
    }
  }
  return out;
}

inline std::vector<double> section_areas(const DigitalTwin& t) {
  std::vector<double> a(t.sections.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = section_area(t.sections[i]);
  return a;
}

/// Arc-length fractions s_i / L in [0, 1].
inline std::vector<double> arc_fractions(const Centerline& c) {
  std::vector<double> f(c.arc_length());
  const double length = c.total_length();
  for (auto& v : f) v /= length;
  f.back() = 1.0;
  return f;
}

/// Resample a twin to n uniformly spaced points; radii interpolated by arc
/// fraction, lesion mask by nearest point, sections re-swept as circles.
inline DigitalTwin resample_twin(const DigitalTwin& t, std::size_t n, std::size_t k = 0) {
  if (k == 0) k = t.k();
  DigitalTwin out;
  out.centerline = resample(t.centerline, n);
  const auto src = arc_fractions(t.centerline);
  std::vector<double> dst(n);
  for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<double>(j) / static_cast<double>(n - 1);
  out.radii.radii = detail::interpolate(src, t.radii.radii, dst);
  out.lesion_mask.assign(n, false);
  if (!t.lesion_mask.empty()) {
    std::size_t seg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      while (seg + 1 < src.size() && src[seg + 1] < dst[j]) ++seg;
      const std::size_t nearest =
          (seg + 1 < src.size() && src[seg + 1] - dst[j] < dst[j] - src[seg]) ? seg + 1 : seg;
      out.lesion_mask[j] = t.lesion_mask[nearest];
    }
  }
  out.sections = sweep_sections(out.centerline, out.radii, k);
  out.meta = t.meta;
  return out;
}

/// Translate the first centerline point to the origin and scale to unit arc length.
inline DigitalTwin normalize_scale(const DigitalTwin& t) {
  const double factor = 1.0 / t.centerline.total_length();
  const Vec3 origin = t.centerline[0];
  std::vector<Vec3> pts;
  pts.reserve(t.size());
  for (const auto& p : t.centerline.points()) pts.push_back((p - origin) * factor);
  DigitalTwin out;
  out.centerline = Centerline(std::move(pts));
  out.radii = t.radii;
  for (auto& r : out.radii.radii) r *= factor;
  out.sections = t.sections;
  for (auto& s : out.sections) {
    s.center = (s.center - origin) * factor;
    for (auto& q : s.boundary) q = (q - origin) * factor;
  }
  out.lesion_mask = t.lesion_mask;
  out.meta = t.meta;
  out.meta.unit_scale *= factor;
  return out;
}

/// Shortest distance from p to segment [a, b].
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double w = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + w * ab)).norm();
}

inline double polyline_distance(const Vec3& p, const Centerline& c) {
  double best = std::numeric_limits<double>::infinity();
  const auto& pts = c.points();
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    best = std::min(best, point_segment_distance(p, pts[i], pts[i + 1]));
  }
  return best;
}

/// Apply a rigid motion x -> R x + shift to every coordinate of a twin.
inline DigitalTwin transform_twin(const DigitalTwin& t, const Eigen::Matrix3d& rot,
                                  const Vec3& shift = Vec3::Zero()) {
  std::vector<Vec3> pts;
  pts.reserve(t.size());
  for (const auto& p : t.centerline.points()) pts.push_back(rot * p + shift);
  DigitalTwin out = t;
  out.centerline = Centerline(std::move(pts));
  for (auto& s : out.sections) {
    s.center = rot * s.center + shift;
    s.frame.t = rot * s.frame.t;
    s.frame.n = rot * s.frame.n;
    s.frame.u = rot * s.frame.u;
    for (auto& q : s.boundary) q = rot * q + shift;
  }
  return out;
}

/// Assemble a twin from centerline and radii, sweeping circular sections.
inline DigitalTwin make_swept_twin(Centerline c, RadiusProfile r, std::size_t k,
                                   std::vector<bool> lesion_mask = {}, TwinMeta meta = {}) {
  DigitalTwin t;
  t.sections = sweep_sections(c, r, k);
  t.centerline = std::move(c);
  t.radii = std::move(r);
  t.lesion_mask = lesion_mask.empty() ? std::vector<bool>(t.centerline.size(), false)
                                      : std::move(lesion_mask);
  t.meta = std::move(meta);
  return t;
}

// ---------------------------------------------------------------------------
// Invariant checking

struct Violation {
  std::string invariant;
  std::string detail;
};

/// Signed angular increments of the boundary in its section frame; monotone
/// order means all increments share a sign and they sum to +-2 pi.
inline bool angular_order_monotone(const CrossSection& s) {
  const auto xy = planar_boundary(s);
  const std::size_t k = xy.size();
  double total = 0.0;
  int sign = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& a = xy[j];
    const auto& b = xy[(j + 1) % k];
    const double d = std::atan2(detail::cross2(a.x(), a.y(), b.x(), b.y()), a.dot(b));
    const int sg = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (sg == 0 || (sign != 0 && sg != sign)) return false;
    sign = sg;
    total += d;
  }
  return std::abs(std::abs(total) - 2.0 * std::numbers::pi) < 1e-6;
}

inline std::vector<Violation> frame_violations(const Frame& f, double tol = 1e-9) {
  std::vector<Violation> out;
  for (const auto* v : {&f.t, &f.n, &f.u}) {
    if (std::abs(v->norm() - 1.0) > tol) out.push_back({"frame.unit", "vector norm off unity"});
  }
  if (std::abs(f.t.dot(f.n)) > tol || std::abs(f.t.dot(f.u)) > tol || std::abs(f.n.dot(f.u)) > tol) {
    out.push_back({"frame.orthogonal", "non-zero pairwise dot product"});
  }
  if ((f.u - f.t.cross(f.n)).norm() > tol) out.push_back({"frame.handedness", "u != t x n"});
  return out;
}

/// All DigitalTwin / RadiusProfile / CrossSection invariants. Centerline
/// invariants are enforced at construction.
inline std::vector<Violation> twin_violations(const DigitalTwin& t) {
  std::vector<Violation> out;
  const std::size_t n = t.size();
  if (n < 2) {
    out.push_back({"centerline.size", "fewer than 2 points"});
    return out;
  }
  if (t.radii.size() != n) out.push_back({"radii.length", "radius profile length != centerline length"});
  if (t.lesion_mask.size() != n) out.push_back({"lesion_mask.length", "mask length != centerline length"});
  if (t.sections.size() != n) out.push_back({"sections.length", "section count != centerline length"});
  for (std::size_t i = 0; i < t.radii.size(); ++i) {
    if (!(t.radii[i] > 0.0) || !std::isfinite(t.radii[i])) {
      out.push_back({"radii.positive", "radius at point " + std::to_string(i) + " is not positive and finite"});
      break;
    }
  }
  if (!out.empty()) return out;

  const std::size_t k = t.k();
  if (k < 3) out.push_back({"sections.k", "fewer than 3 boundary points per section"});
  std::vector<Frame> frames;
  try {
    frames = compute_frames(t.centerline);
  } catch (const Error& e) {
    out.push_back({"centerline.frames", e.what()});
    return out;
  }
  for (std::size_t i = 0; i < n && out.size() < 16; ++i) {
    const auto& s = t.sections[i];
    const std::string where = " (section " + std::to_string(i) + ")";
    if (s.boundary.size() != k) {
      out.push_back({"sections.same_k", "boundary count differs" + where});
      continue;
    }
    if ((s.center - t.centerline[i]).norm() > 1e-6) {
      out.push_back({"section.center", "section center off the centerline point" + where});
    }
    for (const auto& v : frame_violations(s.frame)) out.push_back({v.invariant, v.detail + where});
    for (const auto& q : s.boundary) {
      if (!q.allFinite()) {
        out.push_back({"section.finite", "non-finite boundary point" + where});
        break;
      }
      if (std::abs((q - s.center).dot(frames[i].t)) > 1e-6) {
        out.push_back({"section.planar", "boundary point off the plane orthogonal to t" + where});
        break;
      }
    }
    if (k >= 3 && !angular_order_monotone(s)) {
      out.push_back({"section.angular_order", "boundary angular order not monotone" + where});
    }
    if (t.meta.swept()) {
      for (const auto& q : s.boundary) {
        if (std::abs((q - s.center).norm() - t.radii[i]) > 1e-6) {
          out.push_back({"section.radius", "boundary point not at distance r_i from center" + where});
          break;
        }
      }
    }
  }
  return out;
}

inline void check_twin(const DigitalTwin& t) {
  const auto v = twin_violations(t);
  if (!v.empty()) throw InvariantError(v.front().invariant, v.front().detail);
}

}  // namespace vtwin
