#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "vtwin/geometry.hpp"

namespace vtwin::testing {

inline Centerline line_z(std::size_t n, double length) {
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = Vec3(0, 0, length * double(i) / double(n - 1));
  return Centerline(std::move(pts));
}

inline Centerline helix(std::size_t n, double turns = 1.5, double radius = 1.0, double pitch = 0.7) {
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2 * std::numbers::pi * turns * double(i) / double(n - 1);
    pts[i] = Vec3(radius * std::cos(a), radius * std::sin(a), pitch * a);
  }
  return Centerline(std::move(pts));
}

/// Straight tube along z in physical cm with radius r(s) for s in [0, 1].
inline DigitalTwin tube(std::size_t n, double length, const std::function<double(double)>& r, std::size_t k = 16,
                        std::vector<bool> mask = {}) {
  RadiusProfile rp;
  for (std::size_t i = 0; i < n; ++i) rp.radii.push_back(r(double(i) / double(n - 1)));
  TwinMeta meta;
  meta.id = "tube";
  meta.kind = "synthetic";
  return make_swept_twin(line_z(n, length), std::move(rp), k, std::move(mask), meta);
}

inline DigitalTwin uniform_tube(std::size_t n, double length, double radius, std::size_t k = 16) {
  return tube(n, length, [radius](double) { return radius; }, k);
}

/// Cosine narrowing of depth `severity` (fraction of radius) centred at `c`
/// with half-width `w`, on a base radius r0.
inline double cosine_stenosis(double s, double r0, double severity, double c = 0.5, double w = 1.0 / 6.0) {
  const double x = (s - c) / w;
  if (std::abs(x) >= 1.0) return r0;
  return r0 * (1.0 - severity * 0.5 * (1.0 + std::cos(std::numbers::pi * x)));
}

}  // namespace vtwin::testing

namespace vtwin::testing {

/// Central-difference gradient of f at x, step h_i = rel_step * max(|x_i|, floor).
template <class F>
std::vector<double> fd_gradient(F&& f, std::vector<double> x, double rel_step, double floor = 1.0) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(std::abs(x[i]), floor);
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Largest |a - b| / max(|a|, |b|) over entries, entries below `abs_floor`
/// in both vectors being compared absolutely against the floor.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double abs_floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), abs_floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace vtwin::testing
