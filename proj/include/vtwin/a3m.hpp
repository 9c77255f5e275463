#pragma once

// Anatomy-aware augmentation: recombine one donor's centerline with another
// donor's radius profile, perturb both, and sweep circular cross-sections.

#include <array>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vtwin/geometry.hpp"

namespace vtwin::a3m {

using Rng = std::mt19937_64;

struct AugmentParams {
  /// Intrinsic Z-Y-X Euler angles (rad): rotation about z, then y, then x.
  std::array<double, 3> euler{0.0, 0.0, 0.0};
  double bend_amplitude = 0.0;  // fraction of arc length
  double bend_frequency = 0.0;  // cycles over the vessel
  double smoothing_sigma = 0.0;  // point-index units
  double radius_noise_sigma = 0.0;  // fraction of local radius (cm in absolute mode)
  bool absolute_radius_noise = false;
  std::size_t target_n = 100;
  std::size_t target_k = 64;
  std::uint64_t seed = 0;

  void validate() const {
    for (double a : euler) {
      if (!std::isfinite(a)) throw Error("AugmentParams: non-finite Euler angle");
    }
    if (!(bend_amplitude >= 0) || !(bend_frequency >= 0) || !(smoothing_sigma >= 0) ||
        !(radius_noise_sigma >= 0)) {
      throw Error("AugmentParams: amplitude, frequency and sigmas must be non-negative");
    }
    if (target_n < 2) throw Error("AugmentParams: target_n must be >= 2");
    if (target_k < 3) throw Error("AugmentParams: target_k must be >= 3");
  }
};

inline void to_json(nlohmann::json& j, const AugmentParams& p) {
  j = nlohmann::json{{"euler_zyx", p.euler},
                     {"bend_amplitude", p.bend_amplitude},
                     {"bend_frequency", p.bend_frequency},
                     {"smoothing_sigma", p.smoothing_sigma},
                     {"radius_noise_sigma", p.radius_noise_sigma},
                     {"absolute_radius_noise", p.absolute_radius_noise},
                     {"target_n", p.target_n},
                     {"target_k", p.target_k},
                     {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, AugmentParams& p) {
  j.at("euler_zyx").get_to(p.euler);
  j.at("bend_amplitude").get_to(p.bend_amplitude);
  j.at("bend_frequency").get_to(p.bend_frequency);
  j.at("smoothing_sigma").get_to(p.smoothing_sigma);
  j.at("radius_noise_sigma").get_to(p.radius_noise_sigma);
  j.at("absolute_radius_noise").get_to(p.absolute_radius_noise);
  j.at("target_n").get_to(p.target_n);
  j.at("target_k").get_to(p.target_k);
  j.at("seed").get_to(p.seed);
}

/// Sampling ranges for corpus generation.
struct AugmentRanges {
  double bend_amplitude_max = 0.05;
  double bend_frequency_min = 0.5;
  double bend_frequency_max = 2.0;
  double smoothing_sigma_max = 3.0;
  double radius_noise_sigma_max = 0.05;
};

inline Eigen::Matrix3d rotation_matrix(const std::array<double, 3>& euler) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(euler[0], Vec3::UnitZ()) * AngleAxisd(euler[1], Vec3::UnitY()) *
          AngleAxisd(euler[2], Vec3::UnitX()))
      .toRotationMatrix();
}

/// Rotate about the centerline centroid.
inline Centerline rotate(const Centerline& c, const std::array<double, 3>& euler) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : c.points()) centroid += p;
  centroid /= static_cast<double>(c.size());
  const Eigen::Matrix3d r = rotation_matrix(euler);
  std::vector<Vec3> out;
  out.reserve(c.size());
  for (const auto& p : c.points()) out.push_back(centroid + r * (p - centroid));
  return Centerline(std::move(out));
}

/// Transverse sine displacement alpha L sin(2 pi f s / L) d, with d a random
/// unit vector orthogonal to the chord.
inline Centerline bend(const Centerline& c, double amplitude, double frequency, Rng& rng) {
  if (!(amplitude >= 0) || !(frequency >= 0)) throw Error("bend: amplitude and frequency must be >= 0");
  const double length = c.total_length();
  const Vec3 chord = c.points().back() - c.points().front();
  if (chord.norm() <= 1e-9 * length) throw Error("bend: degenerate chord (closed centerline)");
  const Vec3 axis = chord.normalized();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 d = Vec3::Zero();
  while (d.norm() < 1e-6) {
    const Vec3 g(gauss(rng), gauss(rng), gauss(rng));
    d = g - g.dot(axis) * axis;
  }
  d.normalize();
  if (amplitude == 0.0) return c;
  std::vector<Vec3> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double s = c.arc_length()[i];
    out.push_back(c[i] + amplitude * length *
                             std::sin(2.0 * std::numbers::pi * frequency * s / length) * d);
  }
  return Centerline(std::move(out));
}

namespace detail {

/// Half-sample symmetric reflection of an index into [0, n).
inline std::size_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace detail

/// Gaussian smoothing over point index, kernel truncated at +-3 sigma, reflect padded.
inline Centerline smooth(const Centerline& c, double sigma) {
  if (!(sigma >= 0)) throw Error("smooth: sigma must be >= 0");
  if (sigma == 0.0) return c;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
    const double w = std::exp(-0.5 * (o / sigma) * (o / sigma));
    kernel[o + radius] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;
  const auto n = static_cast<std::ptrdiff_t>(c.size());
  std::vector<Vec3> out(c.size(), Vec3::Zero());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
      out[i] += kernel[o + radius] * c[detail::reflect_index(i + o, n)];
    }
  }
  return Centerline(std::move(out));
}

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m;
}

/// r_i (1 + eps_i), eps ~ N(0, sigma^2) (or r_i + eps_i in absolute mode),
/// clamped to >= 0.05 median(r).
inline RadiusProfile perturb_radius(const RadiusProfile& r, double sigma, Rng& rng,
                                    bool absolute = false) {
  if (!(sigma >= 0)) throw Error("perturb_radius: sigma must be >= 0");
  if (sigma == 0.0) return r;
  const double floor = 0.05 * median(r.radii);
  std::normal_distribution<double> gauss(0.0, sigma);
  RadiusProfile out = r;
  for (auto& v : out.radii) {
    const double eps = gauss(rng);
    v = std::max(absolute ? v + eps : v * (1.0 + eps), floor);
  }
  return out;
}

/// Lesion points: r_i < ratio * moving median of r over a centered window.
inline std::vector<bool> derive_lesion_mask(const RadiusProfile& r, std::size_t window = 101,
                                            double ratio = 0.7) {
  const std::size_t n = r.size();
  const std::size_t half = window / 2;
  std::vector<bool> mask(n, false);
  std::vector<double> buf;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    buf.assign(r.radii.begin() + static_cast<std::ptrdiff_t>(lo),
               r.radii.begin() + static_cast<std::ptrdiff_t>(hi));
    mask[i] = r[i] < ratio * median(buf);
  }
  return mask;
}

/// Nearest-point transfer of a mask between two arc-fraction grids.
inline std::vector<bool> transfer_mask(const std::vector<bool>& mask, std::span<const double> src,
                                       std::span<const double> dst) {
  std::vector<bool> out(dst.size(), false);
  std::size_t seg = 0;
  for (std::size_t j = 0; j < dst.size(); ++j) {
    while (seg + 1 < src.size() && src[seg + 1] < dst[j]) ++seg;
    const std::size_t nearest =
        (seg + 1 < src.size() && src[seg + 1] - dst[j] < dst[j] - src[seg]) ? seg + 1 : seg;
    out[j] = mask[nearest];
  }
  return out;
}

/// Sweep circular sections; the lesion mask defaults to the moving-median rule.
inline DigitalTwin sweep(const Centerline& c, const RadiusProfile& r, std::size_t k) {
  DigitalTwin t = make_swept_twin(c, r, k, derive_lesion_mask(r));
  t.meta.kind = "synthetic";
  return t;
}

/// Pair donor_centerline's trajectory with donor_radius's caliber.
inline DigitalTwin synthesize(const DigitalTwin& donor_centerline, const DigitalTwin& donor_radius,
                              const AugmentParams& p) {
  p.validate();
  if (donor_centerline.size() < 2 || donor_radius.size() < 2) {
    throw Error("synthesize: donor too short (< 2 points)");
  }
  Rng rng(p.seed);

  // Work in physical cm regardless of the donors' stored scale.
  std::vector<Vec3> pts;
  pts.reserve(donor_centerline.size());
  for (const auto& q : donor_centerline.centerline.points()) {
    pts.push_back(q / donor_centerline.meta.unit_scale);
  }
  Centerline c(std::move(pts));
  c = rotate(c, p.euler);
  c = bend(c, p.bend_amplitude, p.bend_frequency, rng);
  c = smooth(c, p.smoothing_sigma);
  c = resample(c, p.target_n);

  const auto src = arc_fractions(donor_radius.centerline);
  std::vector<double> dst(p.target_n);
  for (std::size_t j = 0; j < dst.size(); ++j) {
    dst[j] = static_cast<double>(j) / static_cast<double>(p.target_n - 1);
  }
  RadiusProfile r{vtwin::detail::interpolate(src, donor_radius.radii.radii, dst)};
  for (auto& v : r.radii) v /= donor_radius.meta.unit_scale;
  r = perturb_radius(r, p.radius_noise_sigma, rng, p.absolute_radius_noise);

  std::vector<bool> mask = donor_radius.lesion_mask.size() == donor_radius.size()
                               ? transfer_mask(donor_radius.lesion_mask, src, dst)
                               : derive_lesion_mask(r);

  TwinMeta meta;
  meta.id = "syn-" + std::to_string(p.seed);
  meta.kind = "synthetic";
  meta.source_ids = {donor_centerline.meta.id, donor_radius.meta.id};
  meta.augment = p;
  meta.seed = p.seed;
  return normalize_scale(make_swept_twin(std::move(c), std::move(r), p.target_k, std::move(mask),
                                         std::move(meta)));
}

/// Draw augmentation parameters: Euler angles over their full ranges, the
/// rest uniform within `ranges`.
inline AugmentParams sample_params(const AugmentRanges& ranges, std::uint64_t seed,
                                   std::size_t target_n, std::size_t target_k) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto uni = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  constexpr double pi = std::numbers::pi;
  AugmentParams p;
  p.euler = {uni(-pi, pi), uni(-pi / 2, pi / 2), uni(-pi, pi)};
  p.bend_amplitude = uni(0.0, ranges.bend_amplitude_max);
  p.bend_frequency = uni(ranges.bend_frequency_min, ranges.bend_frequency_max);
  p.smoothing_sigma = uni(0.0, ranges.smoothing_sigma_max);
  p.radius_noise_sigma = uni(0.0, ranges.radius_noise_sigma_max);
  p.target_n = target_n;
  p.target_k = target_k;
  p.seed = seed;
  return p;
}

// ---------------------------------------------------------------------------
// Phantom donors: procedural stand-ins for reconstructed patient twins.

struct PhantomParams {
  std::size_t n_points = 200;
  std::size_t k = 64;
  double length_min = 4.0, length_max = 8.0;  // cm
  double r0_min = 0.15, r0_max = 0.22;        // proximal radius, cm
  double taper_min = 0.8, taper_max = 0.95;   // distal / proximal radius
  double ds_min = 0.2, ds_max = 0.6;          // diameter stenosis fraction
  std::size_t max_stenoses = 2;
};

inline DigitalTwin make_phantom(std::uint64_t seed, const PhantomParams& pp = {}) {
  Rng rng(seed);
  auto uni = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  constexpr double pi = std::numbers::pi;
  const std::size_t n = pp.n_points;
  const double length = uni(pp.length_min, pp.length_max);
  const double ay = uni(0.2, 0.8), az = uni(0.1, 0.6);
  const double wy = uni(0.5, 1.5), wz = uni(0.5, 1.5);
  const double py = uni(0.0, 2 * pi), pz = uni(0.0, 2 * pi);
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n - 1);
    pts[i] = Vec3(length * f, ay * std::sin(2 * pi * wy * f + py), az * std::sin(2 * pi * wz * f + pz));
  }
  Centerline c = resample(Centerline(std::move(pts)), n);

  const double r0 = uni(pp.r0_min, pp.r0_max);
  const double taper = uni(pp.taper_min, pp.taper_max);
  const std::size_t count = std::uniform_int_distribution<std::size_t>(0, pp.max_stenoses)(rng);
  RadiusProfile r;
  r.radii.resize(n);
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n - 1);
    r.radii[i] = r0 * (1.0 + (taper - 1.0) * f);
  }
  for (std::size_t s = 0; s < count; ++s) {
    const double centre = uni(0.2, 0.8);
    const double half_width = uni(0.05, 0.12);
    const double severity = uni(pp.ds_min, pp.ds_max);
    for (std::size_t i = 0; i < n; ++i) {
      const double f = static_cast<double>(i) / static_cast<double>(n - 1);
      const double x = (f - centre) / half_width;
      if (std::abs(x) >= 1.0) continue;
      const double narrowing = severity * 0.5 * (1.0 + std::cos(pi * x));
      r.radii[i] *= 1.0 - narrowing;
      if (narrowing >= 0.25 * severity) mask[i] = true;
    }
  }
  TwinMeta meta;
  meta.id = "phantom-" + std::to_string(seed);
  meta.kind = "phantom";
  meta.seed = seed;
  return make_swept_twin(std::move(c), std::move(r), pp.k, std::move(mask), std::move(meta));
}

}  // namespace vtwin::a3m
