#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "support.hpp"
#include "vtwin/a3m.hpp"
#include "vtwin/twin_io.hpp"

using namespace vtwin;
using namespace vtwin::a3m;
using vtwin::testing::line_z;
constexpr double pi = std::numbers::pi;

namespace {

double turning(const Centerline& c) {
  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < c.size(); ++i) {
    const Vec3 a = (c[i] - c[i - 1]).normalized(), b = (c[i + 1] - c[i]).normalized();
    sum += std::acos(std::clamp(a.dot(b), -1.0, 1.0));
  }
  return sum;
}

}  // namespace

TEST(Rotate, IdentityAngles) {
  const auto c = vtwin::testing::helix(30);
  const auto r = rotate(c, {0, 0, 0});
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LT((r[i] - c[i]).norm(), 1e-12);
}

TEST(Rotate, HalfTurnAboutZ) {
  // Centroid at the origin; first point offset (1, 0, 0).
  const Centerline c({Vec3(1, 0, 0), Vec3(-1, 0, 0)});
  const auto r = rotate(c, {pi, 0, 0});
  EXPECT_LT((r[0] - Vec3(-1, 0, 0)).norm(), 1e-12);
  EXPECT_LT((r[1] - Vec3(1, 0, 0)).norm(), 1e-12);
}

TEST(Rotate, IsometryOnRandomPairs) {
  const auto c = make_phantom(3).centerline;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(-pi, pi);
  std::uniform_int_distribution<std::size_t> pick(0, c.size() - 1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = rotate(c, {ang(rng), ang(rng), ang(rng)});
    for (int k = 0; k < 50; ++k) {
      const std::size_t i = pick(rng), j = pick(rng);
      EXPECT_NEAR((r[i] - r[j]).norm(), (c[i] - c[j]).norm(), 1e-9);
    }
  }
}

TEST(RotationMatrix, ZyxComposition) {
  const std::array<double, 3> e{0.4, -0.7, 1.2};
  const Eigen::Matrix3d expect = Eigen::AngleAxisd(e[0], Vec3::UnitZ()).toRotationMatrix() *
                                 Eigen::AngleAxisd(e[1], Vec3::UnitY()).toRotationMatrix() *
                                 Eigen::AngleAxisd(e[2], Vec3::UnitX()).toRotationMatrix();
  EXPECT_LT((rotation_matrix(e) - expect).norm(), 1e-14);
}

TEST(Bend, ZeroAmplitudeIsIdentity) {
  Rng rng(1);
  const auto c = vtwin::testing::helix(20);
  const auto b = bend(c, 0.0, 1.0, rng);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(b[i], c[i]);
}

TEST(Bend, EndpointsFixedAndPeakAmplitude) {
  Rng rng(2);
  const auto c = line_z(401, 1.0);
  const auto b = bend(c, 0.1, 1.0, rng);
  EXPECT_LT((b[0] - c[0]).norm(), 1e-12);
  EXPECT_LT((b[400] - c[400]).norm(), 1e-12);
  double peak = 0.0;
  std::size_t where = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = (b[i] - c[i]).norm();
    if (d > peak) peak = d, where = i;
  }
  EXPECT_NEAR(peak, 0.1, 0.002);
  EXPECT_TRUE(where == 100 || where == 300);
  // displacement is orthogonal to the chord
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR((b[i] - c[i]).z(), 0.0, 1e-12);
}

TEST(Bend, DegenerateChordRejected) {
  std::vector<Vec3> loop;
  for (int i = 0; i <= 8; ++i) loop.emplace_back(std::cos(2 * pi * i / 8), std::sin(2 * pi * i / 8), 0);
  loop.back() = loop.front();
  Rng rng(3);
  EXPECT_THROW(bend(Centerline(loop), 0.1, 1.0, rng), Error);
}

TEST(Smooth, ZeroSigmaIdentityAndConstants) {
  const auto c = vtwin::testing::helix(25);
  const auto s = smooth(c, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(s[i], c[i]);
  const auto line = line_z(30, 2.0);
  const auto sl = smooth(line, 2.5);
  for (std::size_t i = 0; i < line.size(); ++i) {
    EXPECT_NEAR(sl[i].x(), 0.0, 1e-15);
    EXPECT_NEAR(sl[i].y(), 0.0, 1e-15);
  }
  EXPECT_EQ(sl.size(), line.size());
}

TEST(Smooth, ReducesZigZagTurning) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 40; ++i) pts.emplace_back(i % 2 == 0 ? 0.0 : 0.3, 0.0, 0.1 * i);
  const Centerline zz(pts);
  EXPECT_LT(turning(smooth(zz, 2.0)), turning(zz));
}

TEST(PerturbRadius, IdentityAndPositivity) {
  Rng rng(5);
  RadiusProfile r{std::vector<double>(50, 0.2)};
  EXPECT_EQ(perturb_radius(r, 0.0, rng).radii, r.radii);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng g(seed);
    for (double v : perturb_radius(r, 3.0, g).radii) EXPECT_GE(v, 0.05 * 0.2);
  }
}

TEST(PerturbRadius, EmpiricalSigma) {
  Rng rng(6);
  RadiusProfile r{std::vector<double>(10000, 1.0)};
  const auto p = perturb_radius(r, 0.05, rng);
  double m = 0, s = 0;
  for (double v : p.radii) m += v - 1.0;
  m /= 10000;
  for (double v : p.radii) s += (v - 1.0 - m) * (v - 1.0 - m);
  s = std::sqrt(s / 9999);
  EXPECT_NEAR(s, 0.05, 0.005);
}

TEST(Sweep, UnitCircleAtFourPoints) {
  const auto t = sweep(line_z(3, 2.0), RadiusProfile{{1.0, 1.0, 1.0}}, 4);
  ASSERT_EQ(t.k(), 4u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = t.sections[i];
    for (std::size_t j = 0; j < 4; ++j) {
      const Vec3 d = s.boundary[j] - s.center;
      EXPECT_NEAR(d.z(), 0.0, 1e-12);
      EXPECT_NEAR(d.norm(), 1.0, 1e-12);
      // quarter-turn steps: consecutive offsets orthogonal, opposite ones antiparallel
      EXPECT_NEAR(d.dot(s.boundary[(j + 1) % 4] - s.center), 0.0, 1e-12);
      EXPECT_LT((d + (s.boundary[(j + 2) % 4] - s.center)).norm(), 1e-12);
    }
    EXPECT_LT((s.boundary[0] - s.center - t.sections[0].boundary[0] + t.sections[0].center).norm(), 1e-12);
  }
}

TEST(Sweep, DistanceAndPolygonArea) {
  const auto c = vtwin::testing::helix(60);
  RadiusProfile r;
  for (std::size_t i = 0; i < 60; ++i) r.radii.push_back(0.1 + 0.001 * double(i));
  const auto t = sweep(c, r, 24);
  EXPECT_EQ(t.size(), 60u);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(t.sections[i].boundary.size(), 24u);
    for (const auto& q : t.sections[i].boundary) EXPECT_NEAR((q - t.sections[i].center).norm(), r[i], 1e-9);
    EXPECT_NEAR(section_area(t.sections[i]), 12.0 * r[i] * r[i] * std::sin(2 * pi / 24), 1e-12);
  }
  EXPECT_TRUE(twin_violations(t).empty());
}

TEST(LesionMask, MovingMedianRule) {
  RadiusProfile r{std::vector<double>(300, 0.2)};
  for (std::size_t i = 140; i < 160; ++i) r.radii[i] = 0.1;
  const auto m = derive_lesion_mask(r);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(m[i], i >= 140 && i < 160) << i;
}

TEST(Synthesize, IdentityPipeline) {
  const auto donor = make_phantom(8);
  AugmentParams p;
  p.target_n = donor.size();
  p.target_k = donor.k();
  const auto s = synthesize(donor, donor, p);
  const auto expect = normalize_scale(resample_twin(donor, p.target_n, p.target_k));
  ASSERT_EQ(s.size(), expect.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_LT((s.centerline[i] - expect.centerline[i]).norm(), 1e-9);
    EXPECT_NEAR(s.radii[i], expect.radii[i], 1e-9);
    for (std::size_t j = 0; j < s.k(); ++j) {
      EXPECT_LT((s.sections[i].boundary[j] - expect.sections[i].boundary[j]).norm(), 1e-9);
    }
  }
  EXPECT_EQ(s.lesion_mask, expect.lesion_mask);
  EXPECT_NEAR(s.meta.unit_scale, expect.meta.unit_scale, 1e-12);
}

TEST(Synthesize, DeterministicBytes) {
  const auto a = make_phantom(1), b = make_phantom(2);
  const auto p = sample_params({}, 77, 120, 32);
  EXPECT_EQ(io::twin_to_string(synthesize(a, b, p)), io::twin_to_string(synthesize(a, b, p)));
  auto q = p;
  q.seed = 78;
  EXPECT_NE(io::twin_to_string(synthesize(a, b, p)), io::twin_to_string(synthesize(a, b, q)));
}

TEST(Synthesize, MetaRecordsProvenance) {
  const auto a = make_phantom(1), b = make_phantom(2);
  const auto p = sample_params({}, 5, 50, 16);
  const auto s = synthesize(a, b, p);
  EXPECT_EQ(s.meta.kind, "synthetic");
  EXPECT_EQ(s.meta.source_ids, (std::vector<std::string>{a.meta.id, b.meta.id}));
  EXPECT_EQ(s.meta.seed, std::optional<std::uint64_t>(5));
  EXPECT_EQ(s.meta.augment.get<AugmentParams>().seed, 5u);
  EXPECT_NEAR(s.centerline.total_length(), 1.0, 1e-9);
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(s.k(), 16u);
}

TEST(Synthesize, RadiusRatioPreservedWithoutNoise) {
  const auto a = make_phantom(21), b = make_phantom(22);
  auto p = sample_params({}, 9, b.size(), 16);
  p.radius_noise_sigma = 0.0;
  const auto s = synthesize(a, b, p);
  auto ratio = [](const RadiusProfile& r) {
    return *std::min_element(r.radii.begin(), r.radii.end()) / *std::max_element(r.radii.begin(), r.radii.end());
  };
  EXPECT_NEAR(ratio(s.radii), ratio(b.radii), 1e-9);
}

TEST(Synthesize, CorpusPassesInvariants) {
  std::vector<DigitalTwin> donors;
  for (std::uint64_t i = 0; i < 5; ++i) donors.push_back(make_phantom(100 + i));
  for (std::uint64_t i = 0; i < 60; ++i) {
    const auto p = sample_params({}, i, 80, 16);
    const auto s = synthesize(donors[i % 5], donors[(i * 3 + 1) % 5], p);
    const auto v = twin_violations(s);
    EXPECT_TRUE(v.empty()) << (v.empty() ? "" : v.front().invariant + ": " + v.front().detail);
  }
}

TEST(Synthesize, RejectsBadParams) {
  const auto a = make_phantom(1);
  AugmentParams p;
  p.bend_amplitude = -0.1;
  EXPECT_THROW(synthesize(a, a, p), Error);
  p = {};
  p.target_k = 2;
  EXPECT_THROW(synthesize(a, a, p), Error);
}

TEST(Phantom, ValidAndDeterministic) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto t = make_phantom(s);
    EXPECT_TRUE(twin_violations(t).empty());
    EXPECT_EQ(t.meta.kind, "phantom");
  }
  EXPECT_EQ(io::twin_to_string(make_phantom(3)), io::twin_to_string(make_phantom(3)));
}
