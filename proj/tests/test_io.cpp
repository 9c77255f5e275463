#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vtwin/twin_io.hpp"

using namespace vtwin;
using namespace vtwin::io;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vtwin_io_" + name)).string();
}

void expect_same(const DigitalTwin& a, const DigitalTwin& b) {
  EXPECT_EQ(a.centerline.points(), b.centerline.points());
  EXPECT_EQ(a.radii.radii, b.radii.radii);
  EXPECT_EQ(a.lesion_mask, b.lesion_mask);
  ASSERT_EQ(a.sections.size(), b.sections.size());
  for (std::size_t i = 0; i < a.sections.size(); ++i) EXPECT_EQ(a.sections[i].boundary, b.sections[i].boundary);
  EXPECT_EQ(a.meta.id, b.meta.id);
  EXPECT_EQ(a.meta.kind, b.meta.kind);
  EXPECT_EQ(a.meta.source_ids, b.meta.source_ids);
  EXPECT_EQ(a.meta.augment, b.meta.augment);
  EXPECT_EQ(a.meta.seed, b.meta.seed);
  EXPECT_EQ(a.meta.unit_scale, b.meta.unit_scale);
}

}  // namespace

TEST(TwinJson, RoundTripIsExact) {
  const auto donor_a = a3m::make_phantom(1), donor_b = a3m::make_phantom(2);
  a3m::AugmentParams p;
  p.seed = 5;
  const auto t = a3m::synthesize(donor_a, donor_b, p);
  const auto back = twin_from_json(nlohmann::json::parse(twin_to_string(t)));
  expect_same(t, back);
  EXPECT_TRUE(twin_violations(back).empty());

  const auto path = temp_path("roundtrip.json");
  write_twin(path, t);
  expect_same(t, read_twin(path));
  std::filesystem::remove(path);
}

TEST(TwinJson, MissingSectionsAreResweptAndMaskDerived) {
  const auto t = a3m::make_phantom(3);
  auto j = twin_to_json(t, false);
  EXPECT_FALSE(j.contains("sections"));
  const auto back = twin_from_json(j, t.k());
  expect_same(t, back);
  j.erase("lesion_mask");
  EXPECT_EQ(twin_from_json(j).lesion_mask, a3m::derive_lesion_mask(t.radii));
  j["sections"] = {{"k", 12}};
  EXPECT_EQ(twin_from_json(j).k(), 12u);
}

TEST(TwinJson, RejectsBadDocuments) {
  const auto t = vtwin::testing::uniform_tube(5, 1.0, 0.2, 8);
  auto j = twin_to_json(t);
  auto bad_version = j;
  bad_version["format_version"] = 7;
  EXPECT_THROW(twin_from_json(bad_version), Error);
  auto bad_radii = j;
  bad_radii["radii"].erase(0);
  try {
    twin_from_json(bad_radii);
    FAIL();
  } catch (const InvariantError& e) {
    EXPECT_EQ(e.invariant(), "radii.length");
  }
  auto bad_point = j;
  bad_point["centerline"][1] = {1.0, 2.0};
  EXPECT_THROW(twin_from_json(bad_point), Error);
  EXPECT_THROW(twin_from_json(nlohmann::json::array()), Error);

  const auto path = temp_path("garbage.json");
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(read_twin(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_twin(temp_path("does_not_exist.json")), Error);
}

TEST(TwinJson, DetectsCorruptedSections) {
  const auto t = vtwin::testing::uniform_tube(6, 1.0, 0.2, 8);
  auto j = twin_to_json(t);
  j["sections"]["boundary"][2][3] = {5.0, 5.0, 5.0};
  const auto back = twin_from_json(j);
  EXPECT_FALSE(twin_violations(back).empty());
  EXPECT_THROW(check_twin(back), InvariantError);
}

TEST(Ply, HeaderAndRows) {
  const auto t = vtwin::testing::uniform_tube(3, 1.0, 0.2, 4);
  std::ostringstream out;
  write_ply(out, t, "ffr", per_section_to_points(t, {1.0, 0.95, 0.9}));
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  EXPECT_EQ(lines[0], "ply");
  EXPECT_EQ(lines[1], "format ascii 1.0");
  EXPECT_EQ(lines[3], "element vertex 12");
  EXPECT_EQ(lines[7], "property double ffr");
  EXPECT_EQ(lines[8], "end_header");
  ASSERT_EQ(lines.size(), 9u + 12u);
  std::istringstream row(lines.back());
  double x, y, z, s;
  row >> x >> y >> z >> s;
  EXPECT_NEAR(s, 0.9, 1e-12);
  EXPECT_NEAR(z, 1.0, 1e-9);
  EXPECT_NEAR(std::hypot(x, y), 0.2, 1e-9);
  EXPECT_THROW(write_ply(out, t, "ffr", {1.0}), Error);
}
