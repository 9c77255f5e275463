#pragma once

// Versioned JSON twin files and PLY point-cloud export.

#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "vtwin/a3m.hpp"
#include "vtwin/geometry.hpp"

namespace vtwin::io {

inline constexpr int kTwinFormatVersion = 1;

inline nlohmann::json meta_to_json(const TwinMeta& m) {
  nlohmann::json j{{"id", m.id},
                   {"kind", m.kind},
                   {"source_ids", m.source_ids},
                   {"augment", m.augment},
                   {"unit_scale", m.unit_scale}};
  j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
  return j;
}

inline TwinMeta meta_from_json(const nlohmann::json& j) {
  TwinMeta m;
  m.id = j.value("id", std::string{});
  m.kind = j.value("kind", std::string{"imported"});
  if (j.contains("source_ids")) j.at("source_ids").get_to(m.source_ids);
  if (j.contains("augment")) m.augment = j.at("augment");
  if (j.contains("seed") && !j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
  m.unit_scale = j.value("unit_scale", 1.0);
  return m;
}

inline nlohmann::json twin_to_json(const DigitalTwin& t, bool include_sections = true) {
  nlohmann::json j;
  j["format_version"] = kTwinFormatVersion;
  j["meta"] = meta_to_json(t.meta);
  auto& cl = j["centerline"] = nlohmann::json::array();
  for (const auto& p : t.centerline.points()) cl.push_back({p.x(), p.y(), p.z()});
  j["radii"] = t.radii.radii;
  auto& mask = j["lesion_mask"] = nlohmann::json::array();
  for (bool b : t.lesion_mask) mask.push_back(b ? 1 : 0);
  if (include_sections) {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& s : t.sections) {
      nlohmann::json ring = nlohmann::json::array();
      for (const auto& q : s.boundary) ring.push_back({q.x(), q.y(), q.z()});
      b.push_back(std::move(ring));
    }
    j["sections"] = {{"k", t.k()}, {"boundary", std::move(b)}};
  }
  return j;
}

/// Parse a twin document. Missing sections are re-swept with `default_k`
/// points; a missing lesion mask is derived from the radius profile.
inline DigitalTwin twin_from_json(const nlohmann::json& j, std::size_t default_k = 64) {
  if (!j.is_object()) throw Error("twin: document is not a JSON object");
  const int version = j.value("format_version", -1);
  if (version != kTwinFormatVersion) {
    throw Error("twin: unsupported format_version " + std::to_string(version));
  }
  DigitalTwin t;
  t.meta = meta_from_json(j.value("meta", nlohmann::json::object()));
  std::vector<Vec3> pts;
  for (const auto& p : j.at("centerline")) {
    if (p.size() != 3) throw Error("twin: centerline entries must be [x, y, z]");
    pts.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  t.centerline = Centerline(std::move(pts));
  j.at("radii").get_to(t.radii.radii);
  if (t.radii.size() != t.centerline.size()) {
    throw InvariantError("radii.length", "radius profile length != centerline length");
  }
  if (j.contains("lesion_mask")) {
    for (const auto& b : j.at("lesion_mask")) {
      t.lesion_mask.push_back(b.is_boolean() ? b.get<bool>() : b.get<int>() != 0);
    }
  } else {
    t.lesion_mask = a3m::derive_lesion_mask(t.radii);
  }
  const bool has_boundary = j.contains("sections") && j.at("sections").contains("boundary");
  if (!has_boundary) {
    const std::size_t k = j.contains("sections") ? j.at("sections").value("k", default_k) : default_k;
    t.sections = sweep_sections(t.centerline, t.radii, k);
    return t;
  }
  const auto frames = compute_frames(t.centerline);
  const auto& rings = j.at("sections").at("boundary");
  if (rings.size() != t.centerline.size()) {
    throw InvariantError("sections.length", "section count != centerline length");
  }
  t.sections.resize(rings.size());
  for (std::size_t i = 0; i < rings.size(); ++i) {
    auto& s = t.sections[i];
    s.center = t.centerline[i];
    s.frame = frames[i];
    for (const auto& q : rings[i]) {
      if (q.size() != 3) throw Error("twin: boundary entries must be [x, y, z]");
      s.boundary.emplace_back(q[0].get<double>(), q[1].get<double>(), q[2].get<double>());
    }
  }
  return t;
}

inline std::string twin_to_string(const DigitalTwin& t, bool include_sections = true) {
  return twin_to_json(t, include_sections).dump();
}

inline void write_twin(const std::string& path, const DigitalTwin& t, bool include_sections = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << twin_to_string(t, include_sections) << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline DigitalTwin read_twin(const std::string& path, std::size_t default_k = 64) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": parse error: " + e.what());
  }
  try {
    return twin_from_json(j, default_k);
  } catch (const InvariantError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": schema error: " + e.what());
  }
}

/// ASCII PLY of all boundary points with one scalar property per point.
inline void write_ply(std::ostream& out, const DigitalTwin& t, const std::string& scalar_name,
                      const std::vector<double>& per_point) {
  std::size_t count = 0;
  for (const auto& s : t.sections) count += s.boundary.size();
  if (per_point.size() != count) throw Error("write_ply: scalar channel length mismatch");
  out << "ply\nformat ascii 1.0\n";
  out << "comment twin " << t.meta.id << '\n';
  out << "element vertex " << count << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property double " << scalar_name << "\nend_header\n";
  std::ostringstream line;
  line.precision(10);
  std::size_t idx = 0;
  for (const auto& s : t.sections) {
    for (const auto& q : s.boundary) {
      line.str("");
      line << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << per_point[idx++] << '\n';
      out << line.str();
    }
  }
}

/// Broadcast a per-section value to every boundary point of that section.
inline std::vector<double> per_section_to_points(const DigitalTwin& t, const std::vector<double>& v) {
  std::vector<double> out;
  for (std::size_t i = 0; i < t.sections.size(); ++i) {
    out.insert(out.end(), t.sections[i].boundary.size(), v.at(i));
  }
  return out;
}

}  // namespace vtwin::io
