#pragma once

// Vascular graph: boundary points as nodes, ring edges within a section and
// 3-nearest-neighbour links to the adjacent sections.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "vtwin/geometry.hpp"

namespace vtwin::vgraph {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Edge = std::pair<std::uint32_t, std::uint32_t>;

inline constexpr int kFeatureDim = 5;
inline constexpr std::size_t kInterSectionNeighbors = 3;

struct VascularGraph {
  Mat node_coords;    // |V| x 3
  Mat node_features;  // |V| x 5: x, y, z, section area, centerline distance
  std::vector<Edge> edges;  // undirected, first < second, sorted, unique
  std::vector<std::uint32_t> section_of_node;
  Centerline centerline;
  std::size_t k = 0;
  /// Physical-to-stored length factor inherited from the twin.
  double unit_scale = 1.0;

  std::size_t num_nodes() const { return static_cast<std::size_t>(node_coords.rows()); }
  std::size_t num_sections() const { return k == 0 ? 0 : num_nodes() / k; }
};

inline std::vector<std::vector<std::uint32_t>> adjacency(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

/// Per node: coordinates, its section's area, distance to the centerline polyline.
inline Mat compute_features(const DigitalTwin& t) {
  const std::size_t k = t.k();
  const auto areas = section_areas(t);
  Mat f(static_cast<Eigen::Index>(t.sections.size() * k), kFeatureDim);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < t.sections.size(); ++i) {
    for (const auto& q : t.sections[i].boundary) {
      f(row, 0) = q.x();
      f(row, 1) = q.y();
      f(row, 2) = q.z();
      f(row, 3) = areas[i];
      f(row, 4) = polyline_distance(q, t.centerline);
      ++row;
    }
  }
  return f;
}

/// Indices (within a section) of the `count` points of `ring` nearest to p;
/// ties go to the lower index.
inline std::vector<std::uint32_t> nearest_in_ring(const Vec3& p, const std::vector<Vec3>& ring,
                                                  std::size_t count) {
  std::vector<std::pair<double, std::uint32_t>> d(ring.size());
  for (std::size_t j = 0; j < ring.size(); ++j) {
    d[j] = {(ring[j] - p).squaredNorm(), static_cast<std::uint32_t>(j)};
  }
  count = std::min(count, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(count), d.end());
  std::vector<std::uint32_t> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = d[j].second;
  return out;
}

inline VascularGraph build_graph(const DigitalTwin& t) {
  const std::size_t k = t.k();
  if (k < 3) throw Error("build_graph: need K >= 3 boundary points per section");
  const std::size_t ns = t.sections.size();
  for (const auto& s : t.sections) {
    if (s.boundary.size() != k) throw Error("build_graph: sections have differing K");
  }
  VascularGraph g;
  g.k = k;
  g.centerline = t.centerline;
  g.unit_scale = t.meta.unit_scale;
  g.node_features = compute_features(t);
  g.node_coords = g.node_features.leftCols(3);
  g.section_of_node.resize(ns * k);
  for (std::size_t i = 0; i < ns; ++i) {
    std::fill_n(g.section_of_node.begin() + static_cast<std::ptrdiff_t>(i * k), k,
                static_cast<std::uint32_t>(i));
  }

  auto id = [k](std::size_t sec, std::size_t j) { return static_cast<std::uint32_t>(sec * k + j); };
  std::vector<Edge> edges;
  edges.reserve(ns * k * 8);
  auto add = [&edges](std::uint32_t a, std::uint32_t b) {
    if (a != b) edges.emplace_back(std::min(a, b), std::max(a, b));
  };
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& ring = t.sections[i].boundary;
    for (std::size_t j = 0; j < k; ++j) {
      add(id(i, j), id(i, (j + 1) % k));
      for (std::size_t other : {i - 1, i + 1}) {
        if (other >= ns) continue;  // wraps for i == 0
        for (auto m : nearest_in_ring(ring[j], t.sections[other].boundary, kInterSectionNeighbors)) {
          add(id(i, j), id(other, m));
        }
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  g.edges = std::move(edges);
  return g;
}

inline std::vector<Violation> graph_violations(const VascularGraph& g) {
  std::vector<Violation> out;
  const std::size_t n = g.num_nodes();
  if (g.k == 0 || n % g.k != 0) {
    out.push_back({"graph.node_count", "|V| is not n_sections x K"});
    return out;
  }
  if (g.node_features.rows() != static_cast<Eigen::Index>(n) || g.node_features.cols() != kFeatureDim) {
    out.push_back({"graph.features", "feature matrix is not |V| x 5"});
  }
  if (g.section_of_node.size() != n) out.push_back({"graph.section_of_node", "length != |V|"});
  std::vector<Edge> canon;
  canon.reserve(g.edges.size());
  for (const auto& [a, b] : g.edges) {
    if (a == b) {
      out.push_back({"graph.self_loop", "self-loop at node " + std::to_string(a)});
      return out;
    }
    if (a >= n || b >= n) {
      out.push_back({"graph.edge_range", "edge endpoint out of range"});
      return out;
    }
    canon.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(canon.begin(), canon.end());
  if (std::adjacent_find(canon.begin(), canon.end()) != canon.end()) {
    out.push_back({"graph.duplicate_edge", "duplicate undirected edge"});
  }
  const auto adj = adjacency(n, g.edges);
  const std::size_t ns = g.num_sections();
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t sec = v / g.k;
    const std::size_t need = ns < 2 ? 2 : ((sec == 0 || sec + 1 == ns) ? 5 : 8);
    if (adj[v].size() < need) {
      out.push_back({"graph.degree", "node " + std::to_string(v) + " has degree " +
                                         std::to_string(adj[v].size()) + " < " + std::to_string(need)});
      break;
    }
  }
  if (g.node_features.cols() == kFeatureDim) {
    for (std::size_t v = 0; v < n; ++v) {
      if (g.node_features(static_cast<Eigen::Index>(v), 3) !=
          g.node_features(static_cast<Eigen::Index>((v / g.k) * g.k), 3)) {
        out.push_back({"graph.area_constant", "area feature varies within section " + std::to_string(v / g.k)});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export. JSON: {format_version, num_nodes, k, unit_scale, coords[3|V|],
// features[5|V|], edges[2|E|], section_of_node[|V|], centerline[[x,y,z]...]},
// row-major flat arrays.
//
// Binary (little-endian):
//   char[8]  magic "VTGRAPH1"
//   uint64   num_nodes, num_edges, k
//   float64  coords[num_nodes * 3]
//   float64  features[num_nodes * 5]
//   uint32   edges[num_edges * 2]
//   uint32   section_of_node[num_nodes]

inline constexpr int kGraphFormatVersion = 1;

inline nlohmann::json graph_to_json(const VascularGraph& g) {
  nlohmann::json j;
  j["format_version"] = kGraphFormatVersion;
  j["num_nodes"] = g.num_nodes();
  j["k"] = g.k;
  j["unit_scale"] = g.unit_scale;
  j["coords"] = std::vector<double>(g.node_coords.data(), g.node_coords.data() + g.node_coords.size());
  j["features"] =
      std::vector<double>(g.node_features.data(), g.node_features.data() + g.node_features.size());
  std::vector<std::uint32_t> flat;
  flat.reserve(g.edges.size() * 2);
  for (const auto& [a, b] : g.edges) {
    flat.push_back(a);
    flat.push_back(b);
  }
  j["edges"] = std::move(flat);
  j["section_of_node"] = g.section_of_node;
  auto& cl = j["centerline"] = nlohmann::json::array();
  for (const auto& p : g.centerline.points()) cl.push_back({p.x(), p.y(), p.z()});
  return j;
}

inline VascularGraph graph_from_json(const nlohmann::json& j) {
  if (j.value("format_version", -1) != kGraphFormatVersion) throw Error("graph: unsupported format_version");
  VascularGraph g;
  const auto n = j.at("num_nodes").get<std::size_t>();
  g.k = j.at("k").get<std::size_t>();
  g.unit_scale = j.value("unit_scale", 1.0);
  const auto coords = j.at("coords").get<std::vector<double>>();
  const auto feats = j.at("features").get<std::vector<double>>();
  if (coords.size() != n * 3 || feats.size() != n * kFeatureDim) throw Error("graph: array size mismatch");
  g.node_coords = Eigen::Map<const Mat>(coords.data(), static_cast<Eigen::Index>(n), 3);
  g.node_features = Eigen::Map<const Mat>(feats.data(), static_cast<Eigen::Index>(n), kFeatureDim);
  const auto flat = j.at("edges").get<std::vector<std::uint32_t>>();
  if (flat.size() % 2 != 0) throw Error("graph: odd edge array");
  for (std::size_t e = 0; e < flat.size(); e += 2) g.edges.emplace_back(flat[e], flat[e + 1]);
  j.at("section_of_node").get_to(g.section_of_node);
  if (j.contains("centerline")) {
    std::vector<Vec3> pts;
    for (const auto& p : j.at("centerline")) pts.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    g.centerline = Centerline(std::move(pts));
  }
  return g;
}

namespace detail {
template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("graph: truncated binary file");
  return v;
}
}  // namespace detail

inline void write_graph_binary(std::ostream& out, const VascularGraph& g) {
  out.write("VTGRAPH1", 8);
  detail::put<std::uint64_t>(out, g.num_nodes());
  detail::put<std::uint64_t>(out, g.edges.size());
  detail::put<std::uint64_t>(out, g.k);
  out.write(reinterpret_cast<const char*>(g.node_coords.data()),
            static_cast<std::streamsize>(g.node_coords.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(g.node_features.data()),
            static_cast<std::streamsize>(g.node_features.size() * sizeof(double)));
  for (const auto& [a, b] : g.edges) {
    detail::put(out, a);
    detail::put(out, b);
  }
  for (auto s : g.section_of_node) detail::put(out, s);
}

inline VascularGraph read_graph_binary(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "VTGRAPH1", 8) != 0) throw Error("graph: bad magic");
  VascularGraph g;
  const auto n = detail::get<std::uint64_t>(in);
  const auto m = detail::get<std::uint64_t>(in);
  g.k = detail::get<std::uint64_t>(in);
  g.node_coords.resize(static_cast<Eigen::Index>(n), 3);
  g.node_features.resize(static_cast<Eigen::Index>(n), kFeatureDim);
  in.read(reinterpret_cast<char*>(g.node_coords.data()), static_cast<std::streamsize>(n * 3 * sizeof(double)));
  in.read(reinterpret_cast<char*>(g.node_features.data()),
          static_cast<std::streamsize>(n * kFeatureDim * sizeof(double)));
  if (!in) throw Error("graph: truncated binary file");
  g.edges.resize(m);
  for (auto& e : g.edges) {
    e.first = detail::get<std::uint32_t>(in);
    e.second = detail::get<std::uint32_t>(in);
  }
  g.section_of_node.resize(n);
  for (auto& s : g.section_of_node) s = detail::get<std::uint32_t>(in);
  return g;
}

}  // namespace vtwin::vgraph
