// Builds two phantom donors, synthesizes a twin from them, writes it to JSON,
// reads it back and prints its graph size and reference FFR.
//
//   twin_roundtrip [out.json]

#include <filesystem>
#include <iostream>

#include "vtwin/vtwin.hpp"

int main(int argc, char** argv) {
  using namespace vtwin;
  const std::string path = argc > 1 ? argv[1] : (std::filesystem::temp_directory_path() / "syn-42.json").string();

  const auto a = a3m::make_phantom(1), b = a3m::make_phantom(2);
  a3m::AugmentParams p;
  p.euler = {0.3, -0.2, 1.1};
  p.bend_amplitude = 0.02;
  p.bend_frequency = 1.0;
  p.seed = 42;
  const auto twin = a3m::synthesize(a, b, p);
  io::write_twin(path, twin);

  const auto back = io::read_twin(path);
  check_twin(back);
  const auto graph = vgraph::build_graph(back);
  const auto seg = hemo::derive_segments(back);
  const auto h = hemo::pressure_profile(hemo::physical_geometry(back), seg, 3.0, 100 * hemo::kDynePerMmHg);

  std::cout << back.meta.id << " from " << back.meta.source_ids[0] << " + " << back.meta.source_ids[1] << '\n'
            << "  points " << back.size() << ", nodes " << graph.num_nodes() << ", edges " << graph.edges.size() << '\n'
            << "  lesions " << hemo::lesion_count(seg) << ", distal FFR " << h.ffr.back() << '\n';
}
