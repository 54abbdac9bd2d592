// Writes the golden container files into the directory given on the command line.

#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "fixture_states.hpp"
#include "prolora/adapter.hpp"
#include "prolora/container.hpp"

using namespace prolora;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures OUT_DIR\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  save_adapter(fixtures::main_state(), dir / "trained_f64.prla", Dtype::f64);
  save_adapter(fixtures::main_state(), dir / "trained_f32.prla", Dtype::f32);
  save_adapter(fixtures::axis_state(), dir / "axis_f64.prla", Dtype::f64,
               {{"comment", "written by make_fixtures"}, {"tool", {{"name", "make_fixtures"}, {"rev", 1}}}});
  save_adapter(fixtures::lora_state(), dir / "lora_f32.prla", Dtype::f32);

  const Matrix base = fixtures::base_weight();
  write_raw_matrix(base, dir / "base_8x6.f64", Dtype::f64);
  AdapterState s = fixtures::main_state();
  write_raw_matrix(merge(s, base), dir / "merged_8x6.f64", Dtype::f64);
  std::cout << "fixtures written to " << dir << '\n';
  return 0;
}
