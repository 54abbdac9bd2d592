#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prolora/adapter.hpp"

namespace prolora {

/// Reference gradient of the stored chunks obtained by pushing every unit chunk through
/// `broadcast` and contracting with the full-factor gradient. Independent of `fold`.
Matrix fold_by_materialization(const Matrix& expanded_grad, const BroadcastPlan& plan);

/// Plain LoRA forward and factor gradients from explicit A (r x h) and B (o x r).
struct LoraReference {
  Matrix output;
  Matrix grad_a;
  Matrix grad_b;
  Matrix grad_input;
};
LoraReference lora_reference(const Matrix& weight, const Matrix& a, const Matrix& b, double scaling,
                             const Matrix& x, const Matrix& upstream);

struct EquivOptions {
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  BackwardOptions backward = {};
};

struct EquivFailure {
  std::size_t trial = 0;
  std::string check;
  std::string detail;
};

struct EquivReport {
  std::size_t trials = 0;
  std::size_t passed = 0;
  std::vector<EquivFailure> failures;
  bool ok() const noexcept { return failures.empty(); }
};

/// Randomized equivalence battery. Each trial draws a layer and configuration and checks:
/// "superset" (u = r equals plain LoRA in outputs, gradients and counts), "clora degeneration"
/// and "rolora degeneration" (against an index-formula construction of the expanded factors),
/// "merge round-trip", "merged forward", "block pattern" (when dimensions divide) and
/// "adjoint mismatch" (fold against fold_by_materialization).
EquivReport run_equivalence(const EquivOptions& options);
nlohmann::json to_json(const EquivReport& report);

}  // namespace prolora
