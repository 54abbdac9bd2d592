#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prolora/adapter.hpp"

namespace prolora {

/// One linear projection type of a model: `count` instances mapping h -> o.
struct LinearModule {
  std::string name;
  std::size_t h = 0;
  std::size_t o = 0;
  std::size_t count = 0;
};

struct ModelArch {
  std::string name;
  std::vector<LinearModule> layers;
};

/// Built-in presets: llama2-7b, llama2-13b, llama2-70b.
std::optional<ModelArch> preset_arch(std::string_view name);
std::vector<std::string> preset_names();

/// Parses a JSON array of {name, h, o, count} (or an object {name, layers: [...]}).
ModelArch arch_from_json(const nlohmann::json& j, std::string name = "custom");
nlohmann::json arch_to_json(const ModelArch& arch);

enum class Method { lora, prolora, vera, tied_lora };
std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

std::uint64_t count_lora(const ModelArch& arch, std::size_t rank);
std::uint64_t count_prolora(const ModelArch& arch, const AdapterConfig& cfg);
/// One rank-length and one output-length scaling vector per module instance.
std::uint64_t count_vera(const ModelArch& arch, std::size_t rank);
/// Assumed composition: one shared r x h down projection for q/k/v, three o x r up
/// projections, and per-layer r- and o-length scaling vectors for each of q, k and v.
/// Requires q_proj, k_proj and v_proj of identical shape.
std::uint64_t count_tied_lora(const ModelArch& arch, std::size_t rank);

/// Bytes under 32-bit storage and mebibytes rounded to nearest (ties up).
constexpr std::uint64_t bytes_f32(std::uint64_t params) { return params * 4; }
constexpr std::uint64_t mebibytes_rounded(std::uint64_t bytes) {
  return (bytes + (std::uint64_t{1} << 19)) >> 20;
}
/// "5.00M"-style rendering (millions, two decimals).
std::string format_millions(std::uint64_t params);

struct PlanReport {
  Method method = Method::lora;
  std::string arch;
  nlohmann::json config;
  std::uint64_t params = 0;
  std::uint64_t bytes = 0;
  std::uint64_t megabytes = 0;
  std::vector<std::string> notes;
};

PlanReport plan_lora(const ModelArch& arch, std::size_t rank);
PlanReport plan_prolora(const ModelArch& arch, const AdapterConfig& cfg);
PlanReport plan_vera(const ModelArch& arch, std::size_t rank);
PlanReport plan_tied_lora(const ModelArch& arch, std::size_t rank);

nlohmann::json to_json(const PlanReport& report);
std::string to_table(const std::vector<PlanReport>& reports);

struct BudgetCandidate {
  std::size_t rank = 0;
  std::size_t unshared_rank = 0;
  std::size_t share_rate = 1;
  std::uint64_t params = 0;
};

struct BudgetSearch {
  std::size_t max_rank = 64;
  std::size_t max_share_rate = 16;
};

/// Enumerates (r, u, m = n) with r <= max_rank, u <= r, m <= max_share_rate and keeps
/// configurations whose count lies in [budget(1 - tol), budget(1 + tol)]. Sharing with
/// m = 1 is identical to LoRA, so it is only reported as u = r. Sorted by descending r,
/// then descending u, then ascending m.
std::vector<BudgetCandidate> solve_budget(const ModelArch& arch, std::uint64_t budget,
                                          double tolerance, BudgetSearch limits = {});

AdapterConfig to_config(const BudgetCandidate& c, AdapterConfig base = {});
nlohmann::json to_json(const BudgetCandidate& c);

}  // namespace prolora
