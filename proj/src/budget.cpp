#include "prolora/budget.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include "prolora/errors.hpp"

namespace prolora {

namespace {

ModelArch llama_block(std::string name, std::size_t blocks, std::size_t hidden,
                      std::size_t kv_out, std::size_t intermediate) {
  ModelArch a;
  a.name = std::move(name);
  a.layers = {
      {"q_proj", hidden, hidden, blocks},
      {"k_proj", hidden, kv_out, blocks},
      {"v_proj", hidden, kv_out, blocks},
      {"o_proj", hidden, hidden, blocks},
      {"gate_proj", hidden, intermediate, blocks},
      {"up_proj", hidden, intermediate, blocks},
      {"down_proj", intermediate, hidden, blocks},
  };
  return a;
}

// Reference LoRA counts at r = 2 that all-linear-layer counting of the public shapes
// does not reproduce for the larger presets.
struct ReferenceFigure {
  std::string_view arch;
  std::string_view figure;
};
constexpr ReferenceFigure kUnmatchedReferences[] = {
    {"llama2-13b", "6.26M"},
    {"llama2-70b", "11.27M"},
};

const LinearModule* find_module(const ModelArch& arch, std::initializer_list<std::string_view> names) {
  for (const auto& m : arch.layers) {
    for (auto n : names) {
      if (m.name == n) return &m;
    }
  }
  return nullptr;
}

PlanReport make_report(Method method, const ModelArch& arch, nlohmann::json config,
                       std::uint64_t params) {
  PlanReport r;
  r.method = method;
  r.arch = arch.name;
  r.config = std::move(config);
  r.params = params;
  r.bytes = bytes_f32(params);
  r.megabytes = mebibytes_rounded(r.bytes);
  return r;
}

}  // namespace

std::optional<ModelArch> preset_arch(std::string_view name) {
  if (name == "llama2-7b") return llama_block("llama2-7b", 32, 4096, 4096, 11008);
  if (name == "llama2-13b") return llama_block("llama2-13b", 40, 5120, 5120, 13824);
  if (name == "llama2-70b") return llama_block("llama2-70b", 80, 8192, 1024, 28672);
  return std::nullopt;
}

std::vector<std::string> preset_names() { return {"llama2-7b", "llama2-13b", "llama2-70b"}; }

ModelArch arch_from_json(const nlohmann::json& j, std::string name) {
  const nlohmann::json* list = &j;
  if (j.is_object()) {
    if (j.contains("name")) name = j.at("name").get<std::string>();
    list = &j.at("layers");
  }
  if (!list->is_array() || list->empty()) {
    throw ArgumentError("architecture JSON must be a non-empty array of {name, h, o, count}");
  }
  ModelArch arch;
  arch.name = std::move(name);
  for (const auto& e : *list) {
    LinearModule m;
    m.name = e.at("name").get<std::string>();
    const auto h = e.at("h").get<long long>();
    const auto o = e.at("o").get<long long>();
    const auto count = e.at("count").get<long long>();
    if (h <= 0 || o <= 0 || count <= 0) {
      throw ArgumentError("architecture module '" + m.name + "' has a non-positive dimension");
    }
    m.h = static_cast<std::size_t>(h);
    m.o = static_cast<std::size_t>(o);
    m.count = static_cast<std::size_t>(count);
    arch.layers.push_back(std::move(m));
  }
  return arch;
}

nlohmann::json arch_to_json(const ModelArch& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& m : arch.layers) {
    layers.push_back({{"name", m.name}, {"h", m.h}, {"o", m.o}, {"count", m.count}});
  }
  return layers;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::lora: return "lora";
    case Method::prolora: return "prolora";
    case Method::vera: return "vera";
    case Method::tied_lora: return "tied_lora";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "lora") return Method::lora;
  if (name == "prolora") return Method::prolora;
  if (name == "vera") return Method::vera;
  if (name == "tied_lora" || name == "tied-lora") return Method::tied_lora;
  throw ArgumentError("unknown method '" + std::string(name) +
                      "' (expected lora|prolora|vera|tied_lora)");
}

std::uint64_t count_lora(const ModelArch& arch, std::size_t rank) {
  std::uint64_t total = 0;
  for (const auto& m : arch.layers) total += std::uint64_t{m.count} * rank * (m.h + m.o);
  return total;
}

std::uint64_t count_prolora(const ModelArch& arch, const AdapterConfig& cfg) {
  std::uint64_t total = 0;
  for (const auto& m : arch.layers) {
    try {
      total += std::uint64_t{m.count} * trainable_count(cfg, m.h, m.o);
    } catch (const ValidationError& e) {
      throw ValidationError(e.code(), "module '" + m.name + "': " + e.what());
    }
  }
  return total;
}

std::uint64_t count_vera(const ModelArch& arch, std::size_t rank) {
  std::uint64_t total = 0;
  for (const auto& m : arch.layers) total += std::uint64_t{m.count} * (rank + m.o);
  return total;
}

std::uint64_t count_tied_lora(const ModelArch& arch, std::size_t rank) {
  const LinearModule* q = find_module(arch, {"q_proj", "q"});
  const LinearModule* k = find_module(arch, {"k_proj", "k"});
  const LinearModule* v = find_module(arch, {"v_proj", "v"});
  if (!q || !k || !v) {
    throw ApplicabilityError("tied LoRA needs q, k and v projection modules in '" + arch.name + "'");
  }
  for (const LinearModule* m : {k, v}) {
    if (m->h != q->h || m->o != q->o || m->count != q->count) {
      throw ApplicabilityError("tied LoRA needs identical q/k/v shapes; " + m->name + " is " +
                               std::to_string(m->h) + "->" + std::to_string(m->o) + " but " +
                               q->name + " is " + std::to_string(q->h) + "->" +
                               std::to_string(q->o));
    }
  }
  const std::uint64_t shared = std::uint64_t{rank} * q->h + 3 * std::uint64_t{q->o} * rank;
  const std::uint64_t vectors = std::uint64_t{q->count} * 3 * (rank + q->o);
  return shared + vectors;
}

std::string format_millions(std::uint64_t params) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(params) / 1e6);
  return buf;
}

PlanReport plan_lora(const ModelArch& arch, std::size_t rank) {
  PlanReport r = make_report(Method::lora, arch, {{"rank", rank}}, count_lora(arch, rank));
  for (const auto& ref : kUnmatchedReferences) {
    if (ref.arch == arch.name) {
      r.notes.push_back("published LoRA figure for " + arch.name + " at rank 2 is " +
                        std::string(ref.figure) + "; counting every linear layer of the preset "
                        "shapes gives " + format_millions(count_lora(arch, 2)) +
                        " (not reproduced)");
    }
  }
  return r;
}

PlanReport plan_prolora(const ModelArch& arch, const AdapterConfig& cfg) {
  nlohmann::json c = {{"rank", cfg.rank},
                      {"unshared_rank", cfg.unshared_rank},
                      {"share_rate_a", cfg.share_rate_a},
                      {"share_rate_b", cfg.share_rate_b},
                      {"share_axis", to_string(cfg.share_axis)}};
  PlanReport r = make_report(Method::prolora, arch, std::move(c), count_prolora(arch, cfg));
  bool truncated = false;
  for (const auto& m : arch.layers) {
    if (cfg.unshared_rank < cfg.rank &&
        (m.h % cfg.share_rate_a != 0 || m.o % cfg.share_rate_b != 0)) {
      truncated = true;
    }
  }
  if (truncated && cfg.share_axis == DimAxis::hidden) {
    r.notes.push_back("share rate does not divide every module dimension; chunks are stored at "
                      "ceil width and the last copy is truncated");
  }
  return r;
}

PlanReport plan_vera(const ModelArch& arch, std::size_t rank) {
  return make_report(Method::vera, arch, {{"rank", rank}}, count_vera(arch, rank));
}

PlanReport plan_tied_lora(const ModelArch& arch, std::size_t rank) {
  PlanReport r =
      make_report(Method::tied_lora, arch, {{"rank", rank}}, count_tied_lora(arch, rank));
  r.notes.push_back("composition assumed: shared r x h down projection, three o x r up "
                    "projections, per-layer r- and o-length vectors for q, k, v");
  return r;
}

nlohmann::json to_json(const PlanReport& r) {
  return {{"method", to_string(r.method)},
          {"arch", r.arch},
          {"config", r.config},
          {"params", r.params},
          {"params_human", format_millions(r.params)},
          {"bytes", r.bytes},
          {"megabytes", r.megabytes},
          {"megabytes_human", std::to_string(r.megabytes) + "MB"},
          {"notes", r.notes}};
}

std::string to_table(const std::vector<PlanReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "method" << std::setw(14) << "arch" << std::setw(28)
     << "config" << std::right << std::setw(14) << "params" << std::setw(10) << "human"
     << std::setw(10) << "MB" << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(12) << to_string(r.method) << std::setw(14) << r.arch
       << std::setw(28) << r.config.dump() << std::right << std::setw(14) << r.params
       << std::setw(10) << format_millions(r.params) << std::setw(10)
       << (std::to_string(r.megabytes) + "MB") << '\n';
  }
  return os.str();
}

std::vector<BudgetCandidate> solve_budget(const ModelArch& arch, std::uint64_t budget,
                                          double tolerance, BudgetSearch limits) {
  if (budget == 0) throw ArgumentError("solve_budget: budget must be positive");
  if (!(tolerance >= 0.0 && tolerance < 1.0)) {
    throw ArgumentError("solve_budget: tolerance must lie in [0, 1)");
  }
  const double lo = static_cast<double>(budget) * (1.0 - tolerance);
  const double hi = static_cast<double>(budget) * (1.0 + tolerance);
  std::vector<BudgetCandidate> out;
  for (std::size_t r = 1; r <= limits.max_rank; ++r) {
    for (std::size_t u = 0; u <= r; ++u) {
      for (std::size_t m = 1; m <= limits.max_share_rate; ++m) {
        const bool pure_lora = u == r;
        if (pure_lora != (m == 1)) continue;
        AdapterConfig cfg;
        cfg.rank = r;
        cfg.unshared_rank = u;
        cfg.share_rate_a = cfg.share_rate_b = m;
        std::uint64_t params = 0;
        try {
          params = count_prolora(arch, cfg);
        } catch (const ValidationError&) {
          continue;
        }
        const auto p = static_cast<double>(params);
        if (p >= lo && p <= hi) out.push_back({r, u, m, params});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const BudgetCandidate& a, const BudgetCandidate& b) {
    if (a.rank != b.rank) return a.rank > b.rank;
    if (a.unshared_rank != b.unshared_rank) return a.unshared_rank > b.unshared_rank;
    return a.share_rate < b.share_rate;
  });
  return out;
}

AdapterConfig to_config(const BudgetCandidate& c, AdapterConfig base) {
  base.rank = c.rank;
  base.unshared_rank = c.unshared_rank;
  base.share_rate_a = base.share_rate_b = c.share_rate;
  return base;
}

nlohmann::json to_json(const BudgetCandidate& c) {
  return {{"rank", c.rank},
          {"unshared_rank", c.unshared_rank},
          {"share_rate", c.share_rate},
          {"params", c.params},
          {"params_human", format_millions(c.params)}};
}

}  // namespace prolora
