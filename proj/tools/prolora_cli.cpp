// prolora: planning, training, verification and conversion front end.
//
// Machine-readable JSON goes to stdout, diagnostics to stderr. Every stochastic command
// takes an explicit --seed (default 0).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prolora/adapter.hpp"
#include "prolora/budget.hpp"
#include "prolora/container.hpp"
#include "prolora/errors.hpp"
#include "prolora/serialize.hpp"
#include "prolora/train.hpp"
#include "prolora/verify.hpp"

using namespace prolora;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::size_t rank = 8;
  std::size_t unshared = 0;
  std::size_t share_rate = 0;
  std::size_t share_rate_a = 1;
  std::size_t share_rate_b = 1;
  long long stride_a = -1;
  long long stride_b = -1;
  double alpha = 16.0;
  double dropout = 0.1;
  std::string share_axis = "hidden";
  std::string rotate_axis = "rank";
  bool no_rectified_init = false;

  void attach(CLI::App* app) {
    app->add_option("--rank,-r", rank, "rank r");
    app->add_option("--unshared,-u", unshared, "unshared rank u");
    app->add_option("--share-rate", share_rate, "sharing rate for both A and B (m = n)");
    app->add_option("--share-rate-a", share_rate_a, "sharing rate m of A");
    app->add_option("--share-rate-b", share_rate_b, "sharing rate n of B");
    app->add_option("--stride-a", stride_a, "rotation stride of A (default derived)");
    app->add_option("--stride-b", stride_b, "rotation stride of B (default derived)");
    app->add_option("--alpha", alpha, "scaling numerator alpha");
    app->add_option("--dropout", dropout, "adapter input dropout rate");
    app->add_option("--share-axis", share_axis, "hidden|rank");
    app->add_option("--rotate-axis", rotate_axis, "hidden|rank");
    app->add_flag("--no-rectified-init", no_rectified_init, "use the chunk fan-in for A_0");
  }

  AdapterConfig to_config() const {
    AdapterConfig c;
    c.rank = rank;
    c.unshared_rank = unshared;
    c.share_rate_a = share_rate ? share_rate : share_rate_a;
    c.share_rate_b = share_rate ? share_rate : share_rate_b;
    if (stride_a >= 0) c.stride_a = static_cast<std::size_t>(stride_a);
    if (stride_b >= 0) c.stride_b = static_cast<std::size_t>(stride_b);
    c.alpha = alpha;
    c.dropout = dropout;
    c.share_axis = dim_axis_from_string(share_axis);
    c.rotate_axis = dim_axis_from_string(rotate_axis);
    c.rectified_init = !no_rectified_init;
    return c;
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  return json::parse(in);
}

ModelArch resolve_arch(const std::string& name_or_file) {
  if (auto preset = preset_arch(name_or_file)) return *preset;
  std::ifstream probe(name_or_file);
  if (!probe) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown architecture '" + name_or_file + "' (presets: " + known +
                        ", or a JSON file)");
  }
  return arch_from_json(json::parse(probe), name_or_file);
}

void emit(const json& j, bool pretty = false) { std::cout << j.dump(pretty ? 2 : -1) << '\n'; }

int cmd_plan(const std::string& arch_name, const std::string& method_name,
             const std::vector<std::size_t>& ranks, const ConfigFlags& flags, bool have_shared_flags,
             long long budget, double tolerance, bool pretty) {
  const ModelArch arch = resolve_arch(arch_name);
  if (budget >= 0) {
    const auto found = solve_budget(arch, static_cast<std::uint64_t>(budget), tolerance);
    json list = json::array();
    for (const auto& c : found) list.push_back(to_json(c));
    json out = {{"arch", arch.name},
                {"budget", budget},
                {"tolerance", tolerance},
                {"status", found.empty() ? "no feasible config" : "ok"},
                {"candidates", list}};
    if (found.empty()) {
      std::cerr << "no feasible config within " << tolerance * 100 << "% of " << budget << '\n';
    }
    emit(out, pretty);
    if (pretty && !found.empty()) {
      std::cerr << "rank  unshared  share_rate  params\n";
      for (const auto& c : found) {
        std::fprintf(stderr, "%4zu  %8zu  %10zu  %llu (%s)\n", c.rank, c.unshared_rank, c.share_rate,
                     static_cast<unsigned long long>(c.params), format_millions(c.params).c_str());
      }
    }
    return found.empty() ? 1 : 0;
  }
  const Method method = method_from_string(method_name);
  std::vector<PlanReport> reports;
  for (std::size_t r : ranks) {
    switch (method) {
      case Method::lora: reports.push_back(plan_lora(arch, r)); break;
      case Method::vera: reports.push_back(plan_vera(arch, r)); break;
      case Method::tied_lora: reports.push_back(plan_tied_lora(arch, r)); break;
      case Method::prolora: {
        AdapterConfig c = flags.to_config();
        c.rank = r;
        if (!have_shared_flags) c.unshared_rank = r;
        reports.push_back(plan_prolora(arch, c));
        break;
      }
    }
  }
  for (const auto& r : reports) {
    for (const auto& note : r.notes) std::cerr << "note: " << note << '\n';
  }
  if (reports.size() == 1) {
    emit(to_json(reports.front()), pretty);
  } else {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    emit(arr, pretty);
  }
  if (pretty) std::cerr << to_table(reports);
  return 0;
}

int cmd_count(const AdapterConfig& cfg, std::size_t h, std::size_t o) {
  const AdapterLayout l = validate(cfg, h, o);
  const double shared = static_cast<double>(l.shared_rank());
  const double ideal = static_cast<double>(cfg.unshared_rank * (h + o)) +
                       static_cast<double>(h) * shared / static_cast<double>(cfg.share_rate_a) +
                       static_cast<double>(o) * shared / static_cast<double>(cfg.share_rate_b);
  emit({{"h", h},
        {"o", o},
        {"config", config_to_json(l.cfg)},
        {"trainable", l.trainable_count()},
        {"ideal", ideal},
        {"shapes",
         {{"a_unshared", {cfg.unshared_rank, h}},
          {"a_chunk", {l.a_plan.chunk_rows, l.a_plan.chunk_cols}},
          {"b_unshared", {o, cfg.unshared_rank}},
          {"b_chunk", {l.b_plan.chunk_rows, l.b_plan.chunk_cols}}}}});
  return 0;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t next = csv.find(',', pos);
    out.push_back(std::stod(csv.substr(pos, next - pos)));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially shared, rotation-enhanced low-rank adapters"};
  app.require_subcommand(1);

  // plan
  auto* plan = app.add_subcommand("plan", "parameter and memory accounting for a model");
  std::string arch_name = "llama2-7b";
  std::string method_name = "lora";
  std::vector<std::size_t> ranks;
  long long budget = -1;
  double tolerance = 0.002;
  bool pretty = false;
  ConfigFlags plan_cfg;
  plan->add_option("--arch", arch_name, "preset name or architecture JSON file");
  plan->add_option("--method", method_name, "lora|prolora|vera|tied_lora");
  plan->add_option("--rank", ranks, "rank(s)")->delimiter(',');
  plan->add_option("--budget", budget, "search budget-matched PRoLoRA configs");
  plan->add_option("--tolerance", tolerance, "relative budget window");
  plan->add_option("--unshared,-u", plan_cfg.unshared, "unshared rank (prolora)");
  plan->add_option("--share-rate", plan_cfg.share_rate, "sharing rate m = n (prolora)");
  plan->add_flag("--pretty", pretty, "indent JSON and print a table on stderr");

  // count
  auto* count = app.add_subcommand("count", "trainable parameters of one layer");
  ConfigFlags count_cfg;
  std::size_t count_h = 4096, count_o = 4096;
  count_cfg.attach(count);
  count->add_option("--in-dim,--h-dim", count_h, "input dimension")->required();
  count->add_option("--out-dim,--o-dim", count_o, "output dimension")->required();

  // train
  auto* train = app.add_subcommand("train", "teacher-student training run or sweep");
  std::string spec_path, log_path, variant_name, sweep_u, sweep_lr;
  ConfigFlags train_cfg;
  TrainSpec train_spec;
  double lr = -1.0;
  unsigned threads = 0;
  bool match_budget = false;
  train_cfg.share_rate_a = train_cfg.share_rate_b = 2;
  train_cfg.rank = 4;
  train_cfg.unshared = 1;
  train_cfg.attach(train);
  train->add_option("--spec", spec_path, "TrainSpec JSON file (flags below are ignored)");
  train->add_option("--variant", variant_name, "lora|clora|rolora|prolora|...");
  train->add_option("--in-dim,--h-dim", train_spec.h, "input dimension");
  train->add_option("--out-dim,--o-dim", train_spec.o, "output dimension");
  train->add_option("--steps", train_spec.steps, "optimizer steps");
  train->add_option("--lr", lr, "learning rate for all parameters");
  train->add_option("--lr-shared", train_spec.lr_shared, "learning rate of shared chunks");
  train->add_option("--lr-unshared", train_spec.lr_unshared, "learning rate of unshared ranks");
  train->add_option("--warmup-ratio", train_spec.warmup_ratio, "warmup fraction");
  train->add_option("--max-grad-norm", train_spec.max_grad_norm, "global clipping norm");
  std::string optimizer_name = "adam";
  train->add_option("--optimizer", optimizer_name, "sgd|adam");
  train->add_option("--batch", train_spec.batch, "batch size");
  train->add_option("--seed", train_spec.seed, "seed");
  train->add_option("--log", log_path, "write per-step JSON lines here instead of stdout");
  train->add_option("--sweep-u", sweep_u, "comma-separated unshared ranks (sweep mode)");
  train->add_option("--sweep-lr", sweep_lr, "comma-separated learning rates (sweep mode)");
  train->add_flag("--match-budget", match_budget, "sweep: pick share rate to hold the count");
  train->add_option("--threads", threads, "sweep workers (0 = hardware)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the adapter gradients");
  ConfigFlags gc_cfg;
  std::size_t gc_h = 6, gc_o = 4, gc_batch = 3;
  double gc_eps = 1e-5, gc_tol = 1e-6;
  std::uint64_t gc_seed = 0;
  gc_cfg.rank = 4;
  gc_cfg.unshared = 1;
  gc_cfg.share_rate_a = gc_cfg.share_rate_b = 2;
  gc_cfg.attach(gc);
  gc->add_option("--in-dim,--h-dim", gc_h);
  gc->add_option("--out-dim,--o-dim", gc_o);
  gc->add_option("--batch", gc_batch);
  gc->add_option("--eps", gc_eps);
  gc->add_option("--tolerance", gc_tol);
  gc->add_option("--seed", gc_seed);

  // equiv
  auto* eq = app.add_subcommand("equiv", "randomized equivalence and property battery");
  std::size_t eq_trials = 20;
  std::uint64_t eq_seed = 0;
  std::string fault;
  eq->add_option("--trials", eq_trials);
  eq->add_option("--seed", eq_seed);
  eq->add_option("--inject-fault", fault, "test hook: skip-inverse-roll");

  // ablate
  auto* ab = app.add_subcommand("ablate", "variant grid on constructed teachers");
  std::uint64_t ab_seed = 0;
  long ab_steps = 4000;
  unsigned ab_threads = 0;
  ab->add_option("--seed", ab_seed);
  ab->add_option("--steps", ab_steps);
  ab->add_option("--threads", ab_threads);

  // export
  auto* ex = app.add_subcommand("export", "initialize an adapter and save it as PRLA");
  ConfigFlags ex_cfg;
  std::size_t ex_h = 0, ex_o = 0;
  std::uint64_t ex_seed = 0;
  std::string ex_out, ex_dtype = "f32";
  ex_cfg.attach(ex);
  ex->add_option("--in-dim,--h-dim", ex_h)->required();
  ex->add_option("--out-dim,--o-dim", ex_o)->required();
  ex->add_option("--seed", ex_seed);
  ex->add_option("--out", ex_out)->required();
  ex->add_option("--dtype", ex_dtype, "f32|f64");

  // merge
  auto* mg = app.add_subcommand("merge", "fold an adapter into a raw base weight");
  std::string mg_adapter, mg_weight, mg_out, mg_dtype = "f32";
  std::size_t mg_rows = 0, mg_cols = 0;
  mg->add_option("--adapter", mg_adapter)->required();
  mg->add_option("--weight", mg_weight, "raw little-endian o x h blob")->required();
  mg->add_option("--rows", mg_rows, "weight rows (o)")->required();
  mg->add_option("--cols", mg_cols, "weight cols (h)")->required();
  mg->add_option("--dtype", mg_dtype, "blob scalar type f32|f64");
  mg->add_option("--out", mg_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) {
      if (ranks.empty() && budget < 0) throw ArgumentError("plan needs --rank or --budget");
      const bool have_shared = plan->count("--unshared") > 0 || plan->count("--share-rate") > 0;
      return cmd_plan(arch_name, method_name, ranks, plan_cfg, have_shared, budget, tolerance, pretty);
    }
    if (count->parsed()) return cmd_count(count_cfg.to_config(), count_h, count_o);

    if (train->parsed()) {
      TrainSpec spec;
      if (!spec_path.empty()) {
        spec = spec_from_json(read_json_file(spec_path));
      } else {
        spec = train_spec;
        spec.cfg = train_cfg.to_config();
        if (train->count("--dropout") == 0) spec.cfg.dropout = 0.0;
        if (!variant_name.empty()) spec.variant = variant_from_string(variant_name);
        if (lr >= 0.0) spec.lr_shared = spec.lr_unshared = lr;
        spec.optimizer = optimizer_name == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
        if (optimizer_name != "sgd" && optimizer_name != "adam") {
          throw ArgumentError("unknown optimizer '" + optimizer_name + "'");
        }
        spec.task.generator = student_config(spec);
        spec.task.generator.dropout = 0.0;
      }
      if (!sweep_u.empty() || !sweep_lr.empty()) {
        std::vector<std::size_t> us;
        for (double v : parse_doubles(sweep_u.empty() ? std::to_string(spec.cfg.unshared_rank) : sweep_u)) {
          us.push_back(static_cast<std::size_t>(v));
        }
        const auto lrs = parse_doubles(sweep_lr.empty() ? std::to_string(spec.lr_shared) : sweep_lr);
        json cells = json::array();
        for (const auto& c : sweep(spec, us, lrs, match_budget, threads)) {
          cells.push_back({{"unshared_rank", c.unshared_rank},
                           {"share_rate", c.share_rate},
                           {"lr", c.lr},
                           {"trainable_params", c.trainable_params},
                           {"final_population_mse", c.final_population_mse}});
        }
        emit({{"sweep", cells}});
        return 0;
      }
      std::ofstream log_file;
      std::ostream* log_out = &std::cout;
      if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw ArgumentError("cannot write '" + log_path + "'");
        log_out = &log_file;
      }
      const TrainLog log = run(spec);
      for (const auto& rec : log.steps) *log_out << to_json(rec).dump() << '\n';
      emit({{"summary", summary_json(log)}});
      return 0;
    }

    if (gc->parsed()) {
      AdapterConfig cfg = gc_cfg.to_config();
      const GradcheckResult r = gradcheck(cfg, gc_h, gc_o, gc_batch, gc_eps, gc_seed);
      const bool ok = r.max_rel_error <= gc_tol;
      emit({{"max_rel_error", r.max_rel_error},
            {"worst_param", r.worst_param},
            {"checked", r.checked},
            {"tolerance", gc_tol},
            {"ok", ok}});
      return ok ? 0 : 1;
    }

    if (eq->parsed()) {
      EquivOptions opts;
      opts.trials = eq_trials;
      opts.seed = eq_seed;
      if (!fault.empty()) {
        if (fault != "skip-inverse-roll") throw ArgumentError("unknown fault '" + fault + "'");
        opts.backward.disable_inverse_roll = true;
        std::cerr << "warning: fault injected (inverse roll disabled)\n";
      }
      if (eq_trials == 0) std::cerr << "warning: --trials 0, nothing checked (vacuous pass)\n";
      const EquivReport rep = run_equivalence(opts);
      for (const auto& f : rep.failures) {
        std::cerr << "trial " << f.trial << ": " << f.check << ": " << f.detail << '\n';
      }
      std::cerr << rep.passed << "/" << rep.trials << " passed\n";
      emit(to_json(rep));
      return rep.ok() ? 0 : 1;
    }

    if (ab->parsed()) {
      const AblationReport rep = ablation_suite(ab_seed, ab_steps, ab_threads);
      emit(to_json(rep));
      return 0;
    }

    if (ex->parsed()) {
      const AdapterState s = init_adapter(ex_cfg.to_config(), ex_h, ex_o, ex_seed);
      const Dtype dtype = dtype_from_string(ex_dtype);
      const std::size_t bytes = save_adapter(s, ex_out, dtype);
      emit({{"path", ex_out},
            {"bytes", bytes},
            {"payload_bytes", s.layout.trainable_count() * dtype_size(dtype)},
            {"trainable", s.layout.trainable_count()}});
      return 0;
    }

    if (mg->parsed()) {
      AdapterContainer c = load_adapter(mg_adapter);
      if (c.state.merged) throw StateError("adapter file is flagged as merged");
      if (mg_rows != c.state.layout.o || mg_cols != c.state.layout.h) {
        throw ShapeError("weight shape " + std::to_string(mg_rows) + "x" + std::to_string(mg_cols) +
                         " does not match adapter " + std::to_string(c.state.layout.o) + "x" +
                         std::to_string(c.state.layout.h));
      }
      const Dtype dtype = dtype_from_string(mg_dtype);
      const Matrix base = read_raw_matrix(mg_weight, mg_rows, mg_cols, dtype);
      const Matrix merged = merge(c.state, base);
      const std::size_t bytes = write_raw_matrix(merged, mg_out, dtype);
      emit({{"path", mg_out}, {"bytes", bytes}, {"max_abs_delta", max_abs(subtract(merged, base))}});
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
