#include "prolora/train.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "prolora/errors.hpp"
#include "prolora/serialize.hpp"

namespace prolora {

namespace {

struct Streams {
  std::uint64_t teacher, init, data, eval, dropout;
};

Streams derive_streams(std::uint64_t seed) {
  Rng master(seed);
  Streams s;
  s.teacher = master.next_u64();
  s.init = master.next_u64();
  s.data = master.next_u64();
  s.eval = master.next_u64();
  s.dropout = master.next_u64();
  return s;
}

struct AdamMoments {
  Matrix m;
  Matrix v;
};

void sgd_update(Matrix& param, const Matrix& grad, double lr) {
  auto p = param.data();
  const auto g = grad.data();
  for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
}

void adam_update(Matrix& param, const Matrix& grad, AdamMoments& mom, double lr, long t,
                 const TrainSpec& spec) {
  if (mom.m.size() != param.size()) {
    mom.m = Matrix(param.rows(), param.cols());
    mom.v = Matrix(param.rows(), param.cols());
  }
  const double b1 = spec.adam_beta1;
  const double b2 = spec.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  auto p = param.data();
  auto m = mom.m.data();
  auto v = mom.v.data();
  const auto g = grad.data();
  for (std::size_t k = 0; k < p.size(); ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
    p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + spec.adam_eps);
  }
}

double mean_squared(const Matrix& diff) {
  return diff.empty() ? 0.0 : squared_norm(diff) / static_cast<double>(diff.size());
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ArgumentError("unknown optimizer '" + std::string(s) + "' (expected sgd|adam)");
}

std::string_view to_string(DeltaKind k) {
  return k == DeltaKind::structured ? "structured" : "unstructured";
}

DeltaKind delta_kind_from_string(std::string_view s) {
  if (s == "structured") return DeltaKind::structured;
  if (s == "unstructured") return DeltaKind::unstructured;
  throw ArgumentError("unknown teacher kind '" + std::string(s) + "'");
}

}  // namespace

AdapterConfig student_config(const TrainSpec& spec) {
  return configure_variant(spec.variant, spec.cfg);
}

void check_spec(const TrainSpec& spec) {
  if (spec.steps < 1) throw ArgumentError("steps must be >= 1");
  if (!(spec.warmup_ratio >= 0.0 && spec.warmup_ratio < 1.0)) {
    throw ArgumentError("warmup_ratio must lie in [0, 1)");
  }
  if (!(spec.lr_shared >= 0.0) || !(spec.lr_unshared >= 0.0)) {
    throw ArgumentError("learning rates must be non-negative");
  }
  if (!(spec.max_grad_norm > 0.0)) throw ArgumentError("max_grad_norm must be positive");
  if (spec.batch == 0 || spec.eval_batch == 0) throw ArgumentError("batch sizes must be >= 1");
  if (!(spec.task.target_mse > 0.0)) throw ArgumentError("task target_mse must be positive");
  validate(student_config(spec), spec.h, spec.o);
}

TaskInstance make_task(const TaskSpec& task, std::size_t h, std::size_t o, std::uint64_t seed) {
  Rng rng(seed);
  TaskInstance t;
  t.base = random_normal(o, h, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  if (task.kind == DeltaKind::structured) {
    AdapterState gen = zero_state(validate(task.generator, h, o));
    for (Matrix* m : {&gen.a_unshared, &gen.a_chunk, &gen.b_unshared, &gen.b_chunk}) {
      for (double& v : m->data()) v = rng.normal();
    }
    t.target_delta = delta_w(gen);
    if (task.extra_rank > 0) {
      const Matrix left = random_normal(o, task.extra_rank, 1.0, rng);
      const Matrix right = random_normal(task.extra_rank, h, 1.0, rng);
      add_in_place(t.target_delta, matmul(left, right));
    }
  } else {
    if (task.unstructured_rank == 0) throw ArgumentError("unstructured teacher rank must be >= 1");
    const Matrix left = random_normal(o, task.unstructured_rank, 1.0, rng);
    const Matrix right = random_normal(task.unstructured_rank, h, 1.0, rng);
    t.target_delta = matmul(left, right);
  }
  const double current = squared_norm(t.target_delta) / static_cast<double>(o);
  if (!(current > 0.0)) throw ArgumentError("teacher delta is zero");
  t.target_delta = scale(t.target_delta, std::sqrt(task.target_mse / current));
  return t;
}

double population_mse(const Matrix& delta, const Matrix& target) {
  return squared_norm(subtract(delta, target)) / static_cast<double>(target.rows());
}

long warmup_steps(double warmup_ratio, long steps) {
  return static_cast<long>(std::ceil(warmup_ratio * static_cast<double>(steps)));
}

double scheduled_rate(double peak, long step, long total_steps, long warmup) {
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

bool same_results(const TrainLog& a, const TrainLog& b) {
  const auto same_state = [](const AdapterState& x, const AdapterState& y) {
    return x.a_unshared == y.a_unshared && x.a_chunk == y.a_chunk &&
           x.b_unshared == y.b_unshared && x.b_chunk == y.b_chunk;
  };
  return a.steps == b.steps && a.final_loss == b.final_loss &&
         a.initial_eval_mse == b.initial_eval_mse && a.final_eval_mse == b.final_eval_mse &&
         a.initial_population_mse == b.initial_population_mse &&
         a.final_population_mse == b.final_population_mse && a.config == b.config &&
         same_state(a.final_state, b.final_state);
}

TrainLog run(const TrainSpec& spec, const RunHooks& hooks) {
  check_spec(spec);
  const auto started = std::chrono::steady_clock::now();
  const Streams streams = derive_streams(spec.seed);
  const AdapterConfig cfg = student_config(spec);
  const TaskInstance task = make_task(spec.task, spec.h, spec.o, streams.teacher);
  AdapterState state = init_adapter(cfg, spec.h, spec.o, streams.init);

  Rng data_rng(streams.data);
  Rng eval_rng(streams.eval);
  Rng dropout_rng(streams.dropout);
  const Matrix eval_x = random_normal(spec.h, spec.eval_batch, 1.0, eval_rng);
  const Matrix eval_ref = add(matmul(task.base, eval_x), matmul(task.target_delta, eval_x));
  const auto eval_mse = [&] { return mean_squared(subtract(forward(state, task.base, eval_x), eval_ref)); };

  TrainLog log;
  log.config = spec_to_json(spec);
  log.config["student"] = config_to_json(state.layout.cfg);
  log.trainable_params = state.layout.trainable_count();
  log.initial_eval_mse = eval_mse();
  log.initial_population_mse = population_mse(delta_w(state), task.target_delta);
  log.steps.reserve(static_cast<std::size_t>(spec.steps));

  const long warmup = warmup_steps(spec.warmup_ratio, spec.steps);
  const double norm_scale = 2.0 / static_cast<double>(spec.o * spec.batch);
  const bool use_mask = state.layout.cfg.dropout > 0.0;
  std::array<AdamMoments, 4> moments;
  Matrix mask;

  for (long t = 1; t <= spec.steps; ++t) {
    const Matrix x = random_normal(spec.h, spec.batch, 1.0, data_rng);
    const Matrix ref = add(matmul(task.base, x), matmul(task.target_delta, x));
    const Matrix y = forward(state, task.base, x, true, dropout_rng, &mask);
    const Matrix diff = subtract(y, ref);
    const double loss = mean_squared(diff);
    if (!std::isfinite(loss)) {
      throw DivergenceError(t, "training diverged: non-finite loss at step " + std::to_string(t));
    }
    GradBundle g = backward(state, task.base, x, scale(diff, norm_scale), use_mask ? &mask : nullptr);
    std::array<Matrix*, 4> grads{&g.a_unshared, &g.a_chunk, &g.b_unshared, &g.b_chunk};
    double sq = 0.0;
    for (const Matrix* gm : grads) sq += squared_norm(*gm);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw DivergenceError(t, "training diverged: non-finite gradient at step " + std::to_string(t));
    }
    double clipped = norm;
    if (norm > spec.max_grad_norm) {
      const double factor = spec.max_grad_norm / norm;
      sq = 0.0;
      for (Matrix* gm : grads) {
        *gm = scale(*gm, factor);
        sq += squared_norm(*gm);
      }
      clipped = std::sqrt(sq);
    }

    StepRecord rec;
    rec.step = t;
    rec.loss = loss;
    rec.lr_shared = scheduled_rate(spec.lr_shared, t, spec.steps, warmup);
    rec.lr_unshared = scheduled_rate(spec.lr_unshared, t, spec.steps, warmup);
    rec.grad_norm = norm;
    rec.clipped_norm = clipped;

    std::array<Matrix*, 4> params{&state.a_unshared, &state.a_chunk, &state.b_unshared, &state.b_chunk};
    for (std::size_t k = 0; k < params.size(); ++k) {
      const bool shared = k == 1 || k == 3;
      const double lr = shared ? rec.lr_shared : rec.lr_unshared;
      if (spec.optimizer == OptimizerKind::adam) {
        adam_update(*params[k], *grads[k], moments[k], lr, t, spec);
      } else {
        sgd_update(*params[k], *grads[k], lr);
      }
    }
    log.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec, state);
  }

  log.final_loss = log.steps.back().loss;
  log.final_eval_mse = eval_mse();
  log.final_population_mse = population_mse(delta_w(state), task.target_delta);
  if (!std::isfinite(log.final_eval_mse) || !std::isfinite(log.final_population_mse)) {
    throw DivergenceError(spec.steps, "training diverged: non-finite final evaluation");
  }
  log.final_state = std::move(state);
  if (hooks.base_out) *hooks.base_out = task.base;
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},
          {"loss", r.loss},
          {"lr_shared", r.lr_shared},
          {"lr_unshared", r.lr_unshared},
          {"grad_norm", r.grad_norm},
          {"clipped_norm", r.clipped_norm}};
}

nlohmann::json summary_json(const TrainLog& log) {
  return {{"steps", log.steps.size()},
          {"final_loss", log.final_loss},
          {"initial_eval_mse", log.initial_eval_mse},
          {"final_eval_mse", log.final_eval_mse},
          {"initial_population_mse", log.initial_population_mse},
          {"final_population_mse", log.final_population_mse},
          {"trainable_params", log.trainable_params},
          {"wall_seconds", log.wall_seconds},
          {"config", log.config}};
}

nlohmann::json spec_to_json(const TrainSpec& s) {
  nlohmann::json task = {{"kind", to_string(s.task.kind)},
                         {"generator", config_to_json(s.task.generator)},
                         {"unstructured_rank", s.task.unstructured_rank},
                         {"extra_rank", s.task.extra_rank},
                         {"target_mse", s.task.target_mse}};
  return {{"variant", to_string(s.variant)},
          {"cfg", config_to_json(s.cfg)},
          {"h", s.h},
          {"o", s.o},
          {"task", task},
          {"steps", s.steps},
          {"lr_shared", s.lr_shared},
          {"lr_unshared", s.lr_unshared},
          {"warmup_ratio", s.warmup_ratio},
          {"max_grad_norm", s.max_grad_norm},
          {"optimizer", to_string(s.optimizer)},
          {"adam_beta1", s.adam_beta1},
          {"adam_beta2", s.adam_beta2},
          {"adam_eps", s.adam_eps},
          {"batch", s.batch},
          {"eval_batch", s.eval_batch},
          {"seed", s.seed}};
}

TrainSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("train spec must be a JSON object");
  TrainSpec s;
  if (j.contains("variant")) s.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("cfg")) s.cfg = config_from_json(j.at("cfg"), s.cfg);
  s.h = j.value("h", s.h);
  s.o = j.value("o", s.o);
  if (j.contains("task")) {
    const auto& t = j.at("task");
    if (t.contains("kind")) s.task.kind = delta_kind_from_string(t.at("kind").get<std::string>());
    if (t.contains("generator")) s.task.generator = config_from_json(t.at("generator"), s.task.generator);
    s.task.unstructured_rank = t.value("unstructured_rank", s.task.unstructured_rank);
    s.task.extra_rank = t.value("extra_rank", s.task.extra_rank);
    s.task.target_mse = t.value("target_mse", s.task.target_mse);
  }
  s.steps = j.value("steps", s.steps);
  if (j.contains("lr")) s.lr_shared = s.lr_unshared = j.at("lr").get<double>();
  s.lr_shared = j.value("lr_shared", s.lr_shared);
  s.lr_unshared = j.value("lr_unshared", s.lr_unshared);
  s.warmup_ratio = j.value("warmup_ratio", s.warmup_ratio);
  s.max_grad_norm = j.value("max_grad_norm", s.max_grad_norm);
  if (j.contains("optimizer")) s.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  s.adam_beta1 = j.value("adam_beta1", s.adam_beta1);
  s.adam_beta2 = j.value("adam_beta2", s.adam_beta2);
  s.adam_eps = j.value("adam_eps", s.adam_eps);
  s.batch = j.value("batch", s.batch);
  s.eval_batch = j.value("eval_batch", s.eval_batch);
  s.seed = j.value("seed", s.seed);
  return s;
}

GradcheckResult gradcheck(const AdapterConfig& cfg_in, std::size_t h, std::size_t o,
                          std::size_t batch, double eps, std::uint64_t seed,
                          BackwardOptions options) {
  AdapterConfig cfg = cfg_in;
  cfg.dropout = 0.0;
  Rng rng(seed);
  AdapterState state = init_adapter(cfg, h, o, rng.next_u64());
  for (Matrix* m : {&state.b_unshared, &state.b_chunk}) {
    for (double& v : m->data()) v = rng.uniform(-1.0, 1.0);
  }
  const Matrix base = random_normal(o, h, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  const Matrix x = random_normal(h, batch, 1.0, rng);
  // Differences of a loss near 1e2 lose about eps_mach * L / eps in double, which swamps small
  // gradient entries; evaluate the probe loss in extended precision from the expanded factors.
  const auto loss = [&](const AdapterState& s) {
    const Matrix a = expand_a(s);
    const Matrix b = expand_b(s);
    const auto sc = static_cast<long double>(s.layout.scaling());
    long double total = 0.0L;
    std::vector<long double> ax(a.rows());
    for (std::size_t col = 0; col < x.cols(); ++col) {
      for (std::size_t k = 0; k < a.rows(); ++k) {
        long double acc = 0.0L;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += static_cast<long double>(a(k, j)) * x(j, col);
        ax[k] = acc;
      }
      for (std::size_t i = 0; i < o; ++i) {
        long double yi = 0.0L, bi = 0.0L;
        for (std::size_t j = 0; j < h; ++j) yi += static_cast<long double>(base(i, j)) * x(j, col);
        for (std::size_t k = 0; k < a.rows(); ++k) bi += static_cast<long double>(b(i, k)) * ax[k];
        yi += sc * bi;
        total += yi * yi;
      }
    }
    return 0.5L * total;
  };

  const Matrix y = forward(state, base, x);
  const GradBundle g = backward(state, base, x, y, nullptr, options);

  GradcheckResult result;
  const auto check = [&](const char* name, double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (result.checked++ == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = name;
    }
  };

  const std::array<std::pair<const char*, std::pair<Matrix AdapterState::*, const Matrix*>>, 4> params{{
      {"a_unshared", {&AdapterState::a_unshared, &g.a_unshared}},
      {"a_chunk", {&AdapterState::a_chunk, &g.a_chunk}},
      {"b_unshared", {&AdapterState::b_unshared, &g.b_unshared}},
      {"b_chunk", {&AdapterState::b_chunk, &g.b_chunk}},
  }};
  for (const auto& [name, member_and_grad] : params) {
    const auto [member, grad] = member_and_grad;
    Matrix& p = state.*member;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p.data()[k];
      const double hi = saved + eps;
      const double lo = saved - eps;
      p.data()[k] = hi;
      const long double up = loss(state);
      p.data()[k] = lo;
      const long double down = loss(state);
      p.data()[k] = saved;
      // divide by the step actually taken after rounding saved +- eps
      const auto numeric = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
      check(name, grad->data()[k], numeric);
    }
  }
  return result;
}

std::vector<SweepCell> sweep(const TrainSpec& base, const std::vector<std::size_t>& unshared_ranks,
                             const std::vector<double>& lrs, bool match_budget, unsigned threads) {
  const AdapterConfig base_cfg = student_config(base);
  const std::size_t target = trainable_count(base_cfg, base.h, base.o);
  std::vector<TrainSpec> specs;
  std::vector<SweepCell> cells;
  for (std::size_t u : unshared_ranks) {
    TrainSpec s = base;
    s.variant = Variant::prolora;
    s.cfg = base_cfg;
    s.cfg.unshared_rank = u;
    s.cfg.stride_a.reset();
    s.cfg.stride_b.reset();
    if (match_budget) {
      std::size_t best_m = 1;
      std::size_t best_gap = static_cast<std::size_t>(-1);
      for (std::size_t m = 1; m <= 16; ++m) {
        AdapterConfig c = s.cfg;
        c.share_rate_a = c.share_rate_b = m;
        std::size_t count = 0;
        try {
          count = trainable_count(c, s.h, s.o);
        } catch (const ValidationError&) {
          continue;
        }
        const std::size_t gap = count > target ? count - target : target - count;
        if (gap < best_gap) {
          best_gap = gap;
          best_m = m;
        }
        if (u == s.cfg.rank) break;
      }
      s.cfg.share_rate_a = s.cfg.share_rate_b = best_m;
    }
    for (double lr : lrs) {
      TrainSpec cell_spec = s;
      cell_spec.lr_shared = cell_spec.lr_unshared = lr;
      specs.push_back(cell_spec);
      SweepCell c;
      c.unshared_rank = u;
      c.share_rate = s.cfg.share_rate_a;
      c.lr = lr;
      c.trainable_params = trainable_count(s.cfg, s.h, s.o);
      cells.push_back(c);
    }
  }
  parallel_for(specs.size(), threads, [&](std::size_t i) {
    try {
      cells[i].final_population_mse = run(specs[i]).final_population_mse;
    } catch (const DivergenceError&) {
      cells[i].final_population_mse = std::numeric_limits<double>::infinity();
    }
  });
  return cells;
}

const AblationRow* AblationReport::find(std::string_view experiment, std::string_view variant) const {
  for (const auto& r : rows) {
    if (r.experiment == experiment && r.variant == variant) return &r;
  }
  return nullptr;
}

double tiled_block_floor(const Matrix& target, std::size_t row_blocks, std::size_t col_blocks) {
  if (row_blocks == 0 || col_blocks == 0 || target.rows() % row_blocks != 0 ||
      target.cols() % col_blocks != 0) {
    throw ArgumentError("tiled_block_floor: block grid must divide the target");
  }
  const std::size_t br = target.rows() / row_blocks;
  const std::size_t bc = target.cols() / col_blocks;
  Matrix mean(br, bc);
  for (std::size_t i = 0; i < row_blocks; ++i) {
    for (std::size_t j = 0; j < col_blocks; ++j) {
      add_in_place(mean, slice(target, {i * br, (i + 1) * br}, {j * bc, (j + 1) * bc}));
    }
  }
  mean = scale(mean, 1.0 / static_cast<double>(row_blocks * col_blocks));
  double residual = 0.0;
  for (std::size_t i = 0; i < row_blocks; ++i) {
    for (std::size_t j = 0; j < col_blocks; ++j) {
      residual += squared_norm(
          subtract(slice(target, {i * br, (i + 1) * br}, {j * bc, (j + 1) * bc}), mean));
    }
  }
  return residual / static_cast<double>(target.rows());
}

AblationReport ablation_suite(std::uint64_t seed, long steps, unsigned threads) {
  TrainSpec common;
  common.steps = steps;
  common.batch = 32;
  common.lr_shared = common.lr_unshared = 1e-2;
  common.cfg.dropout = 0.0;
  common.task.kind = DeltaKind::structured;
  common.task.generator.dropout = 0.0;
  common.seed = seed;

  struct Job {
    std::string experiment;
    TrainSpec spec;
  };
  std::vector<Job> jobs;

  TrainSpec distinct = common;
  distinct.h = 8;
  distinct.o = 12;
  distinct.task.generator.rank = 6;
  distinct.task.generator.unshared_rank = 0;
  distinct.task.generator.share_rate_a = 2;
  distinct.task.generator.share_rate_b = 3;
  distinct.cfg.rank = 6;
  distinct.cfg.unshared_rank = 1;
  distinct.cfg.share_rate_a = 2;
  distinct.cfg.share_rate_b = 3;
  for (Variant v : {Variant::lora, Variant::clora, Variant::rolora, Variant::prolora,
                    Variant::prolora_no_rotation, Variant::prolora_no_rectified_init,
                    Variant::share_hidden_rotate_hidden, Variant::share_rank_rotate_hidden,
                    Variant::share_rank_rotate_rank}) {
    TrainSpec s = distinct;
    s.variant = v;
    jobs.push_back({"distinct_blocks", s});
  }

  TrainSpec identical = common;
  identical.h = identical.o = 8;
  identical.task.generator.rank = 2;
  identical.task.generator.unshared_rank = 0;
  identical.task.generator.share_rate_a = identical.task.generator.share_rate_b = 2;
  identical.task.generator.stride_a = identical.task.generator.stride_b = 0;
  identical.cfg.rank = 4;
  identical.cfg.share_rate_a = identical.cfg.share_rate_b = 2;
  for (Variant v : {Variant::clora, Variant::rolora}) {
    TrainSpec s = identical;
    s.variant = v;
    jobs.push_back({"identical_blocks", s});
  }

  TrainSpec partial = common;
  partial.h = partial.o = 16;
  partial.task.generator.rank = 2;
  partial.task.generator.unshared_rank = 0;
  partial.task.generator.share_rate_a = partial.task.generator.share_rate_b = 2;
  partial.task.extra_rank = 1;
  partial.cfg.share_rate_a = partial.cfg.share_rate_b = 2;
  {
    TrainSpec s = partial;
    s.variant = Variant::rolora;
    s.cfg.rank = 4;
    jobs.push_back({"partial_sharing", s});
    s.variant = Variant::prolora;
    s.cfg.rank = 3;
    s.cfg.unshared_rank = 1;
    jobs.push_back({"partial_sharing", s});
  }

  AblationReport report;
  report.steps = steps;
  report.rows.resize(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const TrainLog log = run(jobs[i].spec);
    AblationRow& row = report.rows[i];
    row.experiment = jobs[i].experiment;
    row.variant = std::string(to_string(jobs[i].spec.variant));
    row.config = log.config["student"];
    row.trainable_params = log.trainable_params;
    row.final_population_mse = log.final_population_mse;
  });
  const Streams streams = derive_streams(seed);
  const TaskInstance teacher = make_task(distinct.task, distinct.h, distinct.o, streams.teacher);
  report.clora_floor = tiled_block_floor(teacher.target_delta, distinct.cfg.share_rate_b,
                                         distinct.cfg.share_rate_a);
  return report;
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"experiment", r.experiment},
                    {"variant", r.variant},
                    {"config", r.config},
                    {"trainable_params", r.trainable_params},
                    {"final_population_mse", r.final_population_mse}});
  }
  return {{"steps", report.steps}, {"clora_floor", report.clora_floor}, {"rows", rows}};
}

}  // namespace prolora
