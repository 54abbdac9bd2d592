#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <string>
#include <vector>

#include <json.hpp>

#include "prolora/adapter.hpp"

namespace prolora {

enum class OptimizerKind { sgd, adam };

/// How the teacher's weight difference is generated.
enum class DeltaKind {
  /// Product of random o x k and k x h Gaussian factors.
  unstructured,
  /// delta_w of a reference adapter built with `generator` and Gaussian chunks.
  structured,
};

/// Teacher: frozen base W0 ~ N(0, 1/h), target W* = W0 + delta. Inputs are N(0, 1),
/// loss is the mean squared output error. `extra_rank` adds an unstructured rank-k term to a
/// structured delta. The delta is rescaled so that ||delta||_F^2 / o == target_mse, i.e. the
/// population loss of a zero update equals target_mse.
struct TaskSpec {
  DeltaKind kind = DeltaKind::structured;
  AdapterConfig generator = {};
  std::size_t unstructured_rank = 2;
  std::size_t extra_rank = 0;
  double target_mse = 1.0;
};

struct TrainSpec {
  Variant variant = Variant::prolora;
  AdapterConfig cfg = {};
  std::size_t h = 16;
  std::size_t o = 16;
  TaskSpec task = {};
  long steps = 1000;
  double lr_shared = 1e-2;
  double lr_unshared = 1e-2;
  double warmup_ratio = 0.03;
  double max_grad_norm = 0.3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch = 16;
  std::size_t eval_batch = 256;
  std::uint64_t seed = 0;
};

/// Student configuration actually trained (variant applied to cfg).
AdapterConfig student_config(const TrainSpec& spec);
void check_spec(const TrainSpec& spec);

struct TaskInstance {
  Matrix base;
  Matrix target_delta;
};

/// Deterministic in (task, h, o, seed).
TaskInstance make_task(const TaskSpec& task, std::size_t h, std::size_t o, std::uint64_t seed);

/// Exact expected loss over x ~ N(0, I): ||dW - target||_F^2 / o.
double population_mse(const Matrix& delta, const Matrix& target);

/// Warmup steps: ceil(ratio * steps).
long warmup_steps(double warmup_ratio, long steps);
/// Rate for 1-based step t: peak * t / W while t <= W, then peak * (T - t) / (T - W).
double scheduled_rate(double peak, long step, long total_steps, long warmup);

struct StepRecord {
  long step = 0;
  double loss = 0.0;
  double lr_shared = 0.0;
  double lr_unshared = 0.0;
  double grad_norm = 0.0;
  double clipped_norm = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  double final_loss = 0.0;
  double initial_eval_mse = 0.0;
  double final_eval_mse = 0.0;
  double initial_population_mse = 0.0;
  double final_population_mse = 0.0;
  std::size_t trainable_params = 0;
  double wall_seconds = 0.0;
  nlohmann::json config;
  AdapterState final_state;
};

/// Same trajectory and results, ignoring wall time.
bool same_results(const TrainLog& a, const TrainLog& b);

struct RunHooks {
  /// Called after every optimizer step, with the post-step state.
  std::function<void(const StepRecord&, const AdapterState&)> on_step;
  /// Receives the frozen base after the run, for invariance checks.
  Matrix* base_out = nullptr;
};

TrainLog run(const TrainSpec& spec, const RunHooks& hooks = {});

nlohmann::json to_json(const StepRecord& r);
nlohmann::json summary_json(const TrainLog& log);
nlohmann::json spec_to_json(const TrainSpec& spec);
/// Missing keys keep the defaults of TrainSpec.
TrainSpec spec_from_json(const nlohmann::json& j);

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

/// Central differences of 0.5 * ||y||^2 on every trainable scalar, with random W0, x and
/// nonzero B chunks. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradcheckResult gradcheck(const AdapterConfig& cfg, std::size_t h, std::size_t o,
                          std::size_t batch, double eps, std::uint64_t seed,
                          BackwardOptions options = {});

struct SweepCell {
  std::size_t unshared_rank = 0;
  std::size_t share_rate = 1;
  double lr = 0.0;
  std::size_t trainable_params = 0;
  double final_population_mse = 0.0;
};

/// Grid over unshared rank and learning rate (both rates set to lr). With
/// `match_budget`, each u picks the share rate m = n whose count is closest to the base
/// configuration's count. Runs execute on up to `threads` workers; output order is u-major.
std::vector<SweepCell> sweep(const TrainSpec& base, const std::vector<std::size_t>& unshared_ranks,
                             const std::vector<double>& lrs, bool match_budget, unsigned threads);

struct AblationRow {
  std::string experiment;
  std::string variant;
  nlohmann::json config;
  std::size_t trainable_params = 0;
  double final_population_mse = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  /// Best population loss any sharing-only (identical blocks) adapter can reach on the
  /// distinct-block teacher.
  double clora_floor = 0.0;
  long steps = 0;

  const AblationRow* find(std::string_view experiment, std::string_view variant) const;
};

/// Average-of-blocks residual: ||T - tile(mean block)||_F^2 / o for an o x h target cut into
/// row_blocks x col_blocks equal blocks.
double tiled_block_floor(const Matrix& target, std::size_t row_blocks, std::size_t col_blocks);

/// Teachers:
///   distinct_blocks   - rank-6 rotated generator with m=2, n=3 on an 8 -> 12 layer
///   identical_blocks  - rank-2 sharing-only generator, m=n=2 on 8 -> 8
///   partial_sharing   - rank-2 rotated generator plus one unstructured rank on 16 -> 16
AblationReport ablation_suite(std::uint64_t seed, long steps = 4000, unsigned threads = 0);
nlohmann::json to_json(const AblationReport& report);

}  // namespace prolora
