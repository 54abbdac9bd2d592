#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "prolora/adapter.hpp"
#include "prolora/errors.hpp"
#include "prolora/rng.hpp"
#include "prolora/train.hpp"

using namespace prolora;

namespace {

TrainSpec matched_spec(long steps = 300) {
  TrainSpec s;
  s.variant = Variant::prolora;
  s.cfg.rank = 4;
  s.cfg.unshared_rank = 1;
  s.cfg.share_rate_a = s.cfg.share_rate_b = 2;
  s.cfg.dropout = 0.0;
  s.task.generator = student_config(s);
  s.steps = steps;
  return s;
}

// Plain rank-r LoRA trained by hand with the same data streams, loss, clipping, schedule and
// Adam update as the harness. Shares nothing with the harness beyond the task generator and Rng.
std::vector<double> plain_lora_losses(const TrainSpec& spec) {
  Rng master(spec.seed);
  const std::uint64_t teacher = master.next_u64();
  const std::uint64_t init = master.next_u64();
  const std::uint64_t data = master.next_u64();
  const std::size_t h = spec.h, o = spec.o, r = spec.cfg.rank, n = spec.batch;
  const TaskInstance task = make_task(spec.task, h, o, teacher);

  Rng init_rng(init);
  const double bound = spec.cfg.init_gain * std::sqrt(3.0 / static_cast<double>(h));
  Matrix a(r, h), b(o, r);
  for (double& v : a.data()) v = init_rng.uniform(-bound, bound);
  const double s = spec.cfg.alpha / static_cast<double>(r);

  Rng data_rng(data);
  const long total = spec.steps;
  const long warm = static_cast<long>(std::ceil(spec.warmup_ratio * static_cast<double>(total)));
  std::array<Matrix, 2> m{Matrix(r, h), Matrix(o, r)}, v{Matrix(r, h), Matrix(o, r)};
  std::vector<double> losses;
  for (long t = 1; t <= total; ++t) {
    const Matrix x = random_normal(h, n, 1.0, data_rng);
    const Matrix target = matmul(add(task.base, task.target_delta), x);
    const Matrix ax = matmul(a, x);
    Matrix y = matmul(task.base, x);
    add_in_place(y, scale(matmul(b, ax), s));
    const Matrix diff = subtract(y, target);
    losses.push_back(squared_norm(diff) / static_cast<double>(o * n));

    const Matrix g = scale(diff, 2.0 / static_cast<double>(o * n));
    std::array<Matrix, 2> grads{scale(matmul(transpose(b), matmul(g, transpose(x))), s),
                                scale(matmul(g, transpose(ax)), s)};
    const double norm = std::sqrt(squared_norm(grads[0]) + squared_norm(grads[1]));
    if (norm > spec.max_grad_norm) {
      for (auto& gr : grads) gr = scale(gr, spec.max_grad_norm / norm);
    }
    const double lr = t <= warm ? spec.lr_shared * t / warm
                                : spec.lr_shared * static_cast<double>(total - t) / static_cast<double>(total - warm);
    std::array<Matrix*, 2> params{&a, &b};
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t i = 0; i < params[k]->size(); ++i) {
        const double gi = grads[k].data()[i];
        double& mi = m[k].data()[i];
        double& vi = v[k].data()[i];
        mi = spec.adam_beta1 * mi + (1 - spec.adam_beta1) * gi;
        vi = spec.adam_beta2 * vi + (1 - spec.adam_beta2) * gi * gi;
        const double mh = mi / (1 - std::pow(spec.adam_beta1, static_cast<double>(t)));
        const double vh = vi / (1 - std::pow(spec.adam_beta2, static_cast<double>(t)));
        params[k]->data()[i] -= lr * mh / (std::sqrt(vh) + spec.adam_eps);
      }
    }
  }
  return losses;
}

}  // namespace

TEST_CASE("schedule closed form") {
  CHECK(warmup_steps(0.03, 1000) == 30);
  CHECK(warmup_steps(0.03, 5000) == 150);
  CHECK(warmup_steps(0.03, 10) == 1);
  CHECK(warmup_steps(0.0, 100) == 0);

  const TrainSpec spec = [] {
    TrainSpec s = matched_spec(200);
    s.lr_shared = 0.02;
    s.lr_unshared = 0.005;
    return s;
  }();
  const TrainLog log = run(spec);
  REQUIRE(log.steps.size() == 200);
  const long w = 6;
  for (const auto& rec : log.steps) {
    const double t = static_cast<double>(rec.step);
    const double frac = rec.step <= w ? t / w : (200.0 - t) / (200.0 - w);
    CHECK(rec.lr_shared == doctest::Approx(0.02 * frac).epsilon(1e-15));
    CHECK(rec.lr_unshared == doctest::Approx(0.005 * frac).epsilon(1e-15));
  }
  CHECK(log.steps.back().lr_shared == 0.0);
  CHECK(log.steps[w - 1].lr_shared == doctest::Approx(0.02));
}

TEST_CASE("clipping bound holds at every step") {
  TrainSpec spec = matched_spec(300);
  spec.max_grad_norm = 0.05;
  bool clipped_any = false;
  for (const auto& rec : run(spec).steps) {
    CHECK(rec.clipped_norm <= spec.max_grad_norm + 1e-12);
    CHECK(rec.clipped_norm <= rec.grad_norm + 1e-15);
    clipped_any = clipped_any || rec.grad_norm > spec.max_grad_norm;
  }
  CHECK(clipped_any);
}

TEST_CASE("runs are deterministic") {
  TrainSpec spec = matched_spec(150);
  spec.cfg.dropout = 0.1;
  const TrainLog a = run(spec);
  const TrainLog b = run(spec);
  CHECK(same_results(a, b));
  CHECK(a.steps == b.steps);
  spec.seed = 1;
  CHECK_FALSE(same_results(a, run(spec)));
}

TEST_CASE("base weight is never touched") {
  const TrainSpec spec = matched_spec(100);
  Rng master(spec.seed);
  const TaskInstance before = make_task(spec.task, spec.h, spec.o, master.next_u64());
  Matrix after;
  RunHooks hooks;
  hooks.base_out = &after;
  (void)run(spec, hooks);
  CHECK(after == before.base);
}

TEST_CASE("zero learning rate keeps the initial loss") {
  TrainSpec spec = matched_spec(50);
  spec.lr_shared = spec.lr_unshared = 0.0;
  const TrainLog log = run(spec);
  CHECK(log.final_eval_mse == log.initial_eval_mse);
  CHECK(log.final_population_mse == log.initial_population_mse);
  for (const auto& rec : log.steps) CHECK(rec.loss > 0.1);
}

TEST_CASE("full-rank-unshared student matches a hand-written LoRA trainer") {
  for (std::uint64_t seed : {0, 1, 2}) {
    TrainSpec spec = matched_spec(400);
    spec.variant = Variant::lora;
    spec.seed = seed;
    spec.h = 12;
    spec.o = 10;
    spec.task.kind = DeltaKind::unstructured;
    const TrainLog log = run(spec);
    const std::vector<double> ref = plain_lora_losses(spec);
    REQUIRE(ref.size() == log.steps.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - log.steps[i].loss));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("structured teacher is recovered") {
  const TrainLog log = run(matched_spec(5000));
  CHECK(log.initial_population_mse == doctest::Approx(1.0));
  CHECK(log.final_loss < 1e-4);
  CHECK(log.final_population_mse < 1e-4);
  CHECK(log.final_eval_mse < 1e-4);
}

TEST_CASE("unstructured teacher is scaled to the target") {
  TaskSpec t;
  t.kind = DeltaKind::unstructured;
  t.target_mse = 2.5;
  const TaskInstance inst = make_task(t, 9, 7, 3);
  CHECK(squared_norm(inst.target_delta) / 7.0 == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("population error equals the expected sample error") {
  // For x ~ N(0, I), E ||E x||^2 / o = ||E||_F^2 / o.
  Rng rng(5);
  const Matrix e = random_normal(6, 8, 1.0, rng);
  const Matrix x = random_normal(8, 200000, 1.0, rng);
  const double sample = squared_norm(matmul(e, x)) / (6.0 * 200000.0);
  CHECK(sample == doctest::Approx(population_mse(e, Matrix(6, 8))).epsilon(0.02));
}

TEST_CASE("bad specs are rejected") {
  TrainSpec s = matched_spec(10);
  s.steps = 0;
  CHECK_THROWS_AS(run(s), ArgumentError);
  s = matched_spec(10);
  s.warmup_ratio = 1.0;
  CHECK_THROWS_AS(run(s), ArgumentError);
  s = matched_spec(10);
  s.lr_shared = -1.0;
  CHECK_THROWS_AS(run(s), ArgumentError);
  s = matched_spec(10);
  s.cfg.unshared_rank = 9;
  CHECK_THROWS_AS(run(s), ValidationError);
}

TEST_CASE("divergence reports the step") {
  TrainSpec s = matched_spec(200);
  s.optimizer = OptimizerKind::sgd;
  s.lr_shared = s.lr_unshared = 1e200;
  s.max_grad_norm = 1e300;
  s.warmup_ratio = 0.0;
  try {
    (void)run(s);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
    CHECK(e.step() <= 200);
  }
}

TEST_CASE("sgd also learns") {
  TrainSpec s = matched_spec(2000);
  s.optimizer = OptimizerKind::sgd;
  s.lr_shared = s.lr_unshared = 0.5;
  s.max_grad_norm = 10.0;
  const TrainLog log = run(s);
  CHECK(log.final_population_mse < 0.1 * log.initial_population_mse);
}

TEST_CASE("gradcheck") {
  AdapterConfig c;
  c.rank = 4;
  c.unshared_rank = 1;
  c.share_rate_a = c.share_rate_b = 2;
  CHECK(gradcheck(c, 6, 4, 3, 1e-5, 0).max_rel_error <= 1e-6);

  c.unshared_rank = 4;
  CHECK(gradcheck(c, 6, 4, 3, 1e-5, 1).max_rel_error <= 1e-6);

  c.unshared_rank = 1;
  c.share_rate_a = 3;
  const GradcheckResult odd = gradcheck(c, 7, 5, 3, 1e-5, 2);
  CHECK(odd.max_rel_error <= 1e-6);
  CHECK(odd.checked == trainable_count(c, 7, 5));

  BackwardOptions broken;
  broken.disable_inverse_roll = true;
  CHECK(gradcheck(c, 7, 5, 3, 1e-5, 2, broken).max_rel_error > 1e-3);
}

TEST_CASE("spec JSON round trip") {
  TrainSpec s = matched_spec(77);
  s.lr_unshared = 0.03;
  s.optimizer = OptimizerKind::sgd;
  s.seed = 42;
  const TrainSpec back = spec_from_json(spec_to_json(s));
  CHECK(spec_to_json(back) == spec_to_json(s));
  CHECK(back.steps == 77);
  CHECK(back.lr_unshared == 0.03);

  const auto j = nlohmann::json::parse(R"({"variant":"rolora","lr":0.5,"steps":3,"h":8,"o":8})");
  const TrainSpec short_form = spec_from_json(j);
  CHECK(short_form.variant == Variant::rolora);
  CHECK(short_form.lr_shared == 0.5);
  CHECK(short_form.lr_unshared == 0.5);
  CHECK_THROWS(spec_from_json(nlohmann::json::parse(R"({"variant":"nope"})")));
}

TEST_CASE("step log records") {
  const TrainLog log = run(matched_spec(20));
  const auto j = to_json(log.steps.front());
  CHECK(j.at("step") == 1);
  CHECK(j.contains("loss"));
  CHECK(j.contains("clipped_norm"));
  const auto summary = summary_json(log);
  CHECK(summary.at("steps") == 20);
  CHECK(summary.at("trainable_params") == 80);
  CHECK(summary.at("config").at("student").at("stride_a") == 1);
}

TEST_CASE("sweep holds the budget when asked") {
  TrainSpec base = matched_spec(100);
  base.h = base.o = 24;
  base.cfg.rank = 6;
  base.cfg.unshared_rank = 0;
  base.cfg.share_rate_a = base.cfg.share_rate_b = 3;
  base.task.kind = DeltaKind::unstructured;
  const auto cells = sweep(base, {0, 1, 2}, {1e-2, 3e-2}, true, 2);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0].unshared_rank == 0);
  CHECK(cells[1].lr == 3e-2);
  for (const auto& c : cells) {
    CHECK(std::isfinite(c.final_population_mse));
    CHECK(std::abs(static_cast<double>(c.trainable_params) - 96.0) <= 0.25 * 96.0);
  }
  const auto serial = sweep(base, {0, 1, 2}, {1e-2, 3e-2}, true, 1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].final_population_mse == serial[i].final_population_mse);
  }
}

TEST_CASE("representable floor of tied blocks") {
  // two 1x1 blocks per side: best tied approximation is their mean
  const Matrix t{{1, 3}, {5, 7}};
  CHECK(tiled_block_floor(t, 2, 2) == doctest::Approx(((9 + 1 + 1 + 9) / 2.0)));
  CHECK(tiled_block_floor(Matrix{{2, 2}, {2, 2}}, 2, 2) == 0.0);
}

TEST_CASE("ablation behaves as constructed") {
  const AblationReport rep = ablation_suite(0, 4000, 0);
  const auto* clora = rep.find("distinct_blocks", "clora");
  const auto* rolora = rep.find("distinct_blocks", "rolora");
  REQUIRE(clora);
  REQUIRE(rolora);
  CHECK(clora->final_population_mse >= 10.0 * rolora->final_population_mse);
  CHECK(std::abs(clora->final_population_mse - rep.clora_floor) <= 0.01 * rep.clora_floor);
  CHECK(clora->final_population_mse >= rep.clora_floor * (1 - 1e-9));

  CHECK(rep.find("identical_blocks", "clora")->final_population_mse < 1e-4);
  CHECK(rep.find("identical_blocks", "rolora")->final_population_mse < 1e-4);

  const auto* pro = rep.find("partial_sharing", "prolora");
  const auto* ro = rep.find("partial_sharing", "rolora");
  REQUIRE(pro);
  REQUIRE(ro);
  CHECK(pro->trainable_params == ro->trainable_params);
  CHECK(pro->final_population_mse <= ro->final_population_mse);
  CHECK(rep.find("nothing", "clora") == nullptr);
}
