#include <doctest.h>

#include <string>

#include "prolora/adapter.hpp"
#include "prolora/rng.hpp"
#include "prolora/verify.hpp"

using namespace prolora;

TEST_CASE("fold agrees with materialized folding") {
  Rng rng(51);
  for (int t = 0; t < 100; ++t) {
    AdapterConfig c;
    c.rank = static_cast<std::size_t>(rng.integer(1, 6));
    c.unshared_rank = static_cast<std::size_t>(rng.integer(0, static_cast<long long>(c.rank) - 1));
    c.share_rate_a = static_cast<std::size_t>(rng.integer(1, 4));
    c.share_rate_b = static_cast<std::size_t>(rng.integer(1, 4));
    if (rng.integer(0, 1)) c.stride_a = static_cast<std::size_t>(rng.integer(0, 4));
    if (rng.integer(0, 1)) c.rotate_axis = DimAxis::hidden;
    AdapterLayout l;
    try {
      l = validate(c, static_cast<std::size_t>(rng.integer(4, 12)), static_cast<std::size_t>(rng.integer(4, 12)));
    } catch (const std::exception&) {
      continue;
    }
    for (const BroadcastPlan* p : {&l.a_plan, &l.b_plan}) {
      const Matrix g = random_uniform(p->expanded_rows, p->expanded_cols, -1, 1, rng);
      CHECK(max_abs_diff(fold(g, *p), fold_by_materialization(g, *p)) <= 1e-12);
    }
  }
}

TEST_CASE("lora reference") {
  const Matrix w{{1, 0}, {0, 1}};
  const Matrix a{{1, 2}};
  const Matrix b{{3}, {4}};
  const Matrix x{{1}, {1}};
  const Matrix g{{1}, {0}};
  const LoraReference ref = lora_reference(w, a, b, 0.5, x, g);
  // y = x + 0.5 * b * (a x) = [1 + 4.5, 1 + 6]
  CHECK(ref.output == Matrix{{5.5}, {7}});
  CHECK(ref.grad_a == Matrix{{1.5, 1.5}});
  CHECK(ref.grad_b == Matrix{{1.5}, {0}});
  CHECK(ref.grad_input == Matrix{{2.5}, {3}});
}

TEST_CASE("equivalence battery") {
  EquivOptions opts;
  opts.trials = 60;
  opts.seed = 3;
  const EquivReport rep = run_equivalence(opts);
  CHECK(rep.ok());
  CHECK(rep.passed == 60);
  CHECK(to_json(rep).at("summary") == "60/60 passed");
  for (const auto& f : rep.failures) MESSAGE(f.check << ": " << f.detail);
}

TEST_CASE("equivalence battery catches a broken adjoint") {
  EquivOptions opts;
  opts.trials = 10;
  opts.backward.disable_inverse_roll = true;
  const EquivReport rep = run_equivalence(opts);
  CHECK_FALSE(rep.ok());
  bool named = false;
  for (const auto& f : rep.failures) named = named || f.check == "adjoint mismatch";
  CHECK(named);
}

TEST_CASE("zero trials pass vacuously") {
  EquivOptions opts;
  opts.trials = 0;
  const EquivReport rep = run_equivalence(opts);
  CHECK(rep.ok());
  CHECK(to_json(rep).at("summary") == "0/0 passed");
}
