#include "prolora/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "prolora/errors.hpp"

namespace prolora {

namespace {

constexpr double kExact = 1e-12;
constexpr double kMergedForward = 1e-10;

std::size_t wrap(long long v, std::size_t n) {
  const auto len = static_cast<long long>(n);
  return static_cast<std::size_t>(((v % len) + len) % len);
}

// Shared block of A for hidden sharing / rank rotation, written element by element.
Matrix index_formula_a(const Matrix& chunk, std::size_t h, std::size_t stride) {
  const std::size_t rank = chunk.rows();
  const std::size_t width = chunk.cols();
  Matrix out(rank, h);
  for (std::size_t k = 0; k < rank; ++k) {
    for (std::size_t c = 0; c < h; ++c) {
      const std::size_t copy = c / width;
      out(k, c) = chunk(wrap(static_cast<long long>(k) - static_cast<long long>(copy * stride), rank),
                        c - copy * width);
    }
  }
  return out;
}

Matrix index_formula_b(const Matrix& chunk, std::size_t o, std::size_t stride) {
  const std::size_t rank = chunk.cols();
  const std::size_t height = chunk.rows();
  Matrix out(o, rank);
  for (std::size_t row = 0; row < o; ++row) {
    const std::size_t copy = row / height;
    for (std::size_t k = 0; k < rank; ++k) {
      out(row, k) = chunk(row - copy * height,
                          wrap(static_cast<long long>(k) - static_cast<long long>(copy * stride), rank));
    }
  }
  return out;
}

void randomize(Matrix& m, Rng& rng) {
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
}

AdapterState random_state(const AdapterConfig& cfg, std::size_t h, std::size_t o, Rng& rng) {
  AdapterState s = zero_state(validate(cfg, h, o));
  for (Matrix* m : {&s.a_unshared, &s.a_chunk, &s.b_unshared, &s.b_chunk}) randomize(*m, rng);
  return s;
}

bool shares_cleanly(std::size_t dim, std::size_t rate) {
  const std::size_t width = (dim + rate - 1) / rate;
  return rate <= dim && (rate - 1) * width < dim;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Trial {
  std::size_t index;
  EquivReport& report;
  bool failed = false;

  void expect(bool ok, const std::string& check, const std::string& detail) {
    if (ok) return;
    failed = true;
    report.failures.push_back({index, check, detail});
  }
  void expect_close(double diff, double tol, const std::string& check, const std::string& what) {
    expect(diff <= tol, check, what + ": max-abs diff " + sci(diff) + " > " + sci(tol));
  }
};

std::string describe(const AdapterConfig& c, std::size_t h, std::size_t o) {
  return "h=" + std::to_string(h) + " o=" + std::to_string(o) + " r=" + std::to_string(c.rank) +
         " u=" + std::to_string(c.unshared_rank) + " m=" + std::to_string(c.share_rate_a) +
         " n=" + std::to_string(c.share_rate_b);
}

}  // namespace

Matrix fold_by_materialization(const Matrix& expanded_grad, const BroadcastPlan& plan) {
  Matrix out(plan.chunk_rows, plan.chunk_cols);
  Matrix unit(plan.chunk_rows, plan.chunk_cols);
  for (std::size_t k = 0; k < unit.size(); ++k) {
    unit.data()[k] = 1.0;
    const Matrix image = broadcast(unit, plan);
    double acc = 0.0;
    for (std::size_t e = 0; e < image.size(); ++e) acc += image.data()[e] * expanded_grad.data()[e];
    out.data()[k] = acc;
    unit.data()[k] = 0.0;
  }
  return out;
}

LoraReference lora_reference(const Matrix& weight, const Matrix& a, const Matrix& b, double scaling,
                             const Matrix& x, const Matrix& upstream) {
  LoraReference ref;
  const Matrix ax = matmul(a, x);
  ref.output = add(matmul(weight, x), scale(matmul(b, ax), scaling));
  const Matrix bt_g = matmul(transpose(b), upstream);
  ref.grad_a = scale(matmul(bt_g, transpose(x)), scaling);
  ref.grad_b = scale(matmul(upstream, transpose(ax)), scaling);
  const Matrix w = add(weight, scale(matmul(b, a), scaling));
  ref.grad_input = matmul(transpose(w), upstream);
  return ref;
}

EquivReport run_equivalence(const EquivOptions& options) {
  EquivReport report;
  report.trials = options.trials;
  Rng rng(options.seed);
  const auto pick = [&](long long lo, long long hi) { return static_cast<std::size_t>(rng.integer(lo, hi)); };

  for (std::size_t t = 0; t < options.trials; ++t) {
    Trial trial{t, report};
    try {
      std::size_t h = 0, o = 0, m = 0, n = 0;
      do {
        h = pick(2, 12);
        o = pick(2, 12);
        m = pick(2, 4);
        n = pick(2, 4);
      } while (!shares_cleanly(h, m) || !shares_cleanly(o, n));
      const std::size_t r = pick(2, 6);
      const std::size_t batch = pick(1, 4);
      const Matrix weight = random_uniform(o, h, -1.0, 1.0, rng);
      const Matrix x = random_uniform(h, batch, -1.0, 1.0, rng);
      const Matrix upstream = random_uniform(o, batch, -1.0, 1.0, rng);

      AdapterConfig base;
      base.rank = r;
      base.share_rate_a = m;
      base.share_rate_b = n;
      base.dropout = 0.0;

      // u = r is plain LoRA; share rates beyond the layer size stay legal.
      {
        AdapterConfig c = configure_variant(Variant::lora, base);
        c.share_rate_a = pick(1, 16);
        c.share_rate_b = pick(1, 16);
        const AdapterState s = random_state(c, h, o, rng);
        const LoraReference ref = lora_reference(weight, s.a_unshared, s.b_unshared,
                                                 s.layout.scaling(), x, upstream);
        const GradBundle g = backward(s, weight, x, upstream, nullptr, options.backward);
        const std::string what = describe(c, h, o);
        trial.expect_close(max_abs_diff(forward(s, weight, x), ref.output), kExact, "superset", what + " forward");
        trial.expect_close(max_abs_diff(g.a_unshared, ref.grad_a), kExact, "superset", what + " grad A");
        trial.expect_close(max_abs_diff(g.b_unshared, ref.grad_b), kExact, "superset", what + " grad B");
        trial.expect_close(max_abs_diff(g.input, ref.grad_input), kExact, "superset", what + " grad x");
        trial.expect(trainable_count(c, h, o) == r * (h + o), "superset", what + " count");
      }

      for (Variant v : {Variant::clora, Variant::rolora}) {
        const AdapterConfig c = configure_variant(v, base);
        const AdapterState s = random_state(c, h, o, rng);
        const std::size_t sa = s.layout.a_plan.stride;
        const std::size_t sb = s.layout.b_plan.stride;
        const std::string check = std::string(to_string(v)) + " degeneration";
        const std::string what = describe(c, h, o);
        if (v == Variant::rolora) {
          trial.expect(sa == std::max<std::size_t>(r / m, 1) && sb == std::max<std::size_t>(r / n, 1),
                       check, what + " default strides");
        } else {
          trial.expect(sa == 0 && sb == 0, check, what + " strides");
        }
        const Matrix a_ref = index_formula_a(s.a_chunk, h, sa);
        const Matrix b_ref = index_formula_b(s.b_chunk, o, sb);
        trial.expect_close(max_abs_diff(expand_a(s), a_ref), kExact, check, what + " expanded A");
        trial.expect_close(max_abs_diff(expand_b(s), b_ref), kExact, check, what + " expanded B");
        trial.expect_close(max_abs_diff(delta_w(s), scale(matmul(b_ref, a_ref), s.layout.scaling())),
                           kExact, check, what + " delta W");
      }

      AdapterConfig partial = base;
      partial.unshared_rank = pick(0, static_cast<long long>(r) - 2);
      if (rng.integer(0, 1) == 1) {
        partial.stride_a = pick(1, 5);
        partial.stride_b = pick(1, 5);
      }
      {
        AdapterState s = random_state(partial, h, o, rng);
        const std::string what = describe(partial, h, o);
        const Matrix merged = merge(s, weight);
        const Matrix merged_y = forward(s, merged, x);
        const Matrix restored = unmerge(s, merged);
        trial.expect_close(max_abs_diff(restored, weight), kExact, "merge round-trip", what);
        trial.expect_close(max_abs_diff(merged_y, forward(s, weight, x)), kMergedForward,
                           "merged forward", what);

        const GradBundle g = backward(s, weight, x, upstream, nullptr, options.backward);
        const Matrix a = expand_a(s);
        const Matrix b = expand_b(s);
        const double sc = s.layout.scaling();
        const std::size_t u = partial.unshared_rank;
        const Matrix ga = scale(matmul(matmul(transpose(b), upstream), transpose(x)), sc);
        const Matrix gb = scale(matmul(upstream, transpose(matmul(a, x))), sc);
        const Matrix ga_ref = fold_by_materialization(slice(ga, {u, r}, {0, h}), s.layout.a_plan);
        const Matrix gb_ref = fold_by_materialization(slice(gb, {0, o}, {u, r}), s.layout.b_plan);
        trial.expect_close(max_abs_diff(g.a_chunk, ga_ref), kExact, "adjoint mismatch", what + " A chunk");
        trial.expect_close(max_abs_diff(g.b_chunk, gb_ref), kExact, "adjoint mismatch", what + " B chunk");
        trial.expect_close(max_abs_diff(g.a_unshared, slice(ga, {0, u}, {0, h})), kExact,
                           "adjoint mismatch", what + " A unshared");
        trial.expect_close(max_abs_diff(g.b_unshared, slice(gb, {0, o}, {0, u})), kExact,
                           "adjoint mismatch", what + " B unshared");
      }

      // Block patterns need every copy at full width.
      {
        const std::size_t k = pick(2, 3);
        const std::size_t block = pick(1, 4);
        const std::size_t dim = k * block;
        AdapterConfig c = base;
        c.share_rate_a = c.share_rate_b = k;
        for (Variant v : {Variant::clora, Variant::rolora}) {
          const AdapterState s = random_state(configure_variant(v, c), dim, dim, rng);
          const Matrix dw = delta_w(s);
          const auto blk = [&](std::size_t i, std::size_t j) {
            return slice(dw, {i * block, (i + 1) * block}, {j * block, (j + 1) * block});
          };
          double worst = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              if (v == Variant::clora) {
                worst = std::max(worst, max_abs_diff(blk(i, j), blk(0, 0)));
              } else if (i + 1 < k && j + 1 < k) {
                worst = std::max(worst, max_abs_diff(blk(i, j), blk(i + 1, j + 1)));
              }
            }
          }
          trial.expect_close(worst, kExact, "block pattern",
                             std::string(to_string(v)) + " " + describe(c, dim, dim));
        }
      }
    } catch (const std::exception& e) {
      trial.expect(false, "exception", e.what());
    }
    if (!trial.failed) ++report.passed;
  }
  return report;
}

nlohmann::json to_json(const EquivReport& r) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"trial", f.trial}, {"check", f.check}, {"detail", f.detail}});
  }
  return {{"trials", r.trials},
          {"passed", r.passed},
          {"ok", r.ok()},
          {"summary", std::to_string(r.passed) + "/" + std::to_string(r.trials) + " passed"},
          {"failures", failures}};
}

}  // namespace prolora
