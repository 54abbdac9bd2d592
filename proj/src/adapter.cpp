#include "prolora/adapter.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "prolora/errors.hpp"

namespace prolora {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

Axis a_axis(DimAxis d) { return d == DimAxis::rank ? Axis::rows : Axis::cols; }
Axis b_axis(DimAxis d) { return d == DimAxis::rank ? Axis::cols : Axis::rows; }

std::size_t chunk_length(const BroadcastPlan& p, Axis axis) {
  return axis == Axis::rows ? p.chunk_rows : p.chunk_cols;
}

void check_rate(std::size_t rate, std::size_t extent, std::size_t shared_rank, const char* factor,
                const char* dim_name, ValidationCode exceeds) {
  if (shared_rank == 0) return;
  if (rate > extent) {
    throw ValidationError(exceeds, std::string("share rate of ") + factor + " (" +
                                       std::to_string(rate) + ") exceeds " + dim_name + " (" +
                                       std::to_string(extent) + ")");
  }
  const std::size_t width = ceil_div(extent, rate);
  if ((rate - 1) * width >= extent) {
    throw ValidationError(ValidationCode::empty_trailing_chunk,
                          std::string("share rate of ") + factor + " (" + std::to_string(rate) +
                              ") leaves an empty trailing chunk over " + dim_name + " " +
                              std::to_string(extent));
  }
}

// Shared block of one factor: the expanded matrix is `rank_len` ranks by `dim_len` along the
// layer dimension. `rank_axis` / `dim_axis` map those onto rows and cols.
BroadcastPlan make_plan(std::size_t shared_rank, std::size_t dim_len, std::size_t rate,
                        const AdapterConfig& cfg, std::optional<std::size_t> stride, bool is_a) {
  const auto to_axis = is_a ? a_axis : b_axis;
  BroadcastPlan p;
  p.partition = to_axis(cfg.share_axis);
  p.rotation = to_axis(cfg.rotate_axis);
  p.copies = rate;
  const Axis rank_axis = to_axis(DimAxis::rank);
  std::size_t rank_chunk = shared_rank;
  std::size_t dim_chunk = dim_len;
  if (cfg.share_axis == DimAxis::hidden) {
    dim_chunk = ceil_div(dim_len, rate);
  } else {
    rank_chunk = ceil_div(shared_rank, rate);
  }
  if (rank_axis == Axis::rows) {
    p.chunk_rows = rank_chunk;
    p.chunk_cols = dim_chunk;
    p.expanded_rows = shared_rank;
    p.expanded_cols = dim_len;
  } else {
    p.chunk_rows = dim_chunk;
    p.chunk_cols = rank_chunk;
    p.expanded_rows = dim_len;
    p.expanded_cols = shared_rank;
  }
  p.stride = stride.value_or(std::max<std::size_t>(chunk_length(p, p.rotation) / rate, 1));
  return p;
}

}  // namespace

std::string_view to_string(DimAxis axis) { return axis == DimAxis::hidden ? "hidden" : "rank"; }

DimAxis dim_axis_from_string(std::string_view name) {
  if (name == "hidden") return DimAxis::hidden;
  if (name == "rank") return DimAxis::rank;
  throw ArgumentError("unknown axis '" + std::string(name) + "' (expected hidden|rank)");
}

std::size_t BroadcastPlan::copy_extent(std::size_t i) const noexcept {
  const std::size_t width = chunk_extent();
  const std::size_t offset = i * width;
  const std::size_t total = expanded_extent();
  if (offset >= total) return 0;
  return std::min(width, total - offset);
}

Matrix broadcast(const Matrix& chunk, const BroadcastPlan& plan) {
  if (chunk.rows() != plan.chunk_rows || chunk.cols() != plan.chunk_cols) {
    throw ShapeError("broadcast: chunk is " + chunk.shape_string() + ", plan expects " +
                     std::to_string(plan.chunk_rows) + "x" + std::to_string(plan.chunk_cols));
  }
  Matrix out(plan.expanded_rows, plan.expanded_cols);
  if (out.empty()) return out;
  const std::size_t width = plan.chunk_extent();
  for (std::size_t i = 0; i < plan.copies; ++i) {
    const std::size_t t = plan.copy_extent(i);
    if (t == 0) continue;
    const Matrix rotated =
        roll(chunk, static_cast<long long>(i * plan.stride), plan.rotation);
    if (plan.partition == Axis::cols) {
      paste(out, slice(rotated, {0, chunk.rows()}, {0, t}), 0, i * width);
    } else {
      paste(out, slice(rotated, {0, t}, {0, chunk.cols()}), i * width, 0);
    }
  }
  return out;
}

Matrix fold(const Matrix& expanded, const BroadcastPlan& plan, bool inverse_roll) {
  if (expanded.rows() != plan.expanded_rows || expanded.cols() != plan.expanded_cols) {
    throw ShapeError("fold: gradient is " + expanded.shape_string() + ", plan expects " +
                     std::to_string(plan.expanded_rows) + "x" +
                     std::to_string(plan.expanded_cols));
  }
  Matrix acc(plan.chunk_rows, plan.chunk_cols);
  if (acc.empty()) return acc;
  const std::size_t width = plan.chunk_extent();
  for (std::size_t i = 0; i < plan.copies; ++i) {
    const std::size_t t = plan.copy_extent(i);
    if (t == 0) continue;
    Matrix padded(plan.chunk_rows, plan.chunk_cols);
    if (plan.partition == Axis::cols) {
      paste(padded, slice(expanded, {0, expanded.rows()}, {i * width, i * width + t}), 0, 0);
    } else {
      paste(padded, slice(expanded, {i * width, i * width + t}, {0, expanded.cols()}), 0, 0);
    }
    if (inverse_roll) {
      padded = roll(padded, -static_cast<long long>(i * plan.stride), plan.rotation);
    }
    add_in_place(acc, padded);
  }
  return acc;
}

std::size_t AdapterLayout::trainable_count() const noexcept {
  return cfg.unshared_rank * (h + o) + a_plan.chunk_rows * a_plan.chunk_cols +
         b_plan.chunk_rows * b_plan.chunk_cols;
}

double AdapterLayout::unshared_init_bound() const {
  return cfg.init_gain * std::sqrt(3.0 / static_cast<double>(h));
}

double AdapterLayout::chunk_init_bound() const {
  if (cfg.rectified_init) return unshared_init_bound();
  const std::size_t fan_in = a_plan.chunk_cols;
  return cfg.init_gain * std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
}

AdapterLayout validate(const AdapterConfig& cfg, std::size_t h, std::size_t o) {
  if (h == 0 || o == 0) {
    throw ValidationError(ValidationCode::bad_dimension,
                          "layer dimensions must be positive (h=" + std::to_string(h) +
                              ", o=" + std::to_string(o) + ")");
  }
  if (cfg.rank == 0) throw ValidationError(ValidationCode::rank_not_positive, "rank r must be >= 1");
  if (cfg.unshared_rank > cfg.rank) {
    throw ValidationError(ValidationCode::unshared_exceeds_rank,
                          "unshared rank u exceeds r (u=" + std::to_string(cfg.unshared_rank) +
                              ", r=" + std::to_string(cfg.rank) + ")");
  }
  if (cfg.share_rate_a == 0 || cfg.share_rate_b == 0) {
    throw ValidationError(ValidationCode::share_rate_not_positive, "share rates must be >= 1");
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) {
    throw ValidationError(ValidationCode::dropout_out_of_range,
                          "dropout rate must lie in [0, 1), got " + std::to_string(cfg.dropout));
  }
  if (!std::isfinite(cfg.alpha) || !std::isfinite(cfg.init_gain) || cfg.init_gain <= 0.0) {
    throw ValidationError(ValidationCode::bad_scalar, "alpha and init gain must be finite");
  }
  const std::size_t shared = cfg.rank - cfg.unshared_rank;
  const bool hidden = cfg.share_axis == DimAxis::hidden;
  check_rate(cfg.share_rate_a, hidden ? h : shared, shared, "A", hidden ? "h" : "shared rank",
             ValidationCode::share_rate_a_exceeds_dim);
  check_rate(cfg.share_rate_b, hidden ? o : shared, shared, "B", hidden ? "o" : "shared rank",
             ValidationCode::share_rate_b_exceeds_dim);

  AdapterLayout layout;
  layout.h = h;
  layout.o = o;
  layout.a_plan = make_plan(shared, h, cfg.share_rate_a, cfg, cfg.stride_a, true);
  layout.b_plan = make_plan(shared, o, cfg.share_rate_b, cfg, cfg.stride_b, false);
  layout.cfg = cfg;
  layout.cfg.stride_a = layout.a_plan.stride;
  layout.cfg.stride_b = layout.b_plan.stride;
  return layout;
}

std::size_t trainable_count(const AdapterConfig& cfg, std::size_t h, std::size_t o) {
  return validate(cfg, h, o).trainable_count();
}

AdapterState zero_state(const AdapterLayout& layout) {
  AdapterState s;
  s.layout = layout;
  s.a_unshared = Matrix(layout.cfg.unshared_rank, layout.h);
  s.a_chunk = Matrix(layout.a_plan.chunk_rows, layout.a_plan.chunk_cols);
  s.b_unshared = Matrix(layout.o, layout.cfg.unshared_rank);
  s.b_chunk = Matrix(layout.b_plan.chunk_rows, layout.b_plan.chunk_cols);
  return s;
}

AdapterState init_adapter(const AdapterConfig& cfg, std::size_t h, std::size_t o,
                          std::uint64_t seed) {
  AdapterState s = zero_state(validate(cfg, h, o));
  Rng rng(seed);
  const double ub = s.layout.unshared_init_bound();
  const double cb = s.layout.chunk_init_bound();
  for (double& v : s.a_unshared.data()) v = rng.uniform(-ub, ub);
  for (double& v : s.a_chunk.data()) v = rng.uniform(-cb, cb);
  return s;
}

Matrix expand_a(const AdapterState& state) {
  return concat_v(state.a_unshared, broadcast(state.a_chunk, state.layout.a_plan));
}

Matrix expand_b(const AdapterState& state) {
  return concat_h(state.b_unshared, broadcast(state.b_chunk, state.layout.b_plan));
}

Matrix delta_w(const AdapterState& state) {
  return scale(matmul(expand_b(state), expand_a(state)), state.layout.scaling());
}

namespace {

void check_io(const char* op, const AdapterState& state, const Matrix& weight, const Matrix& x) {
  const auto& l = state.layout;
  if (weight.rows() != l.o || weight.cols() != l.h) {
    throw ShapeError(std::string(op) + ": weight is " + weight.shape_string() + ", adapter expects " +
                     std::to_string(l.o) + "x" + std::to_string(l.h));
  }
  if (x.rows() != l.h) {
    throw ShapeError(std::string(op) + ": input is " + x.shape_string() + ", expected " +
                     std::to_string(l.h) + " rows");
  }
}

Matrix adapter_path(const AdapterState& state, const Matrix& x) {
  Matrix z = matmul(expand_a(state), x);
  return scale(matmul(expand_b(state), z), state.layout.scaling());
}

}  // namespace

Matrix forward(const AdapterState& state, const Matrix& weight, const Matrix& x) {
  check_io("forward", state, weight, x);
  Matrix y = matmul(weight, x);
  if (!state.merged) add_in_place(y, adapter_path(state, x));
  return y;
}

Matrix forward(const AdapterState& state, const Matrix& weight, const Matrix& x, bool training,
               Rng& rng, Matrix* mask_out) {
  check_io("forward", state, weight, x);
  const double p = state.layout.cfg.dropout;
  if (!training || p == 0.0 || state.merged) {
    if (mask_out) *mask_out = Matrix(x.rows(), x.cols(), 1.0);
    return forward(state, weight, x);
  }
  Matrix mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : mask.data()) v = rng.uniform01() < p ? 0.0 : keep_scale;
  Matrix y = matmul(weight, x);
  add_in_place(y, adapter_path(state, hadamard(x, mask)));
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

GradBundle backward(const AdapterState& state, const Matrix& weight, const Matrix& x,
                    const Matrix& upstream, const Matrix* dropout_mask, BackwardOptions options) {
  check_io("backward", state, weight, x);
  if (state.merged) throw StateError("backward: adapter is merged into the weight");
  const auto& l = state.layout;
  if (upstream.rows() != l.o || upstream.cols() != x.cols()) {
    throw ShapeError("backward: upstream gradient is " + upstream.shape_string() + ", expected " +
                     std::to_string(l.o) + "x" + std::to_string(x.cols()));
  }
  if (dropout_mask && (dropout_mask->rows() != x.rows() || dropout_mask->cols() != x.cols())) {
    throw ShapeError("backward: dropout mask is " + dropout_mask->shape_string() +
                     ", input is " + x.shape_string());
  }
  const double s = l.scaling();
  const std::size_t u = l.cfg.unshared_rank;
  const std::size_t r = l.cfg.rank;
  const Matrix a = expand_a(state);
  const Matrix b = expand_b(state);
  const Matrix xt = dropout_mask ? hadamard(x, *dropout_mask) : x;

  const Matrix bg = matmul_tn(b, upstream);             // r x batch
  const Matrix ga_full = scale(matmul_nt(bg, xt), s);   // r x h
  const Matrix gb_full = scale(matmul_nt(upstream, matmul(a, xt)), s);  // o x r

  GradBundle g;
  Matrix dx = scale(matmul_tn(a, bg), s);
  if (dropout_mask) dx = hadamard(dx, *dropout_mask);
  g.input = add(matmul_tn(weight, upstream), dx);

  const bool inverse = !options.disable_inverse_roll;
  g.a_unshared = slice(ga_full, {0, u}, {0, l.h});
  g.a_chunk = fold(slice(ga_full, {u, r}, {0, l.h}), l.a_plan, inverse);
  g.b_unshared = slice(gb_full, {0, l.o}, {0, u});
  g.b_chunk = fold(slice(gb_full, {0, l.o}, {u, r}), l.b_plan, inverse);
  return g;
}

Matrix merge(AdapterState& state, const Matrix& base) {
  if (state.merged) throw StateError("merge: adapter is already merged");
  if (base.rows() != state.layout.o || base.cols() != state.layout.h) {
    throw ShapeError("merge: base weight is " + base.shape_string() + ", adapter expects " +
                     std::to_string(state.layout.o) + "x" + std::to_string(state.layout.h));
  }
  Matrix w = add(base, delta_w(state));
  state.merged = true;
  return w;
}

Matrix unmerge(AdapterState& state, const Matrix& merged_weight) {
  if (!state.merged) throw StateError("unmerge: adapter is not merged");
  if (merged_weight.rows() != state.layout.o || merged_weight.cols() != state.layout.h) {
    throw ShapeError("unmerge: weight is " + merged_weight.shape_string() +
                     ", adapter expects " + std::to_string(state.layout.o) + "x" +
                     std::to_string(state.layout.h));
  }
  Matrix w = subtract(merged_weight, delta_w(state));
  state.merged = false;
  return w;
}

namespace {
constexpr std::array<std::pair<Variant, std::string_view>, 9> kVariantNames{{
    {Variant::lora, "lora"},
    {Variant::clora, "clora"},
    {Variant::rolora, "rolora"},
    {Variant::prolora, "prolora"},
    {Variant::prolora_no_rotation, "prolora_no_rotation"},
    {Variant::prolora_no_rectified_init, "prolora_no_rectified_init"},
    {Variant::share_hidden_rotate_hidden, "share_hidden_rotate_hidden"},
    {Variant::share_rank_rotate_hidden, "share_rank_rotate_hidden"},
    {Variant::share_rank_rotate_rank, "share_rank_rotate_rank"},
}};
}  // namespace

std::string_view to_string(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (n == name) return variant;
  }
  throw ArgumentError("unknown variant '" + std::string(name) + "'");
}

AdapterConfig configure_variant(Variant v, AdapterConfig c) {
  switch (v) {
    case Variant::lora:
      c.unshared_rank = c.rank;
      break;
    case Variant::clora:
      c.unshared_rank = 0;
      c.stride_a = 0;
      c.stride_b = 0;
      break;
    case Variant::rolora:
      c.unshared_rank = 0;
      break;
    case Variant::prolora:
      break;
    case Variant::prolora_no_rotation:
      c.stride_a = 0;
      c.stride_b = 0;
      break;
    case Variant::prolora_no_rectified_init:
      c.rectified_init = false;
      break;
    case Variant::share_hidden_rotate_hidden:
      c.share_axis = DimAxis::hidden;
      c.rotate_axis = DimAxis::hidden;
      break;
    case Variant::share_rank_rotate_hidden:
      c.share_axis = DimAxis::rank;
      c.rotate_axis = DimAxis::hidden;
      break;
    case Variant::share_rank_rotate_rank:
      c.share_axis = DimAxis::rank;
      c.rotate_axis = DimAxis::rank;
      break;
  }
  return c;
}

}  // namespace prolora
