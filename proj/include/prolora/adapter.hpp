#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "prolora/matrix.hpp"
#include "prolora/rng.hpp"

namespace prolora {

/// Which dimension of a low-rank factor an operation runs along.
/// For A (r x h) hidden means columns; for B (o x r) it means rows.
enum class DimAxis { hidden, rank };

std::string_view to_string(DimAxis axis);
DimAxis dim_axis_from_string(std::string_view name);

/// Hyperparameters of one adapter.
///
/// The first `unshared_rank` ranks of A and B are ordinary LoRA factors. The remaining
/// `rank - unshared_rank` ranks are stored as a single chunk per factor and broadcast
/// `share_rate_a` (resp. `share_rate_b`) times along `share_axis`; copy i is rolled by
/// i * stride along `rotate_axis`. With unshared_rank == rank the adapter is plain LoRA.
struct AdapterConfig {
  std::size_t rank = 8;
  std::size_t unshared_rank = 0;
  std::size_t share_rate_a = 1;
  std::size_t share_rate_b = 1;
  /// Unset strides are derived as max(floor(L / share_rate), 1), where L is the
  /// chunk length along the rotation axis (r - u for the default axes).
  std::optional<std::size_t> stride_a;
  std::optional<std::size_t> stride_b;
  double alpha = 16.0;
  double dropout = 0.1;
  DimAxis share_axis = DimAxis::hidden;
  DimAxis rotate_axis = DimAxis::rank;
  /// Sample the shared A chunk with the bound of the full hidden dimension.
  bool rectified_init = true;
  /// Kaiming gain; sqrt(1/3) gives a bound of 1/sqrt(fan_in).
  double init_gain = 0.57735026918962576;

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

/// How one stored chunk is replicated into the shared part of a factor.
struct BroadcastPlan {
  std::size_t chunk_rows = 0;
  std::size_t chunk_cols = 0;
  std::size_t expanded_rows = 0;
  std::size_t expanded_cols = 0;
  Axis partition = Axis::cols;  // copies are laid side by side along this axis
  Axis rotation = Axis::rows;   // each copy is rolled along this axis
  std::size_t copies = 1;
  std::size_t stride = 0;

  std::size_t chunk_extent() const noexcept {
    return partition == Axis::rows ? chunk_rows : chunk_cols;
  }
  std::size_t expanded_extent() const noexcept {
    return partition == Axis::rows ? expanded_rows : expanded_cols;
  }
  /// Width of copy i along the partition axis; only the last copy may be truncated.
  std::size_t copy_extent(std::size_t i) const noexcept;
};

/// Replicates and rolls `chunk` into the expanded shared block.
Matrix broadcast(const Matrix& chunk, const BroadcastPlan& plan);

/// Adjoint of `broadcast`: sums the inverse-rolled per-copy slices of `expanded`.
/// `inverse_roll = false` is a fault-injection hook for negative controls.
Matrix fold(const Matrix& expanded, const BroadcastPlan& plan, bool inverse_roll = true);

/// A configuration checked against a concrete layer (o x h), with strides resolved.
struct AdapterLayout {
  AdapterConfig cfg;
  std::size_t h = 0;
  std::size_t o = 0;
  BroadcastPlan a_plan;
  BroadcastPlan b_plan;

  std::size_t shared_rank() const noexcept { return cfg.rank - cfg.unshared_rank; }
  double scaling() const noexcept { return cfg.alpha / static_cast<double>(cfg.rank); }
  std::size_t trainable_count() const noexcept;
  /// Uniform bounds used by init for A_u and the shared A chunk.
  double unshared_init_bound() const;
  double chunk_init_bound() const;
};

AdapterLayout validate(const AdapterConfig& cfg, std::size_t h, std::size_t o);

/// u(h+o) + (r-u)(ceil(h/m) + ceil(o/n)) for the default axes.
std::size_t trainable_count(const AdapterConfig& cfg, std::size_t h, std::size_t o);

/// Trainable chunks. Shapes, default axes:
///   a_unshared u x h, a_chunk (r-u) x ceil(h/m), b_unshared o x u, b_chunk ceil(o/n) x (r-u).
struct AdapterState {
  AdapterLayout layout;
  Matrix a_unshared;
  Matrix a_chunk;
  Matrix b_unshared;
  Matrix b_chunk;
  bool merged = false;
};

/// All-zero chunks with the shapes implied by `layout`.
AdapterState zero_state(const AdapterLayout& layout);

/// A_u, then the A chunk, drawn row-major from Rng(seed); B is zero.
AdapterState init_adapter(const AdapterConfig& cfg, std::size_t h, std::size_t o,
                          std::uint64_t seed);

Matrix expand_a(const AdapterState& state);
Matrix expand_b(const AdapterState& state);
/// (alpha / r) * expand_b * expand_a
Matrix delta_w(const AdapterState& state);

/// Inference forward: weight * x (+ adapter path when not merged). x is h x batch.
Matrix forward(const AdapterState& state, const Matrix& weight, const Matrix& x);

/// Training forward. Inverted dropout is applied to the adapter input; the mask (entries
/// 0 or 1/(1-p)) is drawn from `rng` in row-major order and written to `mask_out`.
/// With dropout 0 or training == false no random numbers are consumed.
Matrix forward(const AdapterState& state, const Matrix& weight, const Matrix& x, bool training,
               Rng& rng, Matrix* mask_out = nullptr);

struct GradBundle {
  Matrix a_unshared;
  Matrix a_chunk;
  Matrix b_unshared;
  Matrix b_chunk;
  Matrix input;
};

struct BackwardOptions {
  /// Fault injection: skip the inverse roll when folding copy gradients.
  bool disable_inverse_roll = false;
};

/// Closed-form gradients for upstream dL/dy (o x batch). `dropout_mask` replays the mask
/// of the matching training forward; null means no dropout.
GradBundle backward(const AdapterState& state, const Matrix& weight, const Matrix& x,
                    const Matrix& upstream, const Matrix* dropout_mask = nullptr,
                    BackwardOptions options = {});

/// Returns base + delta_w and marks the state merged.
Matrix merge(AdapterState& state, const Matrix& base);
/// Returns merged - delta_w and clears the merged flag.
Matrix unmerge(AdapterState& state, const Matrix& merged_weight);

/// Named points of the design space.
enum class Variant {
  lora,
  clora,
  rolora,
  prolora,
  prolora_no_rotation,
  prolora_no_rectified_init,
  share_hidden_rotate_hidden,
  share_rank_rotate_hidden,
  share_rank_rotate_rank,
};

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

/// Adjusts `base` (rank, share rates, alpha, dropout kept) to realize `v`.
AdapterConfig configure_variant(Variant v, AdapterConfig base);

}  // namespace prolora
