#pragma once

#include <json.hpp>

#include "prolora/adapter.hpp"

namespace prolora {

/// Flat JSON object with the keys rank, unshared_rank, share_rate_a, share_rate_b,
/// stride_a, stride_b (omitted when derived), alpha, dropout, share_axis, rotate_axis,
/// rectified_init, init_gain.
nlohmann::json config_to_json(const AdapterConfig& cfg);

/// Missing keys keep the values of `defaults`. Negative integers are rejected.
AdapterConfig config_from_json(const nlohmann::json& j, AdapterConfig defaults = {});

}  // namespace prolora
