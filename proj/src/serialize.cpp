#include "prolora/serialize.hpp"

#include "prolora/errors.hpp"

namespace prolora {

namespace {

std::size_t read_count(const nlohmann::json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ArgumentError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

nlohmann::json config_to_json(const AdapterConfig& cfg) {
  nlohmann::json j = {{"rank", cfg.rank},
                      {"unshared_rank", cfg.unshared_rank},
                      {"share_rate_a", cfg.share_rate_a},
                      {"share_rate_b", cfg.share_rate_b},
                      {"alpha", cfg.alpha},
                      {"dropout", cfg.dropout},
                      {"share_axis", to_string(cfg.share_axis)},
                      {"rotate_axis", to_string(cfg.rotate_axis)},
                      {"rectified_init", cfg.rectified_init},
                      {"init_gain", cfg.init_gain}};
  if (cfg.stride_a) j["stride_a"] = *cfg.stride_a;
  if (cfg.stride_b) j["stride_b"] = *cfg.stride_b;
  return j;
}

AdapterConfig config_from_json(const nlohmann::json& j, AdapterConfig c) {
  if (!j.is_object()) throw ArgumentError("adapter config must be a JSON object");
  c.rank = read_count(j, "rank", c.rank);
  c.unshared_rank = read_count(j, "unshared_rank", c.unshared_rank);
  if (j.contains("share_rate")) {
    c.share_rate_a = c.share_rate_b = read_count(j, "share_rate", c.share_rate_a);
  }
  c.share_rate_a = read_count(j, "share_rate_a", c.share_rate_a);
  c.share_rate_b = read_count(j, "share_rate_b", c.share_rate_b);
  if (j.contains("stride_a")) {
    if (j.at("stride_a").is_null()) c.stride_a.reset();
    else c.stride_a = read_count(j, "stride_a", 0);
  }
  if (j.contains("stride_b")) {
    if (j.at("stride_b").is_null()) c.stride_b.reset();
    else c.stride_b = read_count(j, "stride_b", 0);
  }
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
  if (j.contains("share_axis")) c.share_axis = dim_axis_from_string(j.at("share_axis").get<std::string>());
  if (j.contains("rotate_axis")) c.rotate_axis = dim_axis_from_string(j.at("rotate_axis").get<std::string>());
  if (j.contains("rectified_init")) c.rectified_init = j.at("rectified_init").get<bool>();
  if (j.contains("init_gain")) c.init_gain = j.at("init_gain").get<double>();
  return c;
}

}  // namespace prolora
