#include "prolora/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "prolora/errors.hpp"
#include "prolora/serialize.hpp"

namespace prolora {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'P', 'R', 'L', 'A'};

constexpr std::array<const char*, 4> kChunkNames{"a_unshared", "a_chunk", "b_unshared", "b_chunk"};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

void put_scalars(std::vector<std::uint8_t>& out, const Matrix& m, Dtype dtype) {
  for (double v : m.data()) {
    if (dtype == Dtype::f64) {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
}

void get_scalars(std::span<const std::uint8_t> in, Matrix& m, Dtype dtype) {
  const std::size_t w = dtype_size(dtype);
  auto d = m.data();
  for (std::size_t k = 0; k < d.size(); ++k) {
    const auto bytes = in.subspan(k * w, w);
    d[k] = dtype == Dtype::f64 ? std::bit_cast<double>(get_u64(bytes))
                               : static_cast<double>(std::bit_cast<float>(get_u32(bytes)));
  }
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "rank", "unshared_rank", "share_rate_a", "share_rate_b", "stride_a", "stride_b",
      "alpha", "dropout", "share_axis", "rotate_axis", "rectified_init", "init_gain",
      "h", "o", "dtype", "merged", "shapes"};
  return keys;
}

std::array<const Matrix*, 4> chunks(const AdapterState& s) {
  return {&s.a_unshared, &s.a_chunk, &s.b_unshared, &s.b_chunk};
}

std::array<Matrix*, 4> chunks(AdapterState& s) {
  return {&s.a_unshared, &s.a_chunk, &s.b_unshared, &s.b_chunk};
}

}  // namespace

std::string_view to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

Dtype dtype_from_string(std::string_view name) {
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  throw FormatError(FormatCode::unsupported_dtype,
                    "unsupported dtype '" + std::string(name) + "' (expected f32|f64)");
}

std::vector<std::uint8_t> encode_container(const AdapterState& state, Dtype dtype,
                                           const nlohmann::json& extra) {
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  const nlohmann::json cfg = config_to_json(state.layout.cfg);
  for (const auto& [k, v] : cfg.items()) header[k] = v;
  header["h"] = state.layout.h;
  header["o"] = state.layout.o;
  header["dtype"] = to_string(dtype);
  header["merged"] = state.merged;
  nlohmann::json shapes = nlohmann::json::object();
  const auto cs = chunks(state);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    shapes[kChunkNames[i]] = {cs[i]->rows(), cs[i]->cols()};
  }
  header["shapes"] = shapes;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const Matrix* m : cs) put_scalars(out, *m, dtype);
  return out;
}

AdapterContainer decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(FormatCode::bad_magic, "bad magic: not a PRLA adapter container");
  }
  if (bytes.size() < kContainerPreamble) {
    throw FormatError(FormatCode::bad_header, "truncated preamble");
  }
  const std::uint32_t version = get_u32(bytes.subspan(4, 4));
  if (version != kContainerVersion) {
    throw FormatError(FormatCode::unsupported_version,
                      "unsupported version " + std::to_string(version) + " (reader supports " +
                          std::to_string(kContainerVersion) + ")");
  }
  const std::uint32_t header_len = get_u32(bytes.subspan(8, 4));
  if (bytes.size() - kContainerPreamble < header_len) {
    throw FormatError(FormatCode::bad_header, "truncated header: declared " +
                                                  std::to_string(header_len) + " bytes");
  }
  const auto header_bytes = bytes.subspan(kContainerPreamble, header_len);
  nlohmann::json header =
      nlohmann::json::parse(header_bytes.begin(), header_bytes.end(), nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw FormatError(FormatCode::bad_header, "header is not a JSON object");
  }

  AdapterContainer out;
  AdapterLayout layout;
  try {
    if (!header.contains("dtype") || !header.at("dtype").is_string()) {
      throw FormatError(FormatCode::bad_header, "header field 'dtype' missing");
    }
    out.dtype = dtype_from_string(header.at("dtype").get<std::string>());
    const AdapterConfig cfg = config_from_json(header);
    const auto h = header.at("h").get<std::size_t>();
    const auto o = header.at("o").get<std::size_t>();
    layout = validate(cfg, h, o);
  } catch (const FormatError&) {
    throw;
  } catch (const ValidationError& e) {
    throw FormatError(FormatCode::invalid_config, std::string("invalid adapter config: ") + e.what());
  } catch (const std::exception& e) {
    throw FormatError(FormatCode::bad_header, std::string("malformed header: ") + e.what());
  }

  out.state = zero_state(layout);
  out.state.merged = header.value("merged", false);
  const auto targets = chunks(out.state);
  if (!header.contains("shapes") || !header.at("shapes").is_object()) {
    throw FormatError(FormatCode::bad_header, "header field 'shapes' missing");
  }
  const auto& shapes = header.at("shapes");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const char* name = kChunkNames[i];
    const std::vector<std::size_t> expected{targets[i]->rows(), targets[i]->cols()};
    std::vector<std::size_t> declared;
    try {
      declared = shapes.at(name).get<std::vector<std::size_t>>();
    } catch (const std::exception&) {
      throw FormatError(FormatCode::shape_inconsistency,
                        std::string("shape inconsistency: field '") + name + "' missing or malformed");
    }
    if (declared != expected) {
      throw FormatError(FormatCode::shape_inconsistency,
                        std::string("shape inconsistency: field '") + name + "' declares " +
                            nlohmann::json(declared).dump() + " but the config implies " +
                            nlohmann::json(expected).dump());
    }
  }

  const std::size_t w = dtype_size(out.dtype);
  const std::size_t payload = layout.trainable_count() * w;
  const std::size_t available = bytes.size() - kContainerPreamble - header_len;
  if (available < payload) {
    throw FormatError(FormatCode::truncated_payload,
                      "truncated payload: expected " + std::to_string(payload) + " bytes, found " +
                          std::to_string(available));
  }
  if (available > payload) {
    throw FormatError(FormatCode::trailing_bytes,
                      std::to_string(available - payload) + " unexpected trailing bytes");
  }
  auto cursor = bytes.subspan(kContainerPreamble + header_len);
  for (Matrix* m : targets) {
    get_scalars(cursor, *m, out.dtype);
    cursor = cursor.subspan(m->size() * w);
  }
  for (const auto& [k, v] : header.items()) {
    if (!known_keys().contains(k)) out.extra[k] = v;
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatCode::io_failure, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatCode::io_failure, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatCode::io_failure, "write failed for '" + path.string() + "'");
}

std::size_t save_adapter(const AdapterState& state, const std::filesystem::path& path, Dtype dtype,
                         const nlohmann::json& extra) {
  const auto bytes = encode_container(state, dtype, extra);
  write_file(path, bytes);
  return bytes.size();
}

AdapterContainer load_adapter(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

Matrix read_raw_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       Dtype dtype) {
  const auto bytes = read_file(path);
  const std::size_t expected = rows * cols * dtype_size(dtype);
  if (bytes.size() != expected) {
    throw FormatError(bytes.size() < expected ? FormatCode::truncated_payload
                                              : FormatCode::trailing_bytes,
                      "raw weight '" + path.string() + "' has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected));
  }
  Matrix m(rows, cols);
  get_scalars(bytes, m, dtype);
  return m;
}

std::size_t write_raw_matrix(const Matrix& m, const std::filesystem::path& path, Dtype dtype) {
  std::vector<std::uint8_t> out;
  out.reserve(m.size() * dtype_size(dtype));
  put_scalars(out, m, dtype);
  write_file(path, out);
  return out.size();
}

}  // namespace prolora
