#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prolora/adapter.hpp"

namespace prolora {

enum class Dtype { f32, f64 };
std::string_view to_string(Dtype d);
Dtype dtype_from_string(std::string_view name);
constexpr std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

/// PRLA adapter container, all integers and scalars little-endian:
///
///   offset 0   "PRLA"
///   offset 4   u32 version (1)
///   offset 8   u32 header_len
///   offset 12  header_len bytes of UTF-8 JSON
///   then       A_u, A_0, B_u, B_0 payloads, row-major, dtype scalars
///
/// The header carries the adapter config keys, h, o, dtype, merged and
/// shapes {a_unshared, a_chunk, b_unshared, b_chunk: [rows, cols]}.
/// Keys the reader does not know are kept in `extra` and written back on save.
struct AdapterContainer {
  AdapterState state;
  Dtype dtype = Dtype::f64;
  nlohmann::json extra = nlohmann::json::object();
};

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerPreamble = 12;

std::vector<std::uint8_t> encode_container(const AdapterState& state, Dtype dtype,
                                           const nlohmann::json& extra = nlohmann::json::object());
AdapterContainer decode_container(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written.
std::size_t save_adapter(const AdapterState& state, const std::filesystem::path& path, Dtype dtype,
                         const nlohmann::json& extra = nlohmann::json::object());
AdapterContainer load_adapter(const std::filesystem::path& path);

/// Raw little-endian row-major weight blobs (no header).
Matrix read_raw_matrix(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       Dtype dtype);
std::size_t write_raw_matrix(const Matrix& m, const std::filesystem::path& path, Dtype dtype);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace prolora
