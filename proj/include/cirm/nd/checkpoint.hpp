#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cirm/nd/layers.hpp"
#include "cirm/nd/tensor.hpp"

namespace cirm {

inline constexpr int kParamFormatVersion = 1;
inline constexpr const char* kParamFormatTag = "cirm-params";

/// {"format", "version", "seed", "checksum", "tensors": [{name, shape, values}]}
nlohmann::json params_to_json(const ConstParamRefs& params, std::uint64_t seed);
/// Loads values into an already-shaped parameter list; names and shapes must
/// match exactly. Returns the stored seed.
std::uint64_t params_from_json(const nlohmann::json& j, const ParamRefs& params);

void save_params(const std::filesystem::path& path, const ConstParamRefs& params,
                 std::uint64_t seed);
std::uint64_t load_params(const std::filesystem::path& path,
                          const ParamRefs& params);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes with a trailing newline; creates parent directories.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

nlohmann::json to_json(const RecurrentState& state);
RecurrentState recurrent_state_from_json(const nlohmann::json& j);

}  // namespace cirm
