#include "cirm/nd/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "cirm/error.hpp"

namespace cirm {

using nlohmann::json;

json params_to_json(const ConstParamRefs& params, std::uint64_t seed) {
  json tensors = json::array();
  for (const ParamTensor* p : params) {
    tensors.push_back({{"name", p->name}, {"shape", p->shape}, {"values", p->values}});
  }
  return {{"format", kParamFormatTag},
          {"version", kParamFormatVersion},
          {"seed", seed},
          {"checksum", std::to_string(params_checksum(params))},
          {"tensors", std::move(tensors)}};
}

std::uint64_t params_from_json(const json& j, const ParamRefs& params) {
  if (j.value("format", std::string{}) != kParamFormatTag) {
    throw IoError("not a parameter checkpoint (missing format tag)");
  }
  if (j.at("version").get<int>() != kParamFormatVersion) {
    throw IoError("unsupported parameter checkpoint version " +
                  j.at("version").dump());
  }
  const json& tensors = j.at("tensors");
  if (tensors.size() != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(tensors.size()) +
                     " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& t = tensors[i];
    ParamTensor& p = *params[i];
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    if (name != p.name || shape != p.shape) {
      ParamTensor probe(name, shape);
      throw ShapeError("checkpoint tensor '" + name + "' " + probe.shape_string() +
                       " does not match model tensor '" + p.name + "' " +
                       p.shape_string());
    }
    p.values = t.at("values").get<Vec>();
    p.validate();
  }
  return j.at("seed").get<std::uint64_t>();
}

void save_params(const std::filesystem::path& path, const ConstParamRefs& params,
                 std::uint64_t seed) {
  write_json_file(path, params_to_json(params, seed));
}

std::uint64_t load_params(const std::filesystem::path& path,
                          const ParamRefs& params) {
  return params_from_json(read_json_file(path), params);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed json in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

json to_json(const RecurrentState& state) {
  return {{"hidden", state.hidden}, {"cell", state.cell}};
}

RecurrentState recurrent_state_from_json(const json& j) {
  RecurrentState s{j.at("hidden").get<Vec>(), j.at("cell").get<Vec>()};
  if (s.hidden.size() != s.cell.size()) {
    throw ShapeError("recurrent state hidden/cell lengths differ");
  }
  return s;
}

}  // namespace cirm
