#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cirm {

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

/// A named trainable array with its gradient accumulator.
struct ParamTensor {
  ParamTensor() = default;
  ParamTensor(std::string name, std::vector<std::size_t> shape);

  std::string name;
  std::vector<std::size_t> shape;
  Vec values;
  Vec grad;

  std::size_t size() const { return values.size(); }
  void zero_grad();
  /// Throws if shape/values/grad lengths disagree or any value is non-finite.
  void validate() const;
  std::string shape_string() const;
};

using ParamRefs = std::vector<ParamTensor*>;
using ConstParamRefs = std::vector<const ParamTensor*>;

inline ConstParamRefs as_const(const ParamRefs& refs) {
  return ConstParamRefs(refs.begin(), refs.end());
}

void zero_grads(const ParamRefs& params);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void init_glorot_uniform(ParamTensor& weight, std::size_t fan_in,
                         std::size_t fan_out, Rng& rng);

/// FNV-1a over names, shapes and the raw bytes of every value.
std::uint64_t params_checksum(const ConstParamRefs& params);

/// Copies values (not gradients) between structurally identical lists.
void copy_values(const ConstParamRefs& from, const ParamRefs& to);

}  // namespace cirm
