#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/nd/tensor.hpp"

namespace cirm {

struct ConceptGroup {
  std::string name;
  std::vector<std::size_t> members;
};

/// Noisy-template world: y ~ prior, c = template[y] with bit i flipped
/// w.p. flip_rate[i], x = A c + N(0, noise_scale^2 I). Concepts are
/// conditionally independent given the class, so every conditional is
/// enumerable over classes.
struct GenerativeWorld {
  std::size_t num_concepts = 0;  // k
  std::size_t num_classes = 0;   // M
  std::size_t input_dim = 0;     // d
  Vec class_prior;
  std::vector<std::vector<int>> templates;  // M rows of k bits
  Vec flip_rate;                            // k
  Vec emission;                             // d x k, row-major
  double noise_scale = 0.0;
  std::uint64_t seed = 0;
  std::vector<ConceptGroup> groups;
  std::vector<std::string> concept_names;
  std::vector<std::string> class_names;

  /// True when some flip rate is zero: off-template concept vectors then
  /// have zero probability under some classes.
  bool has_deterministic_concepts() const;
  double emission_at(std::size_t row, std::size_t col) const {
    return emission[row * num_concepts + col];
  }
};

/// Unvalidated description; `build_world` checks every invariant.
using WorldSpec = GenerativeWorld;

GenerativeWorld build_world(WorldSpec spec);

/// Preset names: "small" (k=6, M=4, d=12), "medium" (k=16, M=20, d=32),
/// "grouped" (k=16 in 4 groups, M=12, d=32). Templates and emission are
/// drawn from `seed`.
WorldSpec preset_spec(const std::string& name, std::uint64_t seed);
std::vector<std::string> preset_names();

nlohmann::json world_to_json(const GenerativeWorld& world);
WorldSpec world_spec_from_json(const nlohmann::json& j);
GenerativeWorld load_world(const std::filesystem::path& path);
void save_world(const std::filesystem::path& path, const GenerativeWorld& world);

struct SampleRecord {
  Vec x;
  Vec c;  // entries exactly 0.0 or 1.0
  std::size_t y = 0;
};

using Dataset = std::vector<SampleRecord>;

Dataset sample(const GenerativeWorld& world, std::size_t n, std::uint64_t seed);

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Independent draws for each split, seeded from `seed`.
DatasetSplits sample_splits(const GenerativeWorld& world, std::size_t n_train,
                            std::size_t n_val, std::size_t n_test,
                            std::uint64_t seed);

/// Columns x0..x{d-1}, c0..c{k-1}, y with round-trip precision.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data,
                       std::size_t input_dim, std::size_t num_concepts);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// p(c_target = 1 | c_S = evidence) by enumeration over classes.
/// Throws StateError("zero-probability evidence") when p(evidence) = 0.
double exact_conditional(const GenerativeWorld& world,
                         const std::map<std::size_t, int>& evidence,
                         std::size_t target);

/// p(y | c) for a full concept vector.
Vec exact_class_posterior(const GenerativeWorld& world, std::span<const double> c);

/// p(c_i = 1) for every concept.
Vec concept_marginals(const GenerativeWorld& world);

/// p(c_S = evidence).
double evidence_probability(const GenerativeWorld& world,
                            const std::map<std::size_t, int>& evidence);

}  // namespace cirm
