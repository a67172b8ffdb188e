#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cirm/nd/tensor.hpp"
#include "cirm/world.hpp"

namespace cirm {

/// What one intervention step acts on: a single concept, or a concept group
/// intervened atomically. Concepts outside every group become singleton units.
struct SelectionUnits {
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::string> names;
  std::size_t num_concepts = 0;

  std::size_t size() const { return members.size(); }
  bool grouped() const { return members.size() != num_concepts; }

  static SelectionUnits concepts(std::size_t k);
  static SelectionUnits from_groups(std::size_t k, const std::vector<ConceptGroup>& groups);
};

enum class PolicyType { random, ucp, manual };
enum class PolicySource { original, updated };
/// How a group is scored from its members' distances to 0.5.
enum class GroupScore { min, mean };

struct PolicyKind {
  PolicyType type = PolicyType::ucp;
  /// original: rank by the un-intervened predictions; updated: rank by the
  /// latest (realigned) concept vector.
  PolicySource source = PolicySource::updated;
  std::uint64_t seed = 0;
  /// Unit order for `manual`.
  std::vector<std::size_t> sequence;
  GroupScore group_score = GroupScore::min;

  static PolicyKind ucp(PolicySource source = PolicySource::updated);
  static PolicyKind random(std::uint64_t seed);
  static PolicyKind manual(std::vector<std::size_t> sequence);
};

std::string to_string(PolicyType t);
std::string to_string(PolicySource s);
PolicyType policy_type_from_string(const std::string& s);
PolicySource policy_source_from_string(const std::string& s);
nlohmann::json to_json(const PolicyKind& p);
PolicyKind policy_from_json(const nlohmann::json& j);

/// Most uncertain not-yet-intervened unit: argmin of |p - 0.5| (group score
/// per `score`), ties to the lowest index. Throws StateError when every unit
/// is done.
std::size_t ucp_select(std::span<const double> probs, const std::vector<char>& unit_done,
                       const SelectionUnits& units, GroupScore score = GroupScore::min);
/// Concept-level convenience overload.
std::size_t ucp_select(std::span<const double> probs, const std::set<std::size_t>& intervened);

/// Uniform over not-yet-intervened units.
std::size_t random_select(Rng& rng, const std::vector<char>& unit_done);
std::size_t random_select(Rng& rng, std::size_t k, const std::set<std::size_t>& intervened);

}  // namespace cirm
