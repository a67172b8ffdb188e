#include "cirm/policy.hpp"

#include <cmath>
#include <limits>

#include "cirm/error.hpp"

namespace cirm {

SelectionUnits SelectionUnits::concepts(std::size_t k) {
  SelectionUnits u;
  u.num_concepts = k;
  for (std::size_t i = 0; i < k; ++i) {
    u.members.push_back({i});
    u.names.push_back("c" + std::to_string(i));
  }
  return u;
}

SelectionUnits SelectionUnits::from_groups(std::size_t k,
                                           const std::vector<ConceptGroup>& groups) {
  if (groups.empty()) return concepts(k);
  SelectionUnits u;
  u.num_concepts = k;
  std::vector<char> covered(k, 0);
  for (const auto& g : groups) {
    for (std::size_t i : g.members) {
      if (i >= k) throw ValueError("group '" + g.name + "' index out of range");
      if (covered[i]) throw ValueError("concept " + std::to_string(i) + " in two groups");
      covered[i] = 1;
    }
    u.members.push_back(g.members);
    u.names.push_back(g.name);
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (!covered[i]) {
      u.members.push_back({i});
      u.names.push_back("c" + std::to_string(i));
    }
  }
  return u;
}

PolicyKind PolicyKind::ucp(PolicySource source) {
  PolicyKind p;
  p.type = PolicyType::ucp;
  p.source = source;
  return p;
}

PolicyKind PolicyKind::random(std::uint64_t seed) {
  PolicyKind p;
  p.type = PolicyType::random;
  p.seed = seed;
  return p;
}

PolicyKind PolicyKind::manual(std::vector<std::size_t> sequence) {
  PolicyKind p;
  p.type = PolicyType::manual;
  p.sequence = std::move(sequence);
  return p;
}

std::string to_string(PolicyType t) {
  switch (t) {
    case PolicyType::random: return "random";
    case PolicyType::ucp: return "ucp";
    case PolicyType::manual: return "manual";
  }
  return "?";
}

std::string to_string(PolicySource s) {
  return s == PolicySource::original ? "original" : "updated";
}

PolicyType policy_type_from_string(const std::string& s) {
  if (s == "random") return PolicyType::random;
  if (s == "ucp") return PolicyType::ucp;
  if (s == "manual") return PolicyType::manual;
  throw ValueError("unknown policy '" + s + "'");
}

PolicySource policy_source_from_string(const std::string& s) {
  if (s == "original" || s == "static") return PolicySource::original;
  if (s == "updated") return PolicySource::updated;
  throw ValueError("unknown policy source '" + s + "'");
}

nlohmann::json to_json(const PolicyKind& p) {
  nlohmann::json j{{"type", to_string(p.type)},
                   {"source", to_string(p.source)},
                   {"seed", p.seed},
                   {"group_score", p.group_score == GroupScore::min ? "min" : "mean"}};
  if (p.type == PolicyType::manual) j["sequence"] = p.sequence;
  return j;
}

PolicyKind policy_from_json(const nlohmann::json& j) {
  PolicyKind p;
  p.type = policy_type_from_string(j.value("type", std::string("ucp")));
  p.source = policy_source_from_string(j.value("source", std::string("updated")));
  p.seed = j.value("seed", std::uint64_t{0});
  p.sequence = j.value("sequence", std::vector<std::size_t>{});
  p.group_score = j.value("group_score", std::string("min")) == "mean" ? GroupScore::mean
                                                                       : GroupScore::min;
  return p;
}

std::size_t ucp_select(std::span<const double> probs, const std::vector<char>& unit_done,
                       const SelectionUnits& units, GroupScore score) {
  if (probs.size() != units.num_concepts) {
    throw ShapeError("ucp: probabilities [" + std::to_string(probs.size()) +
                     "] but k=" + std::to_string(units.num_concepts));
  }
  if (unit_done.size() != units.size()) throw ShapeError("ucp: unit mask size mismatch");
  std::size_t best = units.size();
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t u = 0; u < units.size(); ++u) {
    if (unit_done[u]) continue;
    double s = score == GroupScore::min ? std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t i : units.members[u]) {
      const double dist = std::abs(probs[i] - 0.5);
      if (score == GroupScore::min) s = std::min(s, dist);
      else s += dist;
    }
    if (score == GroupScore::mean) s /= static_cast<double>(units.members[u].size());
    if (s < best_score) {
      best_score = s;
      best = u;
    }
  }
  if (best == units.size()) throw StateError("all concepts already intervened");
  return best;
}

std::size_t ucp_select(std::span<const double> probs, const std::set<std::size_t>& intervened) {
  const auto units = SelectionUnits::concepts(probs.size());
  std::vector<char> done(probs.size(), 0);
  for (std::size_t i : intervened) {
    if (i >= probs.size()) throw ValueError("intervened index out of range");
    done[i] = 1;
  }
  return ucp_select(probs, done, units);
}

std::size_t random_select(Rng& rng, const std::vector<char>& unit_done) {
  std::vector<std::size_t> open;
  for (std::size_t u = 0; u < unit_done.size(); ++u) {
    if (!unit_done[u]) open.push_back(u);
  }
  if (open.empty()) throw StateError("all concepts already intervened");
  std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
  return open[pick(rng)];
}

std::size_t random_select(Rng& rng, std::size_t k, const std::set<std::size_t>& intervened) {
  std::vector<char> done(k, 0);
  for (std::size_t i : intervened) {
    if (i >= k) throw ValueError("intervened index out of range");
    done[i] = 1;
  }
  return random_select(rng, done);
}

}  // namespace cirm
