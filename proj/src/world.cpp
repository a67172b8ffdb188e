#include "cirm/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"

namespace cirm {

using nlohmann::json;

bool GenerativeWorld::has_deterministic_concepts() const {
  return std::any_of(flip_rate.begin(), flip_rate.end(),
                     [](double e) { return e == 0.0; });
}

GenerativeWorld build_world(WorldSpec spec) {
  const std::size_t k = spec.num_concepts;
  const std::size_t M = spec.num_classes;
  const std::size_t d = spec.input_dim;
  if (k == 0) throw ValueError("num_concepts must be >= 1");
  if (M == 0) throw ValueError("num_classes must be >= 1");
  if (d == 0) throw ValueError("input_dim must be >= 1");
  if (spec.class_prior.size() != M) {
    throw ValueError("class_prior must hold num_classes entries");
  }
  double total = 0.0;
  for (double p : spec.class_prior) {
    if (!(p >= 0.0)) throw ValueError("class_prior entries must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValueError("class_prior must sum to 1");
  if (spec.templates.size() != M) {
    throw ValueError("templates must hold num_classes rows");
  }
  std::set<std::vector<int>> seen;
  for (const auto& row : spec.templates) {
    if (row.size() != k) throw ValueError("templates rows must have num_concepts bits");
    for (int b : row) {
      if (b != 0 && b != 1) throw ValueError("templates entries must be 0 or 1");
    }
    if (!seen.insert(row).second) throw ValueError("templates must be pairwise distinct");
  }
  if (spec.flip_rate.size() != k) throw ValueError("flip_rate must hold num_concepts entries");
  for (double e : spec.flip_rate) {
    if (!(e >= 0.0 && e < 0.5)) throw ValueError("flip_rate entries must lie in [0, 0.5)");
  }
  if (spec.emission.size() != d * k) throw ValueError("emission must be input_dim x num_concepts");
  for (double a : spec.emission) {
    if (!std::isfinite(a)) throw ValueError("emission entries must be finite");
  }
  if (!(spec.noise_scale >= 0.0)) throw ValueError("noise_scale must be >= 0");
  std::set<std::size_t> grouped;
  for (const auto& g : spec.groups) {
    if (g.members.empty()) throw ValueError("groups: group '" + g.name + "' is empty");
    for (std::size_t i : g.members) {
      if (i >= k) throw ValueError("groups: index out of range in '" + g.name + "'");
      if (!grouped.insert(i).second) {
        throw ValueError("groups: concept " + std::to_string(i) + " in two groups");
      }
    }
  }
  if (spec.concept_names.empty()) {
    for (std::size_t i = 0; i < k; ++i) spec.concept_names.push_back("c" + std::to_string(i));
  } else if (spec.concept_names.size() != k) {
    throw ValueError("concept_names must hold num_concepts entries");
  }
  if (spec.class_names.empty()) {
    for (std::size_t y = 0; y < M; ++y) spec.class_names.push_back("y" + std::to_string(y));
  } else if (spec.class_names.size() != M) {
    throw ValueError("class_names must hold num_classes entries");
  }
  return spec;
}

namespace {

struct PresetShape {
  std::size_t k, M, d;
  double flip;
  double noise;
  std::size_t min_hamming;
  std::size_t group_size;  // 0 = ungrouped
};

PresetShape preset_shape(const std::string& name) {
  if (name == "small") return {6, 4, 12, 0.01, 4.0, 2, 0};
  if (name == "medium") return {16, 20, 32, 0.01, 4.0, 4, 0};
  if (name == "grouped") return {16, 12, 32, 0.01, 4.0, 4, 4};
  throw ValueError("unknown world preset '" + name + "'");
}

std::size_t hamming(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

}  // namespace

std::vector<std::string> preset_names() { return {"small", "medium", "grouped"}; }

WorldSpec preset_spec(const std::string& name, std::uint64_t seed) {
  const PresetShape s = preset_shape(name);
  Rng rng(seed);
  WorldSpec w;
  w.num_concepts = s.k;
  w.num_classes = s.M;
  w.input_dim = s.d;
  w.seed = seed;
  w.class_prior.assign(s.M, 1.0 / static_cast<double>(s.M));
  std::bernoulli_distribution bit(0.5);
  std::size_t min_dist = s.min_hamming;
  std::size_t attempts = 0;
  // Redraw whole template sets until every concept varies across classes.
  for (;;) {
    w.templates.clear();
    while (w.templates.size() < s.M) {
      std::vector<int> row(s.k);
      for (int& b : row) b = bit(rng) ? 1 : 0;
      const bool far = std::all_of(w.templates.begin(), w.templates.end(),
                                   [&](const auto& t) { return hamming(t, row) >= min_dist; });
      if (far) w.templates.push_back(std::move(row));
      if (++attempts % 10000 == 0 && min_dist > 1) --min_dist;
    }
    bool varied = true;
    for (std::size_t i = 0; i < s.k && varied; ++i) {
      varied = std::any_of(w.templates.begin(), w.templates.end(),
                           [&](const auto& t) { return t[i] != w.templates.front()[i]; });
    }
    if (varied) break;
  }
  w.flip_rate.assign(s.k, s.flip);
  std::normal_distribution<double> gauss(0.0, 1.0);
  w.emission.resize(s.d * s.k);
  for (double& a : w.emission) a = gauss(rng);
  w.noise_scale = s.noise;
  if (s.group_size > 0) {
    for (std::size_t g = 0; g * s.group_size < s.k; ++g) {
      ConceptGroup group{"group" + std::to_string(g), {}};
      for (std::size_t i = g * s.group_size; i < std::min(s.k, (g + 1) * s.group_size); ++i) {
        group.members.push_back(i);
      }
      w.groups.push_back(std::move(group));
    }
  }
  return w;
}

json world_to_json(const GenerativeWorld& w) {
  json groups = json::array();
  for (const auto& g : w.groups) groups.push_back({{"name", g.name}, {"members", g.members}});
  return {{"format", "cirm-world"},
          {"version", 1},
          {"num_concepts", w.num_concepts},
          {"num_classes", w.num_classes},
          {"input_dim", w.input_dim},
          {"class_prior", w.class_prior},
          {"templates", w.templates},
          {"flip_rate", w.flip_rate},
          {"emission", w.emission},
          {"noise_scale", w.noise_scale},
          {"seed", w.seed},
          {"groups", std::move(groups)},
          {"concept_names", w.concept_names},
          {"class_names", w.class_names}};
}

WorldSpec world_spec_from_json(const json& j) {
  WorldSpec w;
  try {
    w.num_concepts = j.at("num_concepts").get<std::size_t>();
    w.num_classes = j.at("num_classes").get<std::size_t>();
    w.input_dim = j.at("input_dim").get<std::size_t>();
    w.class_prior = j.at("class_prior").get<Vec>();
    w.templates = j.at("templates").get<std::vector<std::vector<int>>>();
    w.flip_rate = j.at("flip_rate").get<Vec>();
    w.emission = j.at("emission").get<Vec>();
    w.noise_scale = j.at("noise_scale").get<double>();
    w.seed = j.value("seed", std::uint64_t{0});
    for (const auto& g : j.value("groups", json::array())) {
      w.groups.push_back({g.at("name").get<std::string>(),
                          g.at("members").get<std::vector<std::size_t>>()});
    }
    w.concept_names = j.value("concept_names", std::vector<std::string>{});
    w.class_names = j.value("class_names", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ValueError(std::string("world spec: ") + e.what());
  }
  return w;
}

GenerativeWorld load_world(const std::filesystem::path& path) {
  return build_world(world_spec_from_json(read_json_file(path)));
}

void save_world(const std::filesystem::path& path, const GenerativeWorld& world) {
  write_json_file(path, world_to_json(world));
}

Dataset sample(const GenerativeWorld& world, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ValueError("sample: n must be >= 1");
  std::seed_seq seq{static_cast<std::uint32_t>(world.seed),
                    static_cast<std::uint32_t>(world.seed >> 32),
                    static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  Rng rng(seq);
  std::discrete_distribution<std::size_t> class_dist(world.class_prior.begin(),
                                                     world.class_prior.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t k = world.num_concepts;
  const std::size_t d = world.input_dim;
  Dataset out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    SampleRecord r;
    r.y = class_dist(rng);
    r.c.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      int b = world.templates[r.y][i];
      if (unif(rng) < world.flip_rate[i]) b = 1 - b;
      r.c[i] = b;
    }
    r.x.assign(d, 0.0);
    for (std::size_t row = 0; row < d; ++row) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += world.emission_at(row, i) * r.c[i];
      const double noise = gauss(rng);
      r.x[row] = acc + world.noise_scale * noise;
    }
    out.push_back(std::move(r));
  }
  return out;
}

DatasetSplits sample_splits(const GenerativeWorld& world, std::size_t n_train,
                            std::size_t n_val, std::size_t n_test,
                            std::uint64_t seed) {
  return {sample(world, n_train, seed * 3 + 1), sample(world, n_val, seed * 3 + 2),
          sample(world, n_test, seed * 3 + 3)};
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data,
                       std::size_t input_dim, std::size_t num_concepts) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < input_dim; ++i) out << 'x' << i << ',';
  for (std::size_t i = 0; i < num_concepts; ++i) out << 'c' << i << ',';
  out << "y\n";
  out.precision(17);
  for (const auto& r : data) {
    for (double v : r.x) out << v << ',';
    for (double v : r.c) out << static_cast<int>(v) << ',';
    out << r.y << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file " + path.string());
  std::size_t d = 0, k = 0;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (!col.empty() && col[0] == 'x') ++d;
      else if (!col.empty() && col[0] == 'c') ++k;
    }
  }
  Dataset data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + k + 1) throw IoError("bad row width in " + path.string());
    SampleRecord r;
    for (std::size_t i = 0; i < d; ++i) r.x.push_back(std::stod(cells[i]));
    for (std::size_t i = 0; i < k; ++i) r.c.push_back(std::stod(cells[d + i]));
    r.y = std::stoul(cells[d + k]);
    data.push_back(std::move(r));
  }
  return data;
}

namespace {

double bit_likelihood(const GenerativeWorld& w, std::size_t y, std::size_t i, int bit) {
  const double e = w.flip_rate[i];
  return w.templates[y][i] == bit ? 1.0 - e : e;
}

void check_evidence(const GenerativeWorld& w, const std::map<std::size_t, int>& ev) {
  for (auto [i, b] : ev) {
    if (i >= w.num_concepts) throw ValueError("evidence index out of range");
    if (b != 0 && b != 1) throw ValueError("evidence values must be 0 or 1");
  }
}

}  // namespace

double evidence_probability(const GenerativeWorld& world,
                            const std::map<std::size_t, int>& evidence) {
  check_evidence(world, evidence);
  double total = 0.0;
  for (std::size_t y = 0; y < world.num_classes; ++y) {
    double p = world.class_prior[y];
    for (auto [i, b] : evidence) p *= bit_likelihood(world, y, i, b);
    total += p;
  }
  return total;
}

double exact_conditional(const GenerativeWorld& world,
                         const std::map<std::size_t, int>& evidence,
                         std::size_t target) {
  check_evidence(world, evidence);
  if (target >= world.num_concepts) throw ValueError("target index out of range");
  if (evidence.count(target)) throw ValueError("target concept is part of the evidence");
  double num = 0.0, den = 0.0;
  for (std::size_t y = 0; y < world.num_classes; ++y) {
    double p = world.class_prior[y];
    for (auto [i, b] : evidence) p *= bit_likelihood(world, y, i, b);
    den += p;
    num += p * bit_likelihood(world, y, target, 1);
  }
  if (den <= 0.0) throw StateError("zero-probability evidence");
  return num / den;
}

Vec exact_class_posterior(const GenerativeWorld& world, std::span<const double> c) {
  if (c.size() != world.num_concepts) {
    throw ShapeError("class posterior: concept vector [" + std::to_string(c.size()) +
                     "] but world has k=" + std::to_string(world.num_concepts));
  }
  Vec post(world.num_classes);
  double total = 0.0;
  for (std::size_t y = 0; y < world.num_classes; ++y) {
    double p = world.class_prior[y];
    for (std::size_t i = 0; i < world.num_concepts; ++i) {
      if (c[i] != 0.0 && c[i] != 1.0) throw ValueError("concept vector must be binary");
      p *= bit_likelihood(world, y, i, static_cast<int>(c[i]));
    }
    post[y] = p;
    total += p;
  }
  if (total <= 0.0) throw StateError("zero-probability evidence");
  for (double& p : post) p /= total;
  return post;
}

Vec concept_marginals(const GenerativeWorld& world) {
  Vec m(world.num_concepts);
  for (std::size_t i = 0; i < world.num_concepts; ++i) m[i] = exact_conditional(world, {}, i);
  return m;
}

}  // namespace cirm
