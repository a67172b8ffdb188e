#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"
#include "cirm/world.hpp"

using namespace cirm;

namespace {

// Two classes with templates 10 and 01, flip rates 0.1 and 0.2.
GenerativeWorld two_by_two() {
  WorldSpec s;
  s.num_concepts = 2;
  s.num_classes = 2;
  s.input_dim = 2;
  s.class_prior = {0.5, 0.5};
  s.templates = {{1, 0}, {0, 1}};
  s.flip_rate = {0.1, 0.2};
  s.emission = {1, 0, 0, 1};
  s.noise_scale = 0.0;
  return build_world(s);
}

}  // namespace

TEST_SUITE("world") {

TEST_CASE("exact conditionals match hand enumeration") {
  const GenerativeWorld w = two_by_two();
  // p(c0=1) = .5*.9 + .5*.1
  CHECK(exact_conditional(w, {}, 0) == doctest::Approx(0.5));
  // p(c1=1) = .5*.2 + .5*.8
  CHECK(exact_conditional(w, {}, 1) == doctest::Approx(0.5));
  // p(y=0 | c0=1) = .9, so p(c1=1 | c0=1) = .9*.2 + .1*.8
  CHECK(exact_conditional(w, {{0, 1}}, 1) == doctest::Approx(0.26));
  // p(y=0 | c0=0) = .1
  CHECK(exact_conditional(w, {{0, 0}}, 1) == doctest::Approx(0.1 * 0.2 + 0.9 * 0.8));
  // p(y=0 | c1=1) = .2*.5 / .5 = .2
  CHECK(exact_conditional(w, {{1, 1}}, 0) == doctest::Approx(0.2 * 0.9 + 0.8 * 0.1));
  CHECK(evidence_probability(w, {{0, 1}, {1, 1}}) ==
        doctest::Approx(0.5 * 0.9 * 0.2 + 0.5 * 0.1 * 0.8));
  const Vec post = exact_class_posterior(w, Vec{1.0, 0.0});
  // .5*.9*.8 vs .5*.1*.2
  CHECK(post[0] == doctest::Approx(0.72 / 0.74));
  CHECK(post[1] == doctest::Approx(0.02 / 0.74));
  CHECK(concept_marginals(w) == Vec{exact_conditional(w, {}, 0), exact_conditional(w, {}, 1)});
}

TEST_CASE("zero-probability evidence and bad arguments") {
  WorldSpec s = two_by_two();
  s.flip_rate = {0.0, 0.0};
  const GenerativeWorld w = build_world(s);
  CHECK(w.has_deterministic_concepts());
  CHECK_THROWS_AS(exact_conditional(w, {{0, 1}, {1, 1}}, 0), ValueError);
  CHECK(exact_conditional(w, {{0, 1}}, 1) == 0.0);
  WorldSpec s3 = s;
  s3.num_concepts = 3;
  s3.templates = {{1, 0, 0}, {0, 1, 0}};
  s3.flip_rate = {0.0, 0.0, 0.0};
  s3.emission.assign(6, 0.0);
  s3.concept_names.clear();
  const GenerativeWorld w3 = build_world(s3);
  CHECK_THROWS_AS(exact_conditional(w3, {{0, 1}, {1, 1}}, 2), StateError);
  CHECK_THROWS_AS(exact_conditional(w3, {}, 5), ValueError);
}

TEST_CASE("build_world rejects invalid specs") {
  const WorldSpec ok = two_by_two();
  auto bad = [&](auto mutate) {
    WorldSpec s = ok;
    mutate(s);
    CHECK_THROWS_AS(build_world(s), ValueError);
  };
  bad([](WorldSpec& s) { s.class_prior = {0.4, 0.4}; });
  bad([](WorldSpec& s) { s.templates = {{1, 0}, {1, 0}}; });
  bad([](WorldSpec& s) { s.templates = {{1, 2}, {0, 1}}; });
  bad([](WorldSpec& s) { s.flip_rate = {0.5, 0.1}; });
  bad([](WorldSpec& s) { s.emission = {1, 0, 0}; });
  bad([](WorldSpec& s) { s.noise_scale = -1.0; });
  bad([](WorldSpec& s) { s.groups = {{"g", {0, 1}}, {"h", {1}}}; });
  CHECK_THROWS_AS(preset_spec("huge", 1), ValueError);
}

TEST_CASE("sampling is seeded and follows the marginals") {
  const GenerativeWorld w = build_world(preset_spec("small", 5));
  const Dataset a = sample(w, 20000, 11);
  const Dataset b = sample(w, 20000, 11);
  REQUIRE(a.size() == b.size());
  for (std::size_t n = 0; n < a.size(); n += 997) {
    CHECK(a[n].x == b[n].x);
    CHECK(a[n].c == b[n].c);
  }
  const Vec m = concept_marginals(w);
  for (std::size_t i = 0; i < w.num_concepts; ++i) {
    double freq = 0.0;
    for (const auto& s : a) freq += s.c[i];
    freq /= static_cast<double>(a.size());
    // 5 binomial standard errors
    CHECK(std::abs(freq - m[i]) < 5.0 * std::sqrt(0.25 / 20000.0));
  }
  for (const auto& s : a) {
    for (double c : s.c) CHECK((c == 0.0 || c == 1.0));
  }
}

TEST_CASE("zero noise gives x = A c exactly") {
  const GenerativeWorld w = two_by_two();
  for (const auto& s : sample(w, 50, 3)) {
    CHECK(s.x == s.c);  // A = I
  }
}

TEST_CASE("presets have the documented shapes") {
  const GenerativeWorld small = build_world(preset_spec("small", 1));
  CHECK(small.num_concepts == 6);
  CHECK(small.num_classes == 4);
  CHECK(small.input_dim == 12);
  const GenerativeWorld grouped = build_world(preset_spec("grouped", 1));
  CHECK(grouped.groups.size() == 4);
  const GenerativeWorld medium = build_world(preset_spec("medium", 1));
  CHECK(medium.num_concepts == 16);
  CHECK(medium.num_classes == 20);
}

TEST_CASE("world json and dataset csv round trips") {
  const GenerativeWorld w = build_world(preset_spec("grouped", 9));
  const auto dir = std::filesystem::temp_directory_path() / "cirm-unit-world";
  std::filesystem::create_directories(dir);
  save_world(dir / "w.json", w);
  const GenerativeWorld r = load_world(dir / "w.json");
  CHECK(world_to_json(r) == world_to_json(w));

  const Dataset data = sample(w, 40, 2);
  write_dataset_csv(dir / "d.csv", data, w.input_dim, w.num_concepts);
  const Dataset back = read_dataset_csv(dir / "d.csv");
  REQUIRE(back.size() == data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    CHECK(back[n].x == data[n].x);
    CHECK(back[n].c == data[n].c);
    CHECK(back[n].y == data[n].y);
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
