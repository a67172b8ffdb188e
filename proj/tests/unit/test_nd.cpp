#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cirm/error.hpp"
#include "cirm/nd/checkpoint.hpp"
#include "cirm/nd/layers.hpp"
#include "cirm/nd/losses.hpp"
#include "cirm/nd/optim.hpp"

using namespace cirm;

TEST_SUITE("nd") {

TEST_CASE("sigmoid and logit at hand-computed points") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(sigmoid(-std::log(3.0)) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sigmoid(1000.0) == 1.0);
  CHECK(sigmoid(-1000.0) == 0.0);
  CHECK(logit(0.75) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  // clamped at the boundary
  CHECK(logit(1.0) == doctest::Approx(std::log((1 - 1e-7) / 1e-7)));
  CHECK(logit_derivative(0.5) == doctest::Approx(4.0));
  CHECK(logit_derivative(1.0) == 0.0);
}

TEST_CASE("softmax and log_softmax") {
  const Vec p = softmax(Vec{0.0, std::log(2.0)});
  CHECK(p[0] == doctest::Approx(1.0 / 3.0));
  CHECK(p[1] == doctest::Approx(2.0 / 3.0));
  // shift invariance without overflow
  const Vec q = softmax(Vec{1000.0, 1000.0 + std::log(2.0)});
  CHECK(q[0] == doctest::Approx(1.0 / 3.0));
  const Vec lq = log_softmax(Vec{0.0, 0.0, 0.0, 0.0});
  for (double v : lq) CHECK(v == doctest::Approx(-std::log(4.0)));
  const Vec r = relu(Vec{-1.0, 0.0, 2.5});
  CHECK(r == Vec{0.0, 0.0, 2.5});
}

TEST_CASE("bce and ce values") {
  CHECK(bce_loss(Vec{0.5}, Vec{1.0}) == doctest::Approx(std::log(2.0)));
  // mean over entries: (-ln 0.8 - ln 0.6) / 2
  CHECK(bce_loss(Vec{0.8, 0.4}, Vec{1.0, 0.0}) ==
        doctest::Approx((-std::log(0.8) - std::log(0.6)) / 2.0));
  CHECK(bce_loss(Vec{0.8, 0.4}, Vec{1.0, 0.0}, Vec{2.0, 0.0}) ==
        doctest::Approx(-std::log(0.8)));
  CHECK(bce_loss(Vec{1.0, 0.0}, Vec{1.0, 0.0}) == doctest::Approx(-std::log1p(-1e-7)));
  CHECK(clamp_floor_loss() == doctest::Approx(-std::log1p(-1e-7)).epsilon(1e-12));
  // finite at the clamp even for a confident wrong answer
  CHECK(bce_loss(Vec{0.0}, Vec{1.0}) == doctest::Approx(-std::log(1e-7)));
  CHECK(ce_loss(Vec{0.0, 0.0}, 0) == doctest::Approx(std::log(2.0)));
  CHECK(ce_loss(Vec{0.0, std::log(3.0)}, 1) == doctest::Approx(-std::log(0.75)));
  const LossGrad g = ce_loss_grad(Vec{0.0, std::log(3.0)}, 1);
  CHECK(g.grad[0] == doctest::Approx(0.25));
  CHECK(g.grad[1] == doctest::Approx(-0.25));
  CHECK(argmax(Vec{0.1, 0.7, 0.7, 0.2}) == 1);
  CHECK_THROWS_AS(bce_loss(Vec{0.5, 0.5}, Vec{1.0}), ShapeError);
}

TEST_CASE("linear forward on a hand example") {
  ParamTensor w("w", {2, 3}), b("b", {2});
  w.values = {1, 2, 3, -1, 0, 1};
  b.values = {0.5, -0.5};
  const Vec y = linear_forward(w, b, Vec{1.0, 1.0, 2.0});
  CHECK(y == Vec{9.5, 0.5});
  try {
    linear_forward(w, b, Vec{1.0, 2.0});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("mlp output shape and zero-bias identity hidden") {
  Mlp mlp("m", {3, 4, 2}, Activation::identity);
  Rng rng(1);
  mlp.init(rng);
  CHECK(mlp.forward(Vec{0.0, 0.0, 0.0}).size() == 2);
  // identity activation makes the net linear: f(a+b) - f(0) = (f(a)-f(0)) + (f(b)-f(0))
  const Vec z = mlp.forward(Vec{0, 0, 0});
  const Vec fa = mlp.forward(Vec{1, 0, -1});
  const Vec fb = mlp.forward(Vec{0.5, 2, 0});
  const Vec fab = mlp.forward(Vec{1.5, 2, -1});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(fab[i] - z[i] == doctest::Approx((fa[i] - z[i]) + (fb[i] - z[i])));
  }
}

TEST_CASE("lstm zero state and forget-gate bias") {
  LstmCell cell("l", 2, 3);
  Rng rng(2);
  cell.init(rng);
  const RecurrentState s0 = cell.zero_state();
  CHECK(s0.hidden == Vec(3, 0.0));
  CHECK(cell.bias.values[3] == 1.0);  // forget block starts at H
  CHECK(cell.bias.values[0] == 0.0);
  const RecurrentState s1 = cell.step(s0, Vec{0.3, -0.2});
  for (double h : s1.hidden) CHECK(std::abs(h) < 1.0);
}

TEST_CASE("sgd and adam steps") {
  ParamTensor p("p", {2});
  p.values = {1.0, -1.0};
  p.grad = {0.5, -2.0};
  sgd_step({&p}, 0.1);
  CHECK(p.values[0] == doctest::Approx(0.95));
  CHECK(p.values[1] == doctest::Approx(-0.8));

  // The first bias-corrected Adam step moves each entry by lr * g / (|g| + eps).
  ParamTensor q("q", {2});
  q.values = {0.0, 0.0};
  q.grad = {3.0, -0.01};
  Adam adam({.lr = 0.1});
  adam.step({&q});
  CHECK(q.values[0] == doctest::Approx(-0.1 * 3.0 / (3.0 + 1e-8)));
  CHECK(q.values[1] == doctest::Approx(0.1 * 0.01 / (0.01 + 1e-8)));
  CHECK(adam.steps_taken() == 1);
}

TEST_CASE("param checkpoint round trip") {
  Mlp a("m", {3, 5, 2});
  Rng rng(7);
  a.init(rng);
  Mlp b("m", {3, 5, 2});
  const auto path = std::filesystem::temp_directory_path() / "cirm-unit-params.json";
  save_params(path, cirm::as_const(a.parameters()), 42);
  CHECK(load_params(path, b.parameters()) == 42);
  CHECK(params_checksum(cirm::as_const(a.parameters())) == params_checksum(cirm::as_const(b.parameters())));
  const Vec x{0.1, -0.4, 2.0};
  CHECK(a.forward(x) == b.forward(x));

  Mlp wrong("m", {3, 4, 2});
  CHECK_THROWS_AS(load_params(path, wrong.parameters()), ShapeError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_params(path, b.parameters()), IoError);
}

TEST_CASE("checksum is sensitive to single values") {
  ParamTensor p("p", {3});
  p.values = {1, 2, 3};
  const auto c0 = params_checksum({&p});
  p.values[1] = std::nextafter(2.0, 3.0);
  CHECK(params_checksum({&p}) != c0);
}

}  // TEST_SUITE
