#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "bvelab/errors.hpp"
#include "bvelab/neuralnet.hpp"

using namespace bvelab;
using namespace bvelab::nn;

namespace {

std::vector<double> randomVector(Rng& rng, int n, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = scale * (2.0 * uniform01(rng) - 1.0);
  return v;
}

MlpParams linear(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  MlpParams p;
  p.layers.push_back({w, b});
  return p;
}

}  // namespace

TEST_CASE("zero network outputs zeros") {
  const std::vector<int> hidden{4, 3};
  const auto p = zeroMlp(3, hidden, 2);
  const auto y = forward(p, std::vector<double>{1.5, -2.0, 0.3});
  CHECK(y.isZero(0.0));
}

TEST_CASE("identity layer returns its input") {
  const auto p = linear(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3));
  const std::vector<double> x{0.25, -1.0, 7.0};
  const auto y = forward(p, x);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == x[static_cast<std::size_t>(i)]);
}

TEST_CASE("hand-evaluated two-layer network") {
  MlpParams p;
  Eigen::MatrixXd w1(2, 2);
  w1 << 1.0, 2.0, -1.0, 0.5;
  Eigen::VectorXd b1(2);
  b1 << 0.5, 0.25;
  Eigen::MatrixXd w2(2, 2);
  w2 << 2.0, -1.0, 0.5, 3.0;
  Eigen::VectorXd b2(2);
  b2 << 0.1, -0.2;
  p.layers = {{w1, b1}, {w2, b2}};
  // x = [1, -1]: z1 = [1 - 2 + 0.5, -1 - 0.5 + 0.25] = [-0.5, -1.25] -> relu [0, 0]
  // so the output is just b2. Use x = [2, -1] for a live unit:
  // z1 = [2 - 2 + 0.5, -2 - 0.5 + 0.25] = [0.5, -2.25] -> h = [0.5, 0]
  // y = [2*0.5 + 0.1, 0.5*0.5 - 0.2] = [1.1, 0.05]
  auto y = forward(p, std::vector<double>{1.0, -1.0});
  CHECK(std::abs(y[0] - 0.1) < 1e-12);
  CHECK(std::abs(y[1] + 0.2) < 1e-12);
  y = forward(p, std::vector<double>{2.0, -1.0});
  CHECK(std::abs(y[0] - 1.1) < 1e-12);
  CHECK(std::abs(y[1] - 0.05) < 1e-12);
}

TEST_CASE("shape mismatches are reported") {
  Rng rng(1);
  const std::vector<int> hidden{4};
  const auto p = makeMlp(3, hidden, 2, rng);
  CHECK_THROWS_AS(forward(p, std::vector<double>{1.0, 2.0}), ShapeMismatch);
  CHECK_THROWS_AS(backward(p, std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{1.0}),
                  ShapeMismatch);
}

TEST_CASE("initialization is bounded fan-in scaled with zero biases") {
  Rng rng(2);
  const std::vector<int> hidden{56, 56};
  const auto p = makeMlp(50, hidden, 3, rng);
  REQUIRE(p.layers.size() == 3);
  for (const auto& layer : p.layers) {
    const double std = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    CHECK(layer.weight.cwiseAbs().maxCoeff() <= 2.0 * std + 1e-15);
    CHECK(layer.bias.isZero(0.0));
  }
  const double sd0 = std::sqrt(p.layers[0].weight.array().square().mean());
  // Truncation at two sigma shrinks the deviation to about 0.88 sigma.
  CHECK(sd0 == doctest::Approx(0.88 / std::sqrt(50.0)).epsilon(0.05));
}

TEST_CASE("backward with zero output gradient is zero") {
  Rng rng(3);
  const std::vector<int> hidden{5, 5};
  const auto p = makeMlp(4, hidden, 3, rng);
  const auto g = backward(p, randomVector(rng, 4), std::vector<double>(3, 0.0));
  for (double v : g.flatten()) CHECK(v == 0.0);
}

TEST_CASE("linear network gradient equals the input") {
  Rng rng(4);
  Eigen::MatrixXd w = Eigen::MatrixXd::Random(3, 4);
  const auto p = linear(w, Eigen::VectorXd::Zero(3));
  const auto x = randomVector(rng, 4);
  for (int i = 0; i < 3; ++i) {
    std::vector<double> e(3, 0.0);
    e[static_cast<std::size_t>(i)] = 1.0;
    const auto g = backward(p, x, e);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        CHECK(g.layers[0].weight(r, c) == (r == i ? x[static_cast<std::size_t>(c)] : 0.0));
    CHECK(g.layers[0].bias[i] == 1.0);
  }
}

TEST_CASE("rectifier subgradient at zero is zero") {
  MlpParams p;
  p.layers.push_back({Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1)});
  p.layers.push_back({Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1)});
  const auto g = backward(p, std::vector<double>{0.0}, std::vector<double>{1.0});
  CHECK(g.layers[0].weight(0, 0) == 0.0);
  CHECK(g.layers[0].bias[0] == 0.0);
}

TEST_CASE("backward agrees with central finite differences") {
  Rng rng(5);
  const std::vector<int> hidden{8, 6};
  int checked = 0;
  for (int trial = 0; checked < 20; ++trial) {
    const auto p = makeMlp(5, hidden, 3, rng);
    // Nonzero biases exercise the bias path.
    auto q = p;
    for (auto& l : q.layers) l.bias = Eigen::VectorXd::Random(l.bias.size()) * 0.3;
    const auto x = randomVector(rng, 5, 2.0);
    if (minHiddenPreActivation(q, x) < 1e-3) continue;
    const auto gy = randomVector(rng, 3);
    const auto res = finiteDifferenceCheck(q, x, gy);
    CHECK(res.coordinates == q.parameterCount());
    CHECK(res.maxRelativeError < 1e-4);
    ++checked;
  }
}

TEST_CASE("batched backward sums per-column gradients") {
  Rng rng(6);
  const std::vector<int> hidden{7};
  const auto p = makeMlp(3, hidden, 2, rng);
  Eigen::MatrixXd xs = Eigen::MatrixXd::Random(3, 4);
  Eigen::MatrixXd gs = Eigen::MatrixXd::Random(2, 4);
  const auto batched = backward(p, forwardTrace(p, xs), gs);
  auto summed = GradientBundle::zerosLike(p);
  for (int b = 0; b < 4; ++b) {
    const Eigen::VectorXd x = xs.col(b), g = gs.col(b);
    summed += backward(p, std::span<const double>(x.data(), 3), std::span<const double>(g.data(), 2));
  }
  const auto a = batched.flatten(), s = summed.flatten();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(s[i]).epsilon(1e-12));
  CHECK(forwardBatch(p, xs).isApprox(forwardTrace(p, xs).output()));
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
  Rng rng(7);
  const std::vector<int> hidden{4};
  auto p = makeMlp(3, hidden, 2, rng);
  const auto before = p;
  auto state = AdamState::init(p, 1e-3);
  for (int i = 0; i < 5; ++i) adamStep(p, state, GradientBundle::zerosLike(p));
  CHECK(p == before);
  CHECK(state.stepCount == 5);
}

TEST_CASE("adam first step moves by the learning rate") {
  // m1 = (1-b1) g, v1 = (1-b2) g^2, bias-corrected ratio = g/|g|.
  for (double g : {1e-3, 0.5, -40.0}) {
    auto p = linear(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1));
    auto state = AdamState::init(p, 1e-4);
    auto grads = GradientBundle::zerosLike(p);
    grads.layers[0].weight(0, 0) = g;
    adamStep(p, state, grads);
    const double expected = -1e-4 * g / (std::abs(g) + 1e-8);
    CHECK(p.layers[0].weight(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs(std::abs(p.layers[0].weight(0, 0)) - 1e-4) < 1e-9);
    CHECK(p.layers[0].bias[0] == 0.0);
  }
}

TEST_CASE("adam is deterministic over 1000 steps") {
  auto run = [] {
    Rng rng(8);
    const std::vector<int> hidden{6, 6};
    auto p = makeMlp(4, hidden, 2, rng);
    auto state = AdamState::init(p, 1e-3);
    for (int i = 0; i < 1000; ++i) {
      const auto x = randomVector(rng, 4);
      const auto y = forward(p, x);
      const std::vector<double> gy{y[0] - 1.0, y[1] + 1.0};
      adamStep(p, state, backward(p, x, gy));
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer error contract") {
  auto p = linear(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1));
  auto state = AdamState::init(p, 1e-3);
  auto grads = GradientBundle::zerosLike(p);
  grads.layers[0].weight(0, 0) = std::nan("");
  CHECK_THROWS_AS(adamStep(p, state, grads), NonFiniteGradient);
  CHECK_THROWS_AS(sgdStep(p, grads, 0.1), NonFiniteGradient);

  grads.layers[0].weight(0, 0) = -1e308;
  CHECK_THROWS_AS(sgdStep(p, grads, 1e10), DivergenceDetected);

  auto small = linear(Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1));
  CHECK_THROWS_AS(adamStep(small, state, grads), ShapeMismatch);
}

TEST_CASE("masked parameters never move") {
  auto p = linear(Eigen::MatrixXd::Ones(2, 2), Eigen::VectorXd::Ones(2));
  auto grads = GradientBundle::zerosLike(p);
  grads.layers[0].weight.setConstant(1.0);
  grads.layers[0].bias.setConstant(1.0);
  TrainableMask mask{{false}, {true}};
  sgdStep(p, grads, 0.5, &mask);
  CHECK(p.layers[0].weight == Eigen::MatrixXd::Ones(2, 2));
  CHECK(p.layers[0].bias == Eigen::VectorXd::Constant(2, 0.5));
}

TEST_CASE("snapshot is a deep copy") {
  Rng rng(9);
  const std::vector<int> hidden{4};
  auto src = makeMlp(2, hidden, 2, rng);
  const auto snap = snapshot(src);
  const std::vector<double> x{0.3, -0.7};
  CHECK(forward(snap, x) == forward(src, x));
  const double original = src.layers[0].weight(0, 0);
  src.layers[0].weight(0, 0) += 1.0;
  CHECK(snap.layers[0].weight(0, 0) == original);
}

TEST_CASE("output is homogeneous in the head weights when biases vanish") {
  Rng rng(10);
  const std::vector<int> hidden{5};
  auto p = makeMlp(3, hidden, 2, rng);
  const auto x = randomVector(rng, 3);
  const auto y = forward(p, x);
  p.layers.back().weight *= 3.0;
  CHECK(forward(p, x).isApprox(3.0 * y, 1e-14));
}

TEST_CASE("checkpoints round-trip exactly") {
  Rng rng(11);
  const std::vector<int> hidden{56, 56};
  const auto p = makeMlp(50, hidden, 3, rng);
  const auto path = std::filesystem::temp_directory_path() / "bvelab_test_ckpt.bveq";
  saveCheckpoint(p, path);
  CHECK(loadCheckpoint(path) == p);
  auto bytes = serializeParams(p);
  bytes[bytes.size() / 3] ^= 1;
  CHECK_THROWS_AS(deserializeParams(bytes), ChecksumMismatch);
  std::filesystem::remove(path);
}
