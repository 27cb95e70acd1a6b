#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <memory>

#include "bvelab/agents.hpp"
#include "bvelab/datastore.hpp"
#include "bvelab/divergence.hpp"
#include "bvelab/envs.hpp"
#include "bvelab/errors.hpp"

using namespace bvelab;
using namespace bvelab::agents;
using data::TransitionRecord;

namespace {

// Linear state -> action-value net: Q = W s + b.
nn::MlpParams linearNet(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  nn::MlpParams p;
  p.layers.push_back({w, b});
  return p;
}

nn::MlpParams constantNet(int stateWidth, std::initializer_list<double> q) {
  Eigen::VectorXd b(static_cast<Eigen::Index>(q.size()));
  int i = 0;
  for (double v : q) b[i++] = v;
  return linearNet(Eigen::MatrixXd::Zero(b.size(), stateWidth), b);
}

TransitionRecord record(double s, int a, double r, double next, std::optional<int> nextAction,
                        bool terminal, int t = 0, std::int64_t episode = 0) {
  TransitionRecord rec;
  rec.episodeId = episode;
  rec.t = t;
  rec.state = {s};
  rec.action = a;
  rec.reward = r;
  rec.nextState = {next};
  rec.nextAction = nextAction;
  rec.terminal = terminal;
  return rec;
}

data::Episode episodeOf(std::vector<TransitionRecord> recs, double gamma) {
  for (std::size_t t = 0; t < recs.size(); ++t) recs[t].t = static_cast<int>(t);
  data::computeReturnToGo(recs, gamma);
  return recs;
}

data::Dataset catchData(int episodes, std::uint64_t seed) {
  auto env = envs::wrapActionNoise(std::make_unique<envs::CatchEnv>(), 0.25, seed);
  data::UniformPolicy policy(3);
  return data::logEpisodes(*env, policy, episodes, seed, 0.99);
}

// Central differences of the total loss over the online parameters.
double lossGradientError(const QModel& model, const nn::MlpParams& params,
                         const nn::MlpParams& target, const Minibatch& batch,
                         const LossConfig& cfg, Mode mode) {
  const auto analytic = tdLoss(model, params, target, batch, cfg, mode).grads.flatten();
  nn::MlpParams probe = params;
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& x = probe.at(i);
    const double saved = x;
    x = saved + h;
    const double up = tdLoss(model, probe, target, batch, cfg, mode).breakdown.total;
    x = saved - h;
    const double down = tdLoss(model, probe, target, batch, cfg, mode).breakdown.total;
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("mode names round-trip") {
  for (auto m : {Mode::kDqn, Mode::kDdqn, Mode::kBve, Mode::kRDqn, Mode::kRBve, Mode::kBc,
                 Mode::kFilteredBc, Mode::kMc, Mode::kCql})
    CHECK(parseMode(modeName(m)) == m);
  CHECK(parseMode("r-bve") == Mode::kRBve);
  CHECK_THROWS_AS(parseMode("sarsa"), ConfigError);
  CHECK(usesRanking(Mode::kRDqn));
  CHECK_FALSE(usesRanking(Mode::kBve));
}

TEST_CASE("loss defaults") {
  LossConfig cfg;
  CHECK(cfg.gamma == 0.99);
  CHECK(cfg.lambdaRank == 0.005);
  CHECK(cfg.marginNu == 0.05);
  CHECK(cfg.betaTemp == 0.5);
  CHECK(cfg.nStep == 1);
}

TEST_CASE("argmax ties and action gap") {
  Eigen::VectorXd q(3);
  q << 0.5, 0.5, 0.1;
  CHECK(argmaxAction(q) == 0);
  Eigen::MatrixXd rows(3, 2);
  rows << 3, 1, 1, 1, 0, 1;
  CHECK(meanActionGap(rows.leftCols(1)) == 2.0);
  CHECK(meanActionGap(rows.rightCols(1)) == 0.0);
}

TEST_CASE("Q-learning target") {
  StateInputQ model(1, 2);
  LossConfig cfg;
  cfg.doubleDqn = false;
  const auto target = constantNet(1, {0.2, 0.7});
  const auto online = constantNet(1, {0.9, 0.1});

  CHECK(*dqnTarget(record(0, 0, 1.0, 1, std::nullopt, true), model, target, online, cfg) == 1.0);
  CHECK(*dqnTarget(record(0, 0, 0.0, 1, 1, false), model, target, online, cfg) ==
        doctest::Approx(0.693).epsilon(1e-14));
  // Double DQN picks action 0 with the online net, evaluates it with the target.
  cfg.doubleDqn = true;
  CHECK(*dqnTarget(record(0, 0, 0.0, 1, 1, false), model, target, online, cfg) ==
        doctest::Approx(0.99 * 0.2).epsilon(1e-14));
  cfg.gamma = 0.0;
  CHECK(*dqnTarget(record(0, 0, 0.3, 1, 1, false), model, target, online, cfg) == 0.3);
  // Truncated tails still bootstrap under Q-learning.
  cfg.gamma = 0.5;
  cfg.doubleDqn = false;
  CHECK(*dqnTarget(record(0, 0, 0.0, 1, std::nullopt, false), model, target, online, cfg) ==
        doctest::Approx(0.35));
}

TEST_CASE("behaviour value target") {
  StateInputQ model(1, 2);
  LossConfig cfg;
  const auto target = constantNet(1, {0.5, 3.0});
  CHECK(*bveTarget(record(0, 1, 0.0, 1, std::nullopt, true), model, target, cfg) == 0.0);
  CHECK(*bveTarget(record(0, 1, 0.0, 1, 0, false), model, target, cfg) ==
        doctest::Approx(0.495).epsilon(1e-14));
  CHECK_FALSE(bveTarget(record(0, 1, 0.0, 1, std::nullopt, false), model, target, cfg).has_value());
}

TEST_CASE("n-step targets") {
  StateInputQ model(1, 2);
  const auto target = constantNet(1, {0.5, 3.0});
  LossConfig cfg;
  cfg.gamma = 0.9;

  const auto ep = episodeOf({record(0, 0, 0, 1, 1, false), record(1, 1, 0, 2, 0, false),
                             record(2, 0, 1, 3, std::nullopt, true)},
                            0.9);
  cfg.nStep = 3;
  CHECK(*nStepTarget(ep, model, target, target, cfg, BootstrapKind::kBehavior) ==
        doctest::Approx(0.81).epsilon(1e-14));
  CHECK(*nStepTarget(ep, model, target, target, cfg, BootstrapKind::kQLearning) ==
        doctest::Approx(0.81).epsilon(1e-14));

  // n = 1 reduces to the one-step targets.
  cfg.nStep = 1;
  cfg.doubleDqn = false;
  CHECK(*nStepTarget(ep, model, target, target, cfg, BootstrapKind::kBehavior) ==
        *bveTarget(ep[0], model, target, cfg));
  CHECK(*nStepTarget(ep, model, target, target, cfg, BootstrapKind::kQLearning) ==
        *dqnTarget(ep[0], model, target, target, cfg));

  // Window hitting the terminal after two steps.
  cfg.nStep = 5;
  const auto w = summarizeWindow(std::span(ep).subspan(1), 5, 0.9);
  CHECK(w.steps == 2);
  CHECK(w.reachedTerminal);
  CHECK(w.discountedRewards == doctest::Approx(0.9));

  // Two steps with bootstrap: 0 + 0.9*0 + 0.81 * Q(s2, a2=0).
  cfg.nStep = 2;
  CHECK(*nStepTarget(ep, model, target, target, cfg, BootstrapKind::kBehavior) ==
        doctest::Approx(0.81 * 0.5));

  auto broken = ep;
  broken[1].t = 7;
  CHECK_THROWS_AS(summarizeWindow(broken, 3, 0.9), WindowNotContiguous);
  broken = ep;
  broken[1].episodeId = 4;
  CHECK_THROWS_AS(summarizeWindow(broken, 3, 0.9), WindowNotContiguous);
}

TEST_CASE("ranking loss unit values") {
  StateInputQ model(1, 3);
  LossConfig cfg;
  auto rec = record(0, 1, 0, 1, 0, false);
  rec.returnToGo = 0.4;

  CHECK(successWeight(0.4, 0.4, cfg) == 1.0);
  CHECK(successWeight(1.4, 0.4, cfg) == doctest::Approx(std::exp(2.0)));
  CHECK(successWeight(100.0, 0.0, cfg) == 20.0);

  const auto equal = constantNet(1, {0.3, 0.3, 0.3});
  CHECK(rankingLoss(model, equal, rec, 0.4, cfg) == doctest::Approx(2 * 0.05 * 0.05).epsilon(1e-14));
  CHECK(rankingLoss(model, equal, rec, 0.4, cfg) == doctest::Approx(0.005).epsilon(1e-14));

  const auto ahead = constantNet(1, {0.0, 0.05, -1.0});
  CHECK(rankingLoss(model, ahead, rec, 0.4, cfg) == 0.0);

  const auto behind = constantNet(1, {0.5, 0.0, 0.0});
  // (0.5 + 0.05)^2 + 0.05^2, times w = exp(-0.4 / 0.5)
  CHECK(rankingLoss(model, behind, rec, 0.8, cfg) ==
        doctest::Approx(std::exp(-0.8) * (0.55 * 0.55 + 0.0025)).epsilon(1e-13));
}

TEST_CASE("minibatch mean return-to-go") {
  const auto d = catchData(5, 1);
  auto refs = recordRefs(d);
  CHECK(refs.size() == static_cast<std::size_t>(d.header.numTransitions));
  LossConfig cfg;
  const auto mb = makeMinibatch(refs, cfg);
  double sum = 0;
  for (const auto& r : refs) sum += r.record().returnToGo;
  CHECK(mb.batchMeanReturnToGo == doctest::Approx(sum / refs.size()).epsilon(1e-15));
}

TEST_CASE("temporal-difference loss on a perfect network is zero") {
  StateInputQ model(1, 2);
  LossConfig cfg;
  cfg.marginNu = 0.0;
  const auto zero = constantNet(1, {0.0, 0.0});
  const auto ep = episodeOf({record(0, 0, 0, 1, 1, false), record(1, 1, 0, 2, std::nullopt, true)},
                            cfg.gamma);
  const auto mb = makeMinibatch(ep, cfg);
  for (auto mode : {Mode::kDqn, Mode::kDdqn, Mode::kBve, Mode::kRDqn, Mode::kRBve}) {
    const auto res = tdLoss(model, zero, zero, mb, cfg, mode);
    CHECK(res.breakdown.total == 0.0);
    for (double g : res.grads.flatten()) CHECK(g == 0.0);
  }
}

TEST_CASE("single-record loss and gradient by hand") {
  StateInputQ model(2, 2);
  Eigen::MatrixXd w(2, 2);
  w << 0.1, -0.2, 0.3, 0.4;
  Eigen::VectorXd b(2);
  b << 0.05, -0.1;
  const auto params = linearNet(w, b);
  TransitionRecord rec;
  rec.state = {1.0, 2.0};
  rec.nextState = {0.0, 0.0};
  rec.action = 1;
  rec.reward = 0.5;
  rec.terminal = true;
  const auto ep = episodeOf({rec}, 0.99);
  LossConfig cfg;
  const auto mb = makeMinibatch(ep, cfg);
  const auto res = tdLoss(model, params, params, mb, cfg, Mode::kBve);
  // Q(s, 1) = 0.3 + 0.8 - 0.1 = 1.0, delta = 0.5.
  CHECK(std::abs(res.breakdown.tdLoss - 0.25) < 1e-10);
  CHECK(std::abs(res.grads.layers[0].weight(1, 0) - 1.0) < 1e-10);
  CHECK(std::abs(res.grads.layers[0].weight(1, 1) - 2.0) < 1e-10);
  CHECK(std::abs(res.grads.layers[0].bias[1] - 1.0) < 1e-10);
  CHECK(res.grads.layers[0].weight.row(0).isZero(0.0));
  CHECK(res.grads.layers[0].bias[0] == 0.0);
}

TEST_CASE("loss gradients match finite differences and ignore the target net") {
  const auto d = catchData(4, 2);
  LossConfig cfg;
  cfg.lambdaRank = 0.5;  // large enough for the ranking path to matter
  auto refs = recordRefs(d);
  refs.resize(12);
  const auto mb = makeMinibatch(refs, cfg);
  StateInputQ model(50, 3);
  Rng rng(3);
  const std::vector<int> hidden{6};
  const auto online = nn::makeMlp(50, hidden, 3, rng);
  const auto target = nn::makeMlp(50, hidden, 3, rng);
  for (auto mode : {Mode::kDqn, Mode::kBve, Mode::kRDqn, Mode::kRBve, Mode::kCql})
    CHECK(lossGradientError(model, online, target, mb, cfg, mode) < 1e-5);

  // Perturbing the target network moves the loss but not the gradient shape path.
  auto shifted = target;
  shifted.layers.back().bias.array() += 1.0;
  const auto a = tdLoss(model, online, target, mb, cfg, Mode::kBve);
  const auto b = tdLoss(model, online, shifted, mb, cfg, Mode::kBve);
  CHECK(a.breakdown.tdLoss != b.breakdown.tdLoss);
  CHECK(lossGradientError(model, online, shifted, mb, cfg, Mode::kBve) < 1e-5);
}

TEST_CASE("lambda zero reduces the ranking modes exactly") {
  const auto d = catchData(6, 4);
  LossConfig cfg;
  cfg.lambdaRank = 0.0;
  const auto mb = makeMinibatch(recordRefs(d), cfg);
  StateInputQ model(50, 3);
  Rng rng(5);
  const std::vector<int> hidden{8};
  const auto p = nn::makeMlp(50, hidden, 3, rng);
  const auto t = nn::makeMlp(50, hidden, 3, rng);
  const auto bve = tdLoss(model, p, t, mb, cfg, Mode::kBve);
  const auto rbve = tdLoss(model, p, t, mb, cfg, Mode::kRBve);
  CHECK(bve.breakdown.total == rbve.breakdown.total);
  CHECK(bve.grads == rbve.grads);
  const auto ddqn = tdLoss(model, p, t, mb, cfg, Mode::kDdqn);
  const auto rdqn = tdLoss(model, p, t, mb, cfg, Mode::kRDqn);
  CHECK(ddqn.breakdown.total == rdqn.breakdown.total);
  CHECK(ddqn.grads == rdqn.grads);
}

TEST_CASE("total loss composition") {
  const auto d = catchData(3, 6);
  LossConfig cfg;
  const auto mb = makeMinibatch(recordRefs(d), cfg);
  StateInputQ model(50, 3);
  Rng rng(6);
  const std::vector<int> hidden{8};
  const auto p = nn::makeMlp(50, hidden, 3, rng);
  for (auto mode : {Mode::kRBve, Mode::kCql}) {
    const auto r = tdLoss(model, p, p, mb, cfg, mode).breakdown;
    CHECK(r.total == doctest::Approx(r.tdLoss + cfg.lambdaRank * r.rankLoss + r.auxLoss));
    CHECK(r.rankLoss >= 0.0);
  }
}

TEST_CASE("all-truncated batches are empty for behaviour value estimation") {
  StateInputQ model(1, 2);
  LossConfig cfg;
  const auto ep = episodeOf({record(0, 0, 0, 1, std::nullopt, false)}, cfg.gamma);
  const auto mb = makeMinibatch(ep, cfg);
  const auto net = constantNet(1, {0.0, 0.0});
  CHECK_THROWS_AS(tdLoss(model, net, net, mb, cfg, Mode::kBve), EmptyEffectiveBatch);
  CHECK(tdLoss(model, net, net, mb, cfg, Mode::kDqn).effectiveBatch == 1);
}

TEST_CASE("behaviour cloning loss") {
  StateInputQ model(1, 3);
  LossConfig cfg;
  const auto ep = episodeOf({record(0, 2, 0, 1, 0, false), record(1, 0, 0, 2, std::nullopt, true)},
                            cfg.gamma);
  const auto mb = makeMinibatch(ep, cfg);
  const auto uniform = constantNet(1, {0.0, 0.0, 0.0});
  CHECK(bcLoss(model, uniform, mb, false, 0.0).breakdown.total ==
        doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(bcLoss(model, uniform, mb, true, 1.0), EmptyEffectiveBatch);

  // s = 0 gives logits [-60, -60, 60] (logged action 2); s = 1 gives
  // [60, -60, -60] (logged action 0).
  Eigen::MatrixXd w(3, 1);
  w << 120, 0, -120;
  Eigen::VectorXd b(3);
  b << -60, -60, 60;
  const auto sharp = linearNet(w, b);
  CHECK(bcLoss(model, sharp, mb, false, 0.0).breakdown.total < 1e-40);
}

TEST_CASE("Monte-Carlo regression loss") {
  StateInputQ model(1, 2);
  LossConfig cfg;
  const auto zero = constantNet(1, {0.0, 0.0});

  data::Episode ep{record(0, 0, 1, 1, std::nullopt, true)};
  ep[0].returnToGo = 1.0;
  CHECK(mcLoss(model, zero, makeMinibatch(ep, cfg)).breakdown.total == 1.0);

  data::Episode pair{record(0, 0, 0, 1, 1, false, 0), record(1, 1, 0, 2, std::nullopt, true, 1)};
  pair[0].returnToGo = -0.1;
  pair[1].returnToGo = 0.3;
  CHECK(mcLoss(model, zero, makeMinibatch(pair, cfg)).breakdown.total ==
        doctest::Approx(0.05).epsilon(1e-14));

  const auto exact = constantNet(1, {1.0, 1.0});
  CHECK(mcLoss(model, exact, makeMinibatch(ep, cfg)).breakdown.total == 0.0);
}

TEST_CASE("conservative regulariser") {
  LossConfig cfg;
  StateInputQ model4(1, 4);
  const auto ep = episodeOf({record(0, 2, 0, 1, std::nullopt, true)}, cfg.gamma);
  const auto mb = makeMinibatch(ep, cfg);
  CHECK(cqlLoss(model4, constantNet(1, {0.7, 0.7, 0.7, 0.7}), mb, cfg) ==
        doctest::Approx(0.01 * std::log(4.0)).epsilon(1e-14));
  CHECK(cqlLoss(model4, constantNet(1, {-800, -800, 0, -800}), mb, cfg) < 1e-300);

  StateInputQ model2(1, 2);
  const auto ep2 = episodeOf({record(0, 0, 0, 1, std::nullopt, true)}, cfg.gamma);
  const double expected = 0.01 * (std::log(std::exp(1.0) + std::exp(3.0)) - 1.0);
  CHECK(std::abs(cqlLoss(model2, constantNet(1, {1.0, 3.0}), makeMinibatch(ep2, cfg), cfg) -
                 expected) < 1e-10);
}

TEST_CASE("training with zero steps returns the initial parameters") {
  const auto d = catchData(5, 7);
  TrainConfig tc;
  tc.steps = 0;
  tc.seed = 3;
  const auto res = trainLoop(d, tc);
  Rng rng(deriveSeed(3, 1));
  const auto init = nn::makeMlp(50, tc.hiddenWidths, 3, rng);
  CHECK(res.params == init);
  CHECK(res.stepsCompleted == 0);
}

TEST_CASE("training is deterministic and lambda zero matches the base agents") {
  const auto d = catchData(10, 8);
  auto run = [&](Mode mode, double lambda) {
    TrainConfig tc;
    tc.mode = mode;
    tc.loss.lambdaRank = lambda;
    tc.steps = 150;
    tc.batchSize = 16;
    tc.targetUpdatePeriod = 50;
    tc.hiddenWidths = {12};
    tc.seed = 11;
    tc.metricsEvery = 50;
    return trainLoop(d, tc);
  };
  const auto a = run(Mode::kRBve, 0.005);
  CHECK(a.params == run(Mode::kRBve, 0.005).params);
  CHECK(run(Mode::kRBve, 0.0).params == run(Mode::kBve, 0.0).params);
  CHECK(run(Mode::kRDqn, 0.0).params == run(Mode::kDdqn, 0.0).params);
  CHECK(a.params != run(Mode::kBve, 0.005).params);
  CHECK(a.metrics.size() == 3);
  CHECK(a.metrics.front().step == 50);
  CHECK(a.metrics.back().step == 150);
}

TEST_CASE("training other losses runs") {
  const auto d = catchData(10, 9);
  for (auto mode : {Mode::kBc, Mode::kFilteredBc, Mode::kMc, Mode::kCql, Mode::kDqn}) {
    TrainConfig tc;
    tc.mode = mode;
    tc.steps = 30;
    tc.batchSize = 16;
    tc.hiddenWidths = {8};
    const auto res = trainLoop(d, tc);
    CHECK_FALSE(res.diverged);
    CHECK(res.stepsCompleted == 30);
    CHECK(res.params.allFinite());
  }
}

TEST_CASE("Q-learning on the toy dataset diverges with a growing weight") {
  divergence::ToyConfig cfg;
  const auto run = divergence::trainToy(cfg, 400);
  CHECK(run.result.diverged);
  REQUIRE(run.trajectory.size() > 10);
  for (std::size_t i = 1; i < run.trajectory.size(); ++i)
    CHECK(std::abs(run.trajectory[i].w) > std::abs(run.trajectory[i - 1].w));
}

TEST_CASE("online DQN behaviour anneals exploration") {
  OnlineDqnConfig cfg;
  OnlineDqnBehavior dqn(5, 2, cfg, 1);
  CHECK(dqn.currentEpsilon() == 1.0);
  envs::ChainEnv env(5);
  const auto d = data::logEpisodes(env, dqn, 40, 2, 0.99);
  CHECK(dqn.currentEpsilon() < 1.0);
  CHECK(dqn.updates() > 0);
  CHECK(d.header.numEpisodes == 40);
}
