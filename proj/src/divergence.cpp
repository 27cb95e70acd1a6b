#include "bvelab/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bvelab/errors.hpp"

namespace bvelab::divergence {

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }

double relativeDifference(double generic, double analytic) {
  return std::abs(generic - analytic) / std::max(std::abs(analytic), 1e-12);
}

data::TransitionRecord toyRecord(std::int64_t episode, int t, double s, int a, double r,
                                 double next, std::optional<int> nextAction, bool terminal) {
  data::TransitionRecord rec;
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

}  // namespace

OneHot actionVector(int action) {
  if (action < 0 || action > 2) throw ActionOutOfRange("toy action " + std::to_string(action));
  OneHot a{0.0, 0.0, 0.0};
  a[static_cast<std::size_t>(action)] = 1.0;
  return a;
}

double toyForward(const ToyQParams& p, double s, const OneHot& a) {
  return p.w * relu(s) + p.u1 * relu(a[0] - 2.0 * s) + p.u2 * relu(a[1] - 2.0 * s) +
         p.u3 * relu(-2.0 * s - a[2]);
}

ToyGradients analyticGradients(const ToyQParams& p, const ToyConfig& cfg) {
  return {p.u1 - 1.0, p.u2 - cfg.gamma * p.w, 0.0, (1.0 - cfg.gamma * cfg.betaFeature) * p.w};
}

GradientDescentRun runGradientDescent(const ToyConfig& cfg, int steps, Objective objective,
                                      double threshold) {
  if (steps <= 0) throw std::invalid_argument("runGradientDescent needs steps > 0");
  GradientDescentRun run;
  ToyQParams p;
  p.w = cfg.initialW;
  run.trajectory.push_back(p);
  for (int t = 1; t <= steps; ++t) {
    const ToyGradients g = analyticGradients(p, cfg);
    p.u1 -= cfg.learningRate * g.u1;
    p.u2 -= cfg.learningRate * g.u2;
    if (objective == Objective::kQLearning) p.w -= cfg.learningRate * g.w;
    run.trajectory.push_back(p);
    if (!run.divergedAtStep && std::abs(p.w) > threshold) {
      run.divergedAtStep = t;
      break;
    }
  }
  return run;
}

data::Dataset toyDataset(double betaFeature) {
  using envs::DivergenceEnv;
  const DivergenceEnv env(betaFeature);
  const double s1 = env.feature(DivergenceEnv::kS1);
  const double s2 = env.feature(DivergenceEnv::kS2);
  const double s3 = env.feature(DivergenceEnv::kS3);
  const double s4 = env.feature(DivergenceEnv::kS4);

  data::Dataset d;
  d.header.envSpec = env.spec();
  d.header.gamma = 0.99;
  d.header.generatorDescription = "toy divergence dataset";
  d.episodes.push_back({toyRecord(0, 0, s1, 0, 1.0, s4, std::nullopt, true)});
  d.episodes.push_back({toyRecord(1, 0, s1, 1, 0.0, s2, 2, false),
                        toyRecord(1, 1, s2, 2, 0.0, s3, std::nullopt, false)});
  for (auto& e : d.episodes) data::computeReturnToGo(e, d.header.gamma);
  d.header.numEpisodes = 2;
  d.header.numTransitions = 3;
  return d;
}

nn::MlpParams toyNetwork(const ToyQParams& p) {
  nn::MlpParams net;
  nn::DenseLayer hidden{Eigen::MatrixXd(4, 4), Eigen::VectorXd::Zero(4)};
  // inputs: s, a[0], a[1], a[2]
  hidden.weight << 1.0, 0.0, 0.0, 0.0,  //
      -2.0, 1.0, 0.0, 0.0,              //
      -2.0, 0.0, 1.0, 0.0,              //
      -2.0, 0.0, 0.0, -1.0;
  nn::DenseLayer out{Eigen::MatrixXd(1, 4), Eigen::VectorXd::Zero(1)};
  out.weight << p.w, p.u1, p.u2, p.u3;
  net.layers = {hidden, out};
  return net;
}

ToyQParams readToyParams(const nn::MlpParams& params) {
  if (params.layers.size() != 2 || params.inputWidth() != 4 || params.outputWidth() != 1 ||
      params.layers[0].weight.rows() != 4) {
    throw ArchitectureMismatch("expected a 4-4-1 state-action network");
  }
  const nn::MlpParams reference = toyNetwork({});
  if (params.layers[0] != reference.layers[0] || params.layers[1].bias[0] != 0.0) {
    throw ArchitectureMismatch("toy network constants were modified");
  }
  const auto& w = params.layers[1].weight;
  return {w(0, 0), w(0, 1), w(0, 2), w(0, 3)};
}

nn::TrainableMask toyTrainableMask() { return {{false, true}, {false, false}}; }

agents::TrainConfig toyTrainConfig(const ToyConfig& cfg, int steps, const ToyTrainOptions& options) {
  if (options.mode != agents::Mode::kDqn && options.mode != agents::Mode::kDdqn &&
      options.mode != agents::Mode::kBve) {
    throw ArchitectureMismatch("toy reproduction supports DQN, DDQN and BVE only");
  }
  ToyQParams init;
  init.w = cfg.initialW;

  agents::TrainConfig tc;
  tc.mode = options.mode;
  tc.loss.gamma = cfg.gamma;
  tc.steps = steps;
  tc.batchSize = options.batchSize;
  tc.targetUpdatePeriod = 1;
  tc.optimizer = options.optimizer;
  tc.sampling = options.sampling;
  tc.seed = options.seed;
  tc.divergenceThreshold = options.divergenceThreshold;
  tc.metricsEvery = 1;
  tc.model = std::make_shared<agents::StateActionInputQ>(1, 3);
  tc.initialParams = toyNetwork(init);
  tc.trainable = toyTrainableMask();

  const int effective = options.sampling == agents::Sampling::kFullBatch
                            ? (options.mode == agents::Mode::kBve ? 2 : 3)
                            : options.batchSize;
  tc.learningRate = options.optimizer == agents::Optimizer::kSgd
                        ? cfg.learningRate * effective / 2.0
                        : cfg.learningRate;
  return tc;
}

ToyTrainRun trainToy(const ToyConfig& cfg, int steps, const ToyTrainOptions& options) {
  ToyTrainRun run;
  agents::TrainConfig tc = toyTrainConfig(cfg, steps, options);
  tc.onStep = [&run](int, const nn::MlpParams& p) { run.trajectory.push_back(readToyParams(p)); };
  run.result = agents::trainLoop(toyDataset(cfg.betaFeature), tc);
  return run;
}

CrossCheckReport crossCheckWithNeuralnet(const ToyConfig& cfg, int steps, agents::Mode mode) {
  CrossCheckReport report;
  ToyTrainOptions options;
  options.mode = mode;
  report.generic = trainToy(cfg, steps, options);
  report.analytic = runGradientDescent(
      cfg, steps, mode == agents::Mode::kBve ? Objective::kBehaviorValue : Objective::kQLearning);

  const auto& a = report.analytic.trajectory;
  const auto& g = report.generic.trajectory;
  const std::size_t n = std::min(a.size(), g.size());
  for (std::size_t t = 0; t < n; ++t) {
    const ToyQParams& x = g[t];
    const ToyQParams& y = a[t];
    if (!std::isfinite(x.w) || !std::isfinite(y.w)) break;
    report.maxRelativeDiscrepancy =
        std::max({report.maxRelativeDiscrepancy, relativeDifference(x.w, y.w),
                  relativeDifference(x.u1, y.u1), relativeDifference(x.u2, y.u2)});
    report.stepsCompared = static_cast<int>(t) + 1;
  }
  return report;
}

}  // namespace bvelab::divergence
