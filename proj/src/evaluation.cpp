#include "bvelab/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <stdexcept>

#include "bvelab/errors.hpp"

namespace bvelab::eval {

int GreedyPolicy::act(const envs::Observation& state, Rng& rng, double* qOut) const {
  const Eigen::VectorXd q = agents::qValues(*model, params, state);
  const double u = uniform01(rng);
  const int random = uniformInt(rng, model->numActions());
  const int action = u < evalEpsilon ? random : agents::argmaxAction(q);
  if (qOut) *qOut = q(action);
  return action;
}

std::vector<EpisodeRollout> rollout(const GreedyPolicy& policy, envs::Environment& env,
                                    int numEpisodes, std::uint64_t seed, double gamma) {
  if (env.spec().observationDim != policy.model->stateWidth() ||
      env.spec().numActions != policy.model->numActions()) {
    throw ShapeMismatch("environment and policy dimensions differ");
  }
  Rng rng(deriveSeed(seed, 0xE7A1));
  std::vector<EpisodeRollout> out;
  out.reserve(static_cast<std::size_t>(numEpisodes));
  for (int e = 0; e < numEpisodes; ++e) {
    EpisodeRollout ep;
    std::vector<double> rewards;
    envs::Observation state = env.reset(deriveSeed(seed, static_cast<std::uint64_t>(e)));
    while (!env.episodeOver()) {
      StepEval s;
      s.action = policy.act(state, rng, &s.q);
      envs::StepResult r = env.step(s.action);
      rewards.push_back(r.reward);
      ep.episodicReturn += r.reward;
      ep.steps.push_back(s);
      state = std::move(r.nextObservation);
    }
    double g = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
      g = t + 1 == rewards.size() ? rewards[t] : rewards[t] + gamma * g;
      ep.steps[t].returnToGo = g;
    }
    out.push_back(std::move(ep));
  }
  return out;
}

namespace {

template <typename Fn>
double meanOverStarts(std::span<const EpisodeRollout> rollouts, Fn fn) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ep : rollouts) {
    if (ep.steps.empty()) continue;
    total += fn(ep.steps.front());
    ++n;
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

template <typename Fn>
double meanOverSteps(std::span<const EpisodeRollout> rollouts, Fn fn) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& ep : rollouts) {
    for (const auto& s : ep.steps) {
      total += fn(s);
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

double clippedSquare(const StepEval& s) {
  const double over = std::max(s.q - s.returnToGo, 0.0);
  return over * over;
}

double signedError(const StepEval& s) { return s.q - s.returnToGo; }

}  // namespace

double overEstimationError(std::span<const EpisodeRollout> rollouts) {
  return meanOverStarts(rollouts, clippedSquare);
}

double overEstimationErrorAllStates(std::span<const EpisodeRollout> rollouts) {
  return meanOverSteps(rollouts, clippedSquare);
}

double valueError(std::span<const EpisodeRollout> rollouts) {
  return meanOverStarts(rollouts, signedError);
}

double valueErrorAllStates(std::span<const EpisodeRollout> rollouts) {
  return meanOverSteps(rollouts, signedError);
}

double actionGap(const agents::QModel& model, const nn::MlpParams& params,
                 const Eigen::MatrixXd& states) {
  return agents::meanActionGap(model.values(params, states));
}

double actionGap(const agents::QModel& model, const nn::MlpParams& params,
                 const data::Dataset& dataset) {
  const auto dim = static_cast<Eigen::Index>(dataset.header.envSpec.observationDim);
  Eigen::MatrixXd states(dim, static_cast<Eigen::Index>(dataset.header.numTransitions));
  Eigen::Index col = 0;
  for (const auto& episode : dataset.episodes) {
    for (const auto& r : episode) {
      states.col(col++) = Eigen::Map<const Eigen::VectorXd>(r.state.data(), dim);
    }
  }
  states.conservativeResize(dim, col);
  return actionGap(model, params, states);
}

double normalizedScore(double agentReturn, double randomReturn, double referenceReturn) {
  if (referenceReturn == randomReturn) {
    throw DegenerateReference("reference return equals random return");
  }
  return 100.0 * (agentReturn - randomReturn) / (referenceReturn - randomReturn);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

double standardError(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

std::string formatNumber(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string metricsCsvHeader() {
  return "manifest,env,mode,seed,datasetFraction,lambdaRank,noiseEpsilon,episodicReturnMedian,"
         "overEstimationError,overEstimationErrorAllStates,valueErrorMean,actionGapMean,"
         "normalizedScore,status";
}

std::string toCsvLine(const MetricsRow& r) {
  std::vector<std::string> fields{r.manifest, r.envName, r.mode, std::to_string(r.seed)};
  for (double v : {r.datasetFraction, r.lambdaRank, r.noiseEpsilon, r.episodicReturnMedian,
                   r.overEstimationError, r.overEstimationErrorAllStates, r.valueErrorMean,
                   r.actionGapMean, r.normalizedScore}) {
    fields.push_back(formatNumber(v));
  }
  fields.emplace_back(r.failed ? "FAILED" : (r.diverged ? "DIVERGED" : "OK"));
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) line += ',';
    line += fields[i];
  }
  return line;
}

}  // namespace bvelab::eval
