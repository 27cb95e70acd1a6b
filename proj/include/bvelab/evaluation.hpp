#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvelab/agents.hpp"
#include "bvelab/datastore.hpp"
#include "bvelab/envs.hpp"

namespace bvelab::eval {

inline const double kDefaultEvalEpsilon = std::pow(0.4, 8);

// epsilon-greedy deployment policy over a trained Q network.
struct GreedyPolicy {
  nn::MlpParams params;
  std::shared_ptr<const agents::QModel> model;
  double evalEpsilon = kDefaultEvalEpsilon;

  int act(const envs::Observation& state, Rng& rng, double* qOut = nullptr) const;
};

struct StepEval {
  int action = 0;
  double q = 0.0;           // Q(s_t, a_t) of the executed action
  double returnToGo = 0.0;  // realised discounted return from s_t
};

struct EpisodeRollout {
  double episodicReturn = 0.0;  // undiscounted
  std::vector<StepEval> steps;
};

std::vector<EpisodeRollout> rollout(const GreedyPolicy& policy, envs::Environment& env,
                                    int numEpisodes, std::uint64_t seed, double gamma);

// (1/N) sum over episodes of max(Q(s0, a0) - G(s0), 0)^2.
double overEstimationError(std::span<const EpisodeRollout> rollouts);
// Same, averaged over every visited step.
double overEstimationErrorAllStates(std::span<const EpisodeRollout> rollouts);
// Mean signed Q - G at episode starts.
double valueError(std::span<const EpisodeRollout> rollouts);
double valueErrorAllStates(std::span<const EpisodeRollout> rollouts);

double actionGap(const agents::QModel& model, const nn::MlpParams& params,
                 const Eigen::MatrixXd& states);
// Over every state stored in the dataset.
double actionGap(const agents::QModel& model, const nn::MlpParams& params,
                 const data::Dataset& dataset);

// 100 (agent - random) / (reference - random). Throws DegenerateReference.
double normalizedScore(double agentReturn, double randomReturn, double referenceReturn);

double median(std::vector<double> values);
// Sample standard deviation over sqrt(n); 0 for fewer than two values.
double standardError(const std::vector<double>& values);

struct MetricsRow {
  std::string manifest;
  std::string envName;
  std::string mode;
  std::uint64_t seed = 0;
  double datasetFraction = 1.0;
  double lambdaRank = 0.0;
  double noiseEpsilon = 0.0;
  double episodicReturnMedian = 0.0;
  double overEstimationError = 0.0;
  double overEstimationErrorAllStates = 0.0;
  double valueErrorMean = 0.0;
  double actionGapMean = 0.0;
  double normalizedScore = 0.0;
  bool diverged = false;
  bool failed = false;  // the run raised an error; numeric fields are NaN
};

std::string metricsCsvHeader();
std::string toCsvLine(const MetricsRow& row);
// Round-trip-exact decimal rendering used by every CSV writer.
std::string formatNumber(double value);

}  // namespace bvelab::eval
