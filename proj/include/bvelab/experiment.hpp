#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "bvelab/agents.hpp"
#include "bvelab/datastore.hpp"
#include "bvelab/evaluation.hpp"

namespace bvelab::experiment {

struct GenerateOptions {
  std::string env = "catch";
  int episodes = 200;
  double noiseEpsilon = 0.25;
  double subsampleFraction = 1.0;
  std::uint64_t seed = 0;
  double gamma = 0.99;
  // "dqn" learns online while logging; "uniform" and "right" are scripted.
  std::string behavior = "dqn";
  agents::OnlineDqnConfig dqn;
};

// Logs every step of the behaviour through the action-noise wrapper, then
// subsamples whole episodes.
data::Dataset generateDataset(const GenerateOptions& options);

struct ExperimentConfig {
  std::string env = "catch";
  std::string datasetPath;
  agents::Mode mode = agents::Mode::kRBve;
  agents::LossConfig loss;
  int trainingSteps = 20000;
  int batchSize = 128;
  int targetUpdatePeriod = 2500;
  double learningRate = 1e-4;
  std::vector<int> hiddenWidths{56, 56};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string outputDir = "bvelab-out";
  int evalEpisodes = 100;
  double evalEpsilon = eval::kDefaultEvalEpsilon;
  int metricsEvery = 1000;
};

// Missing keys keep the values of `base`. Throws ConfigError on bad values.
ExperimentConfig configFromJson(const nlohmann::json& j, ExperimentConfig base = {});
nlohmann::json toJson(const ExperimentConfig& config);
// FNV-1a of the canonical JSON, 16 hex digits.
std::string hashJson(const nlohmann::json& j);
std::string configHash(const ExperimentConfig& config);

// Mean undiscounted return of the uniform policy.
double randomPolicyReturn(const std::string& env, int episodes, std::uint64_t seed);
// Mean return over the last tenth (by episode id) of the logged episodes.
double behaviorTailReturn(const data::Dataset& dataset);

struct RunOutcome {
  eval::MetricsRow row;
  agents::TrainResult train;
};

// Trains one seed offline and evaluates the greedy policy in the noise-free
// environment on seeds disjoint from data generation.
RunOutcome trainAndEvaluate(const data::Dataset& dataset, const ExperimentConfig& config,
                            std::uint64_t seed);

enum class SweepAxis { kDatasetFraction, kLambda, kNoiseEpsilon };
SweepAxis parseAxis(const std::string& name);

struct SweepSpec {
  ExperimentConfig base;
  SweepAxis axis = SweepAxis::kDatasetFraction;
  std::vector<double> values;
  std::vector<agents::Mode> modes;
  GenerateOptions generate;  // used to rebuild datasets along the noise axis
  std::uint64_t subsampleSeed = 0;
  int workers = 1;
  std::string manifest;
};

struct AggregateRow {
  std::string mode;
  double axisValue = 0.0;
  int runs = 0;
  int diverged = 0;
  int failed = 0;
  double returnMedian = 0.0, returnStdErr = 0.0;
  double overEstimationMedian = 0.0, overEstimationStdErr = 0.0;
  double actionGapMedian = 0.0, actionGapStdErr = 0.0;
  double valueErrorMedian = 0.0, valueErrorStdErr = 0.0;
};

struct SweepResult {
  std::vector<eval::MetricsRow> rows;  // cell order: value, mode, seed
  std::vector<AggregateRow> aggregate;
  std::vector<std::string> failures;
};

// Cross product of axis values x modes x seeds on a bounded worker pool.
// A failing cell is flagged and the sweep continues.
SweepResult runSweep(const SweepSpec& spec, const data::Dataset& baseDataset);

std::vector<AggregateRow> aggregate(const std::vector<eval::MetricsRow>& rows, SweepAxis axis);
std::string aggregateCsvHeader();
std::string toCsvLine(const AggregateRow& row);

std::string trainMetricsCsvHeader();
std::string toCsvLine(const agents::TrainMetricsRow& row, const std::string& manifest);

}  // namespace bvelab::experiment
