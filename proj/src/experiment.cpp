#include "bvelab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "bvelab/divergence.hpp"
#include "bvelab/envs.hpp"
#include "bvelab/errors.hpp"
#include "bvelab/rng.hpp"

namespace bvelab::experiment {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::unique_ptr<data::BehaviorPolicy> makeBehavior(const GenerateOptions& o,
                                                   const envs::EnvSpec& spec) {
  if (o.behavior == "dqn") {
    auto cfg = o.dqn;
    cfg.gamma = o.gamma;
    return std::make_unique<agents::OnlineDqnBehavior>(spec.observationDim, spec.numActions, cfg,
                                                       deriveSeed(o.seed, 0xD9));
  }
  if (o.behavior == "uniform") return std::make_unique<data::UniformPolicy>(spec.numActions);
  if (o.behavior == "right") return std::make_unique<data::ConstantPolicy>(1);
  throw ConfigError("unknown behaviour policy '" + o.behavior + "'");
}

// Feature of s3, read from any logged transition that reaches it.
double toyBetaFeature(const data::Dataset& d) {
  for (const auto& ep : d.episodes)
    for (const auto& r : ep)
      if (r.state[0] == 1.0) return r.nextState[0];
  return 2.0;
}

}  // namespace

data::Dataset generateDataset(const GenerateOptions& o) {
  if (o.episodes <= 0) throw ConfigError("episodes must be positive");
  if (o.noiseEpsilon < 0.0 || o.noiseEpsilon > 1.0)
    throw ConfigError("noise epsilon must lie in [0, 1]");
  if (o.subsampleFraction <= 0.0 || o.subsampleFraction > 1.0)
    throw ConfigError("subsample fraction must lie in (0, 1]");

  auto env = envs::wrapActionNoise(envs::makeEnvironment(o.env), o.noiseEpsilon,
                                   deriveSeed(o.seed, 0xA0));
  auto policy = makeBehavior(o, env->spec());
  auto full = data::logEpisodes(*env, *policy, o.episodes, o.seed, o.gamma,
                                o.behavior + " behaviour");
  if (o.subsampleFraction >= 1.0) return full;
  return data::subsample(full, o.subsampleFraction, deriveSeed(o.seed, 0x5B));
}

// ------------------------------------------------------------ config

ExperimentConfig configFromJson(const json& j, ExperimentConfig c) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("env", c.env);
    get("dataset_path", c.datasetPath);
    if (j.contains("mode")) c.mode = agents::parseMode(j.at("mode").get<std::string>());
    get("gamma", c.loss.gamma);
    get("lambda_rank", c.loss.lambdaRank);
    get("margin", c.loss.marginNu);
    get("beta", c.loss.betaTemp);
    get("n_step", c.loss.nStep);
    get("cql_alpha", c.loss.cqlAlpha);
    get("double_dqn", c.loss.doubleDqn);
    get("training_steps", c.trainingSteps);
    get("batch_size", c.batchSize);
    get("target_update_period", c.targetUpdatePeriod);
    get("learning_rate", c.learningRate);
    get("hidden_widths", c.hiddenWidths);
    get("seeds", c.seeds);
    get("output_dir", c.outputDir);
    get("eval_episodes", c.evalEpisodes);
    get("eval_epsilon", c.evalEpsilon);
    get("metrics_every", c.metricsEvery);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (c.loss.gamma <= 0.0 || c.loss.gamma > 1.0) throw ConfigError("gamma must lie in (0, 1]");
  if (c.loss.lambdaRank < 0.0) throw ConfigError("lambda_rank must be non-negative");
  if (c.loss.betaTemp <= 0.0) throw ConfigError("beta must be positive");
  if (c.loss.nStep < 1) throw ConfigError("n_step must be at least 1");
  if (c.trainingSteps < 0) throw ConfigError("training_steps must be non-negative");
  if (c.batchSize < 1) throw ConfigError("batch_size must be positive");
  if (c.targetUpdatePeriod < 1) throw ConfigError("target_update_period must be positive");
  if (!(c.learningRate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (c.evalEpisodes < 1) throw ConfigError("eval_episodes must be positive");
  for (int w : c.hiddenWidths)
    if (w < 1) throw ConfigError("hidden widths must be positive");
  return c;
}

json toJson(const ExperimentConfig& c) {
  return json{{"env", c.env},
              {"dataset_path", c.datasetPath},
              {"mode", std::string(agents::modeName(c.mode))},
              {"gamma", c.loss.gamma},
              {"lambda_rank", c.loss.lambdaRank},
              {"margin", c.loss.marginNu},
              {"beta", c.loss.betaTemp},
              {"n_step", c.loss.nStep},
              {"cql_alpha", c.loss.cqlAlpha},
              {"double_dqn", c.loss.doubleDqn},
              {"training_steps", c.trainingSteps},
              {"batch_size", c.batchSize},
              {"target_update_period", c.targetUpdatePeriod},
              {"learning_rate", c.learningRate},
              {"hidden_widths", c.hiddenWidths},
              {"seeds", c.seeds},
              {"output_dir", c.outputDir},
              {"eval_episodes", c.evalEpisodes},
              {"eval_epsilon", c.evalEpsilon},
              {"metrics_every", c.metricsEvery}};
}

std::string configHash(const ExperimentConfig& c) { return hashJson(toJson(c)); }

std::string hashJson(const json& j) {
  const std::string text = j.dump();  // keys are sorted
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ------------------------------------------------------------ references

double randomPolicyReturn(const std::string& envName, int episodes, std::uint64_t seed) {
  auto env = envs::makeEnvironment(envName);
  Rng rng(deriveSeed(seed, 0x2A));
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    env->reset(deriveSeed(seed, static_cast<std::uint64_t>(e)));
    while (!env->episodeOver())
      total += env->step(uniformInt(rng, env->spec().numActions)).reward;
  }
  return total / episodes;
}

double behaviorTailReturn(const data::Dataset& dataset) {
  if (dataset.episodes.empty()) throw DegenerateReference("dataset has no episodes");
  std::vector<const data::Episode*> eps;
  for (const auto& e : dataset.episodes) eps.push_back(&e);
  std::sort(eps.begin(), eps.end(),
            [](auto* a, auto* b) { return a->front().episodeId < b->front().episodeId; });
  const std::size_t tail = std::max<std::size_t>(1, eps.size() / 10);
  double total = 0.0;
  for (std::size_t i = eps.size() - tail; i < eps.size(); ++i) total += data::episodicReturn(*eps[i]);
  return total / static_cast<double>(tail);
}

// ------------------------------------------------------------ single run

RunOutcome trainAndEvaluate(const data::Dataset& dataset, const ExperimentConfig& c,
                            std::uint64_t seed) {
  agents::TrainConfig tc;
  tc.mode = c.mode;
  tc.loss = c.loss;
  tc.steps = c.trainingSteps;
  tc.batchSize = c.batchSize;
  tc.targetUpdatePeriod = c.targetUpdatePeriod;
  tc.learningRate = c.learningRate;
  tc.hiddenWidths = c.hiddenWidths;
  tc.seed = seed;
  tc.metricsEvery = c.metricsEvery;

  // The four-state divergence MDP is trained with its hand-built network and
  // plain full-batch descent, as in the closed-form analysis.
  if (dataset.header.envSpec.name == "divergence") {
    divergence::ToyConfig toy;
    toy.gamma = c.loss.gamma;
    toy.betaFeature = dataset.episodes.empty() ? 2.0 : toyBetaFeature(dataset);
    divergence::ToyTrainOptions options;
    options.mode = c.mode;
    options.seed = seed;
    tc = divergence::toyTrainConfig(toy, c.trainingSteps, options);
    tc.metricsEvery = c.metricsEvery;
  }

  RunOutcome out;
  out.train = agents::trainLoop(dataset, tc);

  auto& row = out.row;
  row.envName = dataset.header.envSpec.name;
  row.mode = std::string(agents::modeName(c.mode));
  row.seed = seed;
  row.datasetFraction = dataset.header.subsampleFraction;
  row.lambdaRank = agents::usesRanking(c.mode) ? c.loss.lambdaRank : 0.0;
  row.noiseEpsilon = dataset.header.noiseEpsilon;
  row.diverged = out.train.diverged;
  if (row.diverged) {
    row.episodicReturnMedian = row.overEstimationError = row.overEstimationErrorAllStates = kNaN;
    row.valueErrorMean = row.actionGapMean = row.normalizedScore = kNaN;
    return out;
  }

  eval::GreedyPolicy policy{out.train.params, out.train.model, c.evalEpsilon};
  auto env = envs::makeEnvironment(row.envName);
  const std::uint64_t evalSeed = deriveSeed(seed ^ 0x6576616c00000000ULL, 0xE7A1);
  const auto rollouts = eval::rollout(policy, *env, c.evalEpisodes, evalSeed, c.loss.gamma);

  std::vector<double> returns;
  for (const auto& r : rollouts) returns.push_back(r.episodicReturn);
  row.episodicReturnMedian = eval::median(returns);
  row.overEstimationError = eval::overEstimationError(rollouts);
  row.overEstimationErrorAllStates = eval::overEstimationErrorAllStates(rollouts);
  row.valueErrorMean = eval::valueError(rollouts);
  row.actionGapMean = eval::actionGap(*out.train.model, out.train.params, dataset);
  try {
    const double random = randomPolicyReturn(row.envName, c.evalEpisodes, evalSeed);
    row.normalizedScore = eval::normalizedScore(row.episodicReturnMedian, random,
                                                behaviorTailReturn(dataset));
  } catch (const DegenerateReference&) {
    row.normalizedScore = kNaN;
  }
  return out;
}

// ------------------------------------------------------------ sweeps

SweepAxis parseAxis(const std::string& name) {
  if (name == "fraction" || name == "dataset_fraction") return SweepAxis::kDatasetFraction;
  if (name == "lambda" || name == "lambda_rank") return SweepAxis::kLambda;
  if (name == "noise" || name == "noise_epsilon") return SweepAxis::kNoiseEpsilon;
  throw ConfigError("unknown sweep axis '" + name + "'");
}

namespace {

double axisValueOf(const eval::MetricsRow& r, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kDatasetFraction: return r.datasetFraction;
    case SweepAxis::kLambda: return r.lambdaRank;
    case SweepAxis::kNoiseEpsilon: return r.noiseEpsilon;
  }
  return 0.0;
}

std::pair<double, double> medianAndError(const std::vector<double>& v) {
  if (v.empty()) return {kNaN, kNaN};
  return {eval::median(v), eval::standardError(v)};
}

}  // namespace

SweepResult runSweep(const SweepSpec& spec, const data::Dataset& base) {
  if (spec.values.empty()) throw ConfigError("sweep needs at least one axis value");
  if (spec.modes.empty()) throw ConfigError("sweep needs at least one mode");

  // One dataset per axis value; only the fraction and noise axes change it.
  std::vector<data::Dataset> datasets;
  for (double v : spec.values) {
    switch (spec.axis) {
      case SweepAxis::kDatasetFraction:
        datasets.push_back(v >= 1.0 ? base : data::subsample(base, v, spec.subsampleSeed));
        break;
      case SweepAxis::kLambda:
        datasets.push_back(base);
        break;
      case SweepAxis::kNoiseEpsilon: {
        auto g = spec.generate;
        g.noiseEpsilon = v;
        datasets.push_back(generateDataset(g));
        break;
      }
    }
  }

  struct Cell {
    std::size_t valueIndex;
    agents::Mode mode;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < spec.values.size(); ++i)
    for (auto m : spec.modes)
      for (auto s : spec.base.seeds) cells.push_back({i, m, s});

  SweepResult result;
  result.rows.resize(cells.size());
  std::mutex failureMutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      const auto& cell = cells[k];
      auto cfg = spec.base;
      cfg.mode = cell.mode;
      if (spec.axis == SweepAxis::kLambda) cfg.loss.lambdaRank = spec.values[cell.valueIndex];
      eval::MetricsRow row;
      try {
        row = trainAndEvaluate(datasets[cell.valueIndex], cfg, cell.seed).row;
      } catch (const std::exception& e) {
        row.envName = datasets[cell.valueIndex].header.envSpec.name;
        row.mode = std::string(agents::modeName(cell.mode));
        row.seed = cell.seed;
        row.datasetFraction = datasets[cell.valueIndex].header.subsampleFraction;
        row.noiseEpsilon = datasets[cell.valueIndex].header.noiseEpsilon;
        row.lambdaRank = cfg.loss.lambdaRank;
        row.failed = true;
        row.episodicReturnMedian = row.overEstimationError = row.overEstimationErrorAllStates =
            row.valueErrorMean = row.actionGapMean = row.normalizedScore = kNaN;
        std::lock_guard lock(failureMutex);
        result.failures.push_back(row.mode + " seed " + std::to_string(cell.seed) + ": " +
                                  e.what());
      }
      if (spec.axis == SweepAxis::kLambda) row.lambdaRank = spec.values[cell.valueIndex];
      row.manifest = spec.manifest;
      result.rows[k] = std::move(row);
    }
  };

  const int workers = std::clamp(spec.workers, 1, static_cast<int>(cells.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  result.aggregate = aggregate(result.rows, spec.axis);
  return result;
}

std::vector<AggregateRow> aggregate(const std::vector<eval::MetricsRow>& rows, SweepAxis axis) {
  struct Acc {
    AggregateRow row;
    std::vector<double> ret, over, gap, verr;
  };
  std::map<std::pair<double, std::string>, Acc> groups;
  std::vector<std::pair<double, std::string>> order;
  for (const auto& r : rows) {
    const std::pair key{axisValueOf(r, axis), r.mode};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    auto& acc = it->second;
    acc.row.mode = r.mode;
    acc.row.axisValue = key.first;
    ++acc.row.runs;
    if (r.failed) {
      ++acc.row.failed;
      continue;
    }
    if (r.diverged) {
      ++acc.row.diverged;
      continue;
    }
    acc.ret.push_back(r.episodicReturnMedian);
    acc.over.push_back(r.overEstimationError);
    acc.gap.push_back(r.actionGapMean);
    acc.verr.push_back(r.valueErrorMean);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    auto& acc = groups.at(key);
    auto& a = acc.row;
    std::tie(a.returnMedian, a.returnStdErr) = medianAndError(acc.ret);
    std::tie(a.overEstimationMedian, a.overEstimationStdErr) = medianAndError(acc.over);
    std::tie(a.actionGapMedian, a.actionGapStdErr) = medianAndError(acc.gap);
    std::tie(a.valueErrorMedian, a.valueErrorStdErr) = medianAndError(acc.verr);
    out.push_back(a);
  }
  return out;
}

std::string aggregateCsvHeader() {
  return "mode,axis_value,runs,diverged,failed,return_median,return_stderr,"
         "overestimation_median,overestimation_stderr,action_gap_median,action_gap_stderr,"
         "value_error_median,value_error_stderr";
}

std::string toCsvLine(const AggregateRow& a) {
  using eval::formatNumber;
  std::string s = a.mode + "," + formatNumber(a.axisValue) + "," + std::to_string(a.runs) + "," +
                  std::to_string(a.diverged) + "," + std::to_string(a.failed);
  for (double v : {a.returnMedian, a.returnStdErr, a.overEstimationMedian, a.overEstimationStdErr,
                   a.actionGapMedian, a.actionGapStdErr, a.valueErrorMedian, a.valueErrorStdErr})
    s += "," + formatNumber(v);
  return s;
}

std::string trainMetricsCsvHeader() {
  return "manifest,step,mode,seed,td_loss,rank_loss,aux_loss,total_loss,action_gap,param_max_abs";
}

std::string toCsvLine(const agents::TrainMetricsRow& r, const std::string& manifest) {
  using eval::formatNumber;
  std::string s = manifest + "," + std::to_string(r.step) + "," + r.mode + "," +
                  std::to_string(r.seed);
  for (double v : {r.loss.tdLoss, r.loss.rankLoss, r.loss.auxLoss, r.loss.total, r.actionGap, r.paramNormMax})
    s += "," + formatNumber(v);
  return s;
}

}  // namespace bvelab::experiment
