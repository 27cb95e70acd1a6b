// bvelab command-line tool.
//
// Exit codes: 0 success (a DIVERGED run is a result, not a failure),
// 1 unexpected error, 2 configuration error, 3 I/O or file-format error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bvelab/datastore.hpp"
#include "bvelab/divergence.hpp"
#include "bvelab/envs.hpp"
#include "bvelab/errors.hpp"
#include "bvelab/evaluation.hpp"
#include "bvelab/experiment.hpp"
#include "bvelab/neuralnet.hpp"
#include "bvelab/tabular.hpp"

#ifndef BVELAB_VERSION
#define BVELAB_VERSION "0.1.0-unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bvelab;

namespace {

std::string utcNow() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

fs::path outputRoot(const std::string& fallback) {
  if (const char* env = std::getenv("BVELAB_OUT"); env && *env) return env;
  return fallback;
}

void ensureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream openOut(const fs::path& path) {
  if (path.has_parent_path()) ensureDir(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Provenance record written next to every set of artifacts.
struct RunManifest {
  std::string hash;
  std::string command;
  json config;
  std::vector<std::string> artifacts;
  std::string startedAt = utcNow();

  void write(const fs::path& path) const {
    json j{{"config_hash", hash},     {"command", command},   {"config", config},
           {"artifacts", artifacts},  {"started_at", startedAt},
           {"finished_at", utcNow()}, {"version", BVELAB_VERSION}};
    openOut(path) << j.dump(2) << "\n";
  }
};

std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) line += ',';
    line += fields[i];
  }
  return line;
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  for (std::string item; std::getline(s, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parseDoubles(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : splitList(text)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + item + "'");
    }
  }
  return out;
}

std::shared_ptr<const agents::QModel> modelFor(const envs::EnvSpec& spec) {
  if (spec.name == "divergence")
    return std::make_shared<agents::StateActionInputQ>(spec.observationDim, spec.numActions);
  return std::make_shared<agents::StateInputQ>(spec.observationDim, spec.numActions);
}

json loadConfigFile(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

// Flag overrides are applied on top of the config file; flags win.
struct ConfigFlags {
  std::string configPath;
  std::optional<std::string> dataset, mode, outputDir, env;
  std::optional<double> lambda, margin, beta, gamma, learningRate;
  std::optional<int> steps, batchSize, targetPeriod, evalEpisodes, metricsEvery, nStep;
  std::optional<std::string> seeds;
  mutable bool envGiven = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", configPath, "JSON config file");
    cmd->add_option("--dataset", dataset, "BVED dataset path");
    cmd->add_option("--env", env, "environment name");
    cmd->add_option("--mode", mode, "DQN, DDQN, BVE, R-DQN, R-BVE, BC, FBC, MC or CQL");
    cmd->add_option("--lambda", lambda, "ranking regulariser weight");
    cmd->add_option("--margin", margin, "ranking margin");
    cmd->add_option("--beta", beta, "success-weight temperature");
    cmd->add_option("--gamma", gamma, "discount");
    cmd->add_option("--n-step", nStep, "n-step return length");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--batch-size", batchSize, "minibatch size");
    cmd->add_option("--target-period", targetPeriod, "target network refresh period");
    cmd->add_option("--lr", learningRate, "Adam learning rate");
    cmd->add_option("--seeds", seeds, "comma-separated seeds");
    cmd->add_option("--eval-episodes", evalEpisodes, "evaluation episodes per run");
    cmd->add_option("--metrics-every", metricsEvery, "training-metrics period");
    cmd->add_option("--output-dir", outputDir, "output root (BVELAB_OUT wins)");
  }

  experiment::ExperimentConfig resolve() const {
    json j = loadConfigFile(configPath);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    envGiven = env.has_value() || j.contains("env");
    auto put = [&j](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("dataset_path", dataset);
    put("env", env);
    put("mode", mode);
    put("lambda_rank", lambda);
    put("margin", margin);
    put("beta", beta);
    put("gamma", gamma);
    put("n_step", nStep);
    put("training_steps", steps);
    put("batch_size", batchSize);
    put("target_update_period", targetPeriod);
    put("learning_rate", learningRate);
    put("eval_episodes", evalEpisodes);
    put("metrics_every", metricsEvery);
    put("output_dir", outputDir);
    if (seeds) {
      std::vector<std::uint64_t> list;
      for (double v : parseDoubles(*seeds)) list.push_back(static_cast<std::uint64_t>(v));
      j["seeds"] = list;
    }
    return experiment::configFromJson(j);
  }
};

// Without an explicit env the dataset decides it.
data::Dataset loadDatasetFor(experiment::ExperimentConfig& cfg, bool envGiven) {
  if (cfg.datasetPath.empty()) throw ConfigError("no dataset given (--dataset or dataset_path)");
  auto d = data::load(cfg.datasetPath);
  if (envGiven && envs::makeEnvironment(cfg.env)->spec() != d.header.envSpec) {
    throw ConfigError("dataset was logged on '" + d.header.envSpec.name + "', config says '" +
                      cfg.env + "'");
  }
  cfg.env = d.header.envSpec.name;
  return d;
}

// ------------------------------------------------------------ generate

int cmdGenerate(const experiment::GenerateOptions& g, const std::string& outPath) {
  RunManifest m;
  m.command = "generate";
  m.config = {{"env", g.env},         {"episodes", g.episodes}, {"noise_epsilon", g.noiseEpsilon},
              {"fraction", g.subsampleFraction}, {"seed", g.seed}, {"gamma", g.gamma},
              {"behavior", g.behavior}};
  m.hash = experiment::hashJson(m.config);
  const auto d = experiment::generateDataset(g);
  fs::path path = outPath;
  if (path.empty()) {
    std::string name = g.env;
    std::replace(name.begin(), name.end(), ':', '-');
    path = outputRoot("bvelab-out") / "datasets" / (name + "-" + m.hash + ".bved");
  }
  if (path.has_parent_path()) ensureDir(path.parent_path());
  data::save(d, path);
  m.artifacts.push_back(path.string());
  m.write(fs::path(path).replace_extension(".manifest.json"));
  std::cout << path.string() << "\n"
            << d.header.numEpisodes << " episodes, " << d.header.numTransitions
            << " transitions, noise " << d.header.noiseEpsilon << ", mean return "
            << data::meanEpisodicReturn(d) << "\n";
  return 0;
}

// ------------------------------------------------------------ train

int cmdTrain(const ConfigFlags& flags) {
  auto cfg = flags.resolve();
  const auto dataset = loadDatasetFor(cfg, flags.envGiven);
  RunManifest m;
  m.command = "train";
  m.config = experiment::toJson(cfg);
  m.hash = experiment::configHash(cfg);
  const fs::path dir = outputRoot(cfg.outputDir) / ("train-" + m.hash);
  ensureDir(dir);

  auto metrics = openOut(dir / "metrics.csv");
  auto training = openOut(dir / "train_metrics.csv");
  metrics << eval::metricsCsvHeader() << "\n";
  training << experiment::trainMetricsCsvHeader() << "\n";
  for (auto seed : cfg.seeds) {
    auto out = experiment::trainAndEvaluate(dataset, cfg, seed);
    out.row.manifest = m.hash;
    metrics << eval::toCsvLine(out.row) << "\n";
    for (const auto& row : out.train.metrics) training << experiment::toCsvLine(row, m.hash) << "\n";
    const auto ckpt = dir / ("seed-" + std::to_string(seed) + ".bveq");
    nn::saveCheckpoint(out.train.params, ckpt);
    m.artifacts.push_back(ckpt.string());
    std::cout << out.row.mode << " seed " << seed << ": "
              << (out.row.diverged ? "DIVERGED at step " + std::to_string(out.train.divergedAtStep)
                                   : "return " + eval::formatNumber(out.row.episodicReturnMedian))
              << "\n";
  }
  m.artifacts.push_back((dir / "metrics.csv").string());
  m.artifacts.push_back((dir / "train_metrics.csv").string());
  m.write(dir / "manifest.json");
  std::cout << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string checkpoint, env = "catch", dataset, mode = "checkpoint", out;
  int episodes = 100;
  std::uint64_t seed = 1;
  double gamma = 0.99;
  double epsilon = eval::kDefaultEvalEpsilon;
};

int cmdEvaluate(const EvaluateArgs& a) {
  RunManifest m;
  m.command = "evaluate";
  m.config = {{"checkpoint", a.checkpoint}, {"env", a.env},     {"dataset", a.dataset},
              {"episodes", a.episodes},     {"seed", a.seed},   {"gamma", a.gamma},
              {"epsilon", a.epsilon},       {"mode", a.mode}};
  m.hash = experiment::hashJson(m.config);
  auto env = envs::makeEnvironment(a.env);
  eval::GreedyPolicy policy{nn::loadCheckpoint(a.checkpoint), modelFor(env->spec()), a.epsilon};
  if (policy.params.inputWidth() != policy.model->networkInputWidth())
    throw ConfigError("checkpoint does not fit environment '" + a.env + "'");
  const auto rollouts = eval::rollout(policy, *env, a.episodes, a.seed, a.gamma);

  eval::MetricsRow row;
  row.manifest = m.hash;
  row.envName = env->spec().name;
  row.mode = a.mode;
  row.seed = a.seed;
  std::vector<double> returns;
  for (const auto& r : rollouts) returns.push_back(r.episodicReturn);
  row.episodicReturnMedian = eval::median(returns);
  row.overEstimationError = eval::overEstimationError(rollouts);
  row.overEstimationErrorAllStates = eval::overEstimationErrorAllStates(rollouts);
  row.valueErrorMean = eval::valueError(rollouts);
  row.normalizedScore = std::numeric_limits<double>::quiet_NaN();
  row.actionGapMean = std::numeric_limits<double>::quiet_NaN();
  if (!a.dataset.empty()) {
    const auto d = data::load(a.dataset);
    row.datasetFraction = d.header.subsampleFraction;
    row.noiseEpsilon = d.header.noiseEpsilon;
    row.actionGapMean = eval::actionGap(*policy.model, policy.params, d);
    try {
      row.normalizedScore = eval::normalizedScore(
          row.episodicReturnMedian, experiment::randomPolicyReturn(a.env, a.episodes, a.seed),
          experiment::behaviorTailReturn(d));
    } catch (const DegenerateReference&) {
    }
  }
  const std::string text = eval::metricsCsvHeader() + "\n" + eval::toCsvLine(row) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    openOut(a.out) << text;
    m.artifacts.push_back(a.out);
    m.write(fs::path(a.out).replace_extension(".manifest.json"));
  }
  return 0;
}

// ------------------------------------------------------------ analyze

struct AnalyzeArgs {
  std::string mdp, builtin = "grid", policy = "uniform", ending = "terminating", out;
  std::optional<double> gamma;
};

tabular::TabularMDP builtinMdp(const AnalyzeArgs& a) {
  const double gamma = a.gamma.value_or(0.99);
  if (a.builtin == "grid") return tabular::gridMdp(envs::shippedGrid(), gamma);
  if (a.builtin == "divergence") return tabular::divergenceMdp(gamma);
  if (a.builtin.rfind("chain", 0) == 0) {
    int n = 5;
    if (a.builtin.size() > 6 && a.builtin[5] == ':') n = std::stoi(a.builtin.substr(6));
    if (n < 2) throw ConfigError("chain needs at least 2 states");
    const auto ending = a.ending == "continuing" ? tabular::ChainEnding::kContinuing
                                                 : tabular::ChainEnding::kTerminating;
    return tabular::chainMdp(n, gamma, ending);
  }
  throw ConfigError("unknown builtin MDP '" + a.builtin + "'");
}

tabular::TabularPolicy analyzePolicy(const std::string& selector, const tabular::TabularMDP& m) {
  if (selector == "uniform") return tabular::TabularPolicy::uniform(m.numStates, m.numActions);
  std::vector<int> actions;
  for (double v : parseDoubles(selector)) actions.push_back(static_cast<int>(v));
  if (static_cast<int>(actions.size()) != m.numStates)
    throw ConfigError("policy needs one action per state");
  for (int act : actions)
    if (act < 0 || act >= m.numActions) throw ConfigError("policy action out of range");
  return tabular::TabularPolicy::deterministic(actions, m.numActions);
}

int cmdAnalyze(const AnalyzeArgs& a) {
  tabular::TabularMDP m;
  if (!a.mdp.empty()) {
    std::ifstream in(a.mdp);
    if (!in) throw IoError("cannot read " + a.mdp);
    std::stringstream text;
    text << in.rdbuf();
    try {
      m = tabular::parseMdpJson(text.str());
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("bad MDP file: " + std::string(e.what()));
    }
    if (a.gamma) m.gamma = *a.gamma;
  } else {
    m = builtinMdp(a);
  }

  RunManifest man;
  man.command = "analyze";
  man.config = {{"mdp", a.mdp}, {"builtin", a.mdp.empty() ? a.builtin : ""},
                {"policy", a.policy}, {"ending", a.ending}, {"gamma", m.gamma}};
  man.hash = experiment::hashJson(man.config);

  const auto behavior = analyzePolicy(a.policy, m);
  const auto base = tabular::evaluatePolicy(m, behavior);
  const auto improvedPolicy = tabular::greedyImprove(base);
  const auto improved = tabular::evaluatePolicy(m, improvedPolicy);
  const auto opt = tabular::valueIteration(m, 1e-10);
  const auto optPolicy = tabular::greedyImprove(opt.values);

  std::ostringstream table;
  std::vector<std::string> header{"manifest", "state", "name", "terminal", "V_behavior"};
  for (int act = 0; act < m.numActions; ++act) header.push_back("Q_behavior_a" + std::to_string(act));
  for (const char* h : {"pi_1step", "V_1step", "pi_opt", "V_opt"}) header.push_back(h);
  table << join(header) << "\n";
  for (int s = 0; s < m.numStates; ++s) {
    std::vector<std::string> f{man.hash, std::to_string(s),
                               s < static_cast<int>(m.stateNames.size()) ? m.stateNames[s] : "",
                               m.terminalMask[s] ? "1" : "0", eval::formatNumber(base.v[s])};
    for (int act = 0; act < m.numActions; ++act) f.push_back(eval::formatNumber(base.q(s, act)));
    f.push_back(std::to_string(improvedPolicy.action(s)));
    f.push_back(eval::formatNumber(improved.v[s]));
    f.push_back(std::to_string(optPolicy.action(s)));
    f.push_back(eval::formatNumber(opt.values.v[s]));
    table << join(f) << "\n";
  }

  // Start-state values use the initial distribution.
  auto atStart = [&](const Eigen::VectorXd& v) { return m.initialDistribution.dot(v); };
  std::string premise;
  try {
    const double lo = m.rewards.minCoeff(), hi = m.rewards.maxCoeff();
    const auto p = tabular::checkTwoOutcomePremise(m, behavior, lo, hi);
    if (p.holds()) premise = "holds";
    else if (!p.finiteHorizon) premise = "fails: some trajectory never terminates";
    else premise = "fails: behaviour does not reach the high outcome everywhere";
  } catch (const StructureViolation& e) {
    premise = std::string("StructureViolation: ") + e.what();
  } catch (const std::exception& e) {
    premise = std::string("not checked: ") + e.what();
  }
  std::replace(premise.begin(), premise.end(), ',', ';');

  std::ostringstream summary;
  summary << "manifest,quantity,value\n"
          << man.hash << ",V_behavior_start," << eval::formatNumber(atStart(base.v)) << "\n"
          << man.hash << ",V_1step_start," << eval::formatNumber(atStart(improved.v)) << "\n"
          << man.hash << ",V_opt_start," << eval::formatNumber(atStart(opt.values.v)) << "\n"
          << man.hash << ",value_iteration_sweeps," << opt.iterations << "\n"
          << man.hash << ",two_outcome_premise," << premise << "\n";

  if (a.out.empty()) {
    std::cout << table.str() << "\n" << summary.str();
    return 0;
  }
  const fs::path dir = a.out;
  ensureDir(dir);
  openOut(dir / "tables.csv") << table.str();
  openOut(dir / "summary.csv") << summary.str();
  man.artifacts = {(dir / "tables.csv").string(), (dir / "summary.csv").string()};
  man.write(dir / "manifest.json");
  std::cout << summary.str();
  return 0;
}

// ------------------------------------------------------------ divergence

struct DivergenceArgs {
  divergence::ToyConfig toy;
  int steps = 1000;
  std::string mode = "DQN", optimizer = "sgd", sampling = "full", out;
  std::uint64_t seed = 1;
};

int cmdDivergence(const DivergenceArgs& a) {
  divergence::ToyTrainOptions opt;
  opt.mode = agents::parseMode(a.mode);
  opt.seed = a.seed;
  if (a.optimizer == "adam") opt.optimizer = agents::Optimizer::kAdam;
  else if (a.optimizer != "sgd") throw ConfigError("optimizer must be sgd or adam");
  if (a.sampling == "cyclic") opt.sampling = agents::Sampling::kCyclic;
  else if (a.sampling == "uniform") opt.sampling = agents::Sampling::kUniform;
  else if (a.sampling != "full") throw ConfigError("sampling must be full, cyclic or uniform");
  if (opt.sampling != agents::Sampling::kFullBatch) opt.batchSize = 1;

  RunManifest m;
  m.command = "divergence";
  m.config = {{"gamma", a.toy.gamma}, {"beta", a.toy.betaFeature}, {"lr", a.toy.learningRate},
              {"w0", a.toy.initialW}, {"steps", a.steps},          {"mode", a.mode},
              {"optimizer", a.optimizer}, {"sampling", a.sampling}, {"seed", a.seed}};
  m.hash = experiment::hashJson(m.config);
  const auto run = divergence::trainToy(a.toy, a.steps, opt);

  std::ostringstream trace;
  trace << "manifest,step,w,u1,u2\n";
  for (std::size_t t = 0; t < run.trajectory.size(); ++t) {
    const auto& p = run.trajectory[t];
    trace << join({m.hash, std::to_string(t), eval::formatNumber(p.w), eval::formatNumber(p.u1),
                   eval::formatNumber(p.u2)})
          << "\n";
  }
  const std::string status =
      run.result.diverged ? "DIVERGED at step " + std::to_string(run.result.divergedAtStep)
                          : "bounded after " + std::to_string(a.steps) + " steps";
  if (a.out.empty()) {
    std::cout << trace.str();
    std::cerr << status << "\n";
    return 0;
  }
  openOut(a.out) << trace.str();
  m.artifacts.push_back(a.out);
  m.write(fs::path(a.out).replace_extension(".manifest.json"));
  std::cout << status << "\n";
  return 0;
}

// ------------------------------------------------------------ sweep

struct SweepArgs {
  ConfigFlags flags;
  std::string axis = "fraction", values, modes = "DDQN,R-DQN,BVE,R-BVE";
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::uint64_t subsampleSeed = 0;
  experiment::GenerateOptions generate;
};

int cmdSweep(const SweepArgs& a) {
  experiment::SweepSpec spec;
  spec.base = a.flags.resolve();
  spec.axis = experiment::parseAxis(a.axis);
  spec.values = parseDoubles(a.values);
  for (const auto& name : splitList(a.modes)) spec.modes.push_back(agents::parseMode(name));
  spec.workers = a.workers;
  spec.subsampleSeed = a.subsampleSeed;
  spec.generate = a.generate;
  spec.generate.gamma = spec.base.loss.gamma;

  data::Dataset base;
  if (spec.axis != experiment::SweepAxis::kNoiseEpsilon)
    base = loadDatasetFor(spec.base, a.flags.envGiven);

  RunManifest m;
  m.command = "sweep";
  m.config = experiment::toJson(spec.base);
  m.config["axis"] = a.axis;
  m.config["values"] = spec.values;
  m.config["modes"] = splitList(a.modes);
  m.config["subsample_seed"] = a.subsampleSeed;
  if (spec.axis == experiment::SweepAxis::kNoiseEpsilon)
    m.config["generate"] = {{"episodes", a.generate.episodes}, {"seed", a.generate.seed},
                            {"fraction", a.generate.subsampleFraction},
                            {"behavior", a.generate.behavior}};
  spec.generate.env = spec.base.env;
  m.hash = experiment::hashJson(m.config);
  spec.manifest = m.hash;

  const auto result = experiment::runSweep(spec, base);
  const fs::path dir = outputRoot(spec.base.outputDir) / ("sweep-" + m.hash);
  ensureDir(dir);
  auto rows = openOut(dir / "runs.csv");
  rows << eval::metricsCsvHeader() << "\n";
  for (const auto& r : result.rows) rows << eval::toCsvLine(r) << "\n";
  auto agg = openOut(dir / "aggregate.csv");
  agg << "manifest," << experiment::aggregateCsvHeader() << "\n";
  for (const auto& r : result.aggregate) agg << m.hash << "," << experiment::toCsvLine(r) << "\n";
  m.artifacts = {(dir / "runs.csv").string(), (dir / "aggregate.csv").string()};
  m.write(dir / "manifest.json");
  for (const auto& f : result.failures) std::cerr << "cell failed: " << f << "\n";
  std::cout << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------ dataset-info

int cmdDatasetInfo(const std::string& path, int bins) {
  const auto d = data::load(path);
  const auto& h = d.header;
  std::cout << "field,value\n"
            << "env," << h.envSpec.name << "\n"
            << "observation_dim," << h.envSpec.observationDim << "\n"
            << "num_actions," << h.envSpec.numActions << "\n"
            << "max_episode_length," << h.envSpec.maxEpisodeLength << "\n"
            << "gamma," << eval::formatNumber(h.gamma) << "\n"
            << "noise_epsilon," << eval::formatNumber(h.noiseEpsilon) << "\n"
            << "subsample_fraction," << eval::formatNumber(h.subsampleFraction) << "\n"
            << "generator," << h.generatorDescription << "\n"
            << "num_episodes," << h.numEpisodes << "\n"
            << "num_transitions," << h.numTransitions << "\n"
            << "mean_return," << eval::formatNumber(data::meanEpisodicReturn(d)) << "\n\n";

  std::vector<double> returns;
  for (const auto& ep : d.episodes) returns.push_back(data::episodicReturn(ep));
  std::cout << "bin_low,bin_high,count\n";
  if (returns.empty()) return 0;
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  const double low = *lo, high = *hi;
  const int n = low == high ? 1 : bins;
  const double width = low == high ? 1.0 : (high - low) / n;
  std::vector<int> counts(static_cast<std::size_t>(n), 0);
  for (double g : returns) {
    const int b = std::min(n - 1, static_cast<int>((g - low) / width));
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < n; ++b) {
    const double a = low == high ? low : low + b * width;
    const double z = low == high ? high : (b + 1 == n ? high : low + (b + 1) * width);
    std::cout << eval::formatNumber(a) << "," << eval::formatNumber(z) << ","
              << counts[static_cast<std::size_t>(b)] << "\n";
  }
  return 0;
}

void addGenerateOptions(CLI::App* cmd, experiment::GenerateOptions& g) {
  cmd->add_option("--episodes", g.episodes, "episodes to log")->capture_default_str();
  cmd->add_option("--noise", g.noiseEpsilon, "action-noise epsilon")->capture_default_str();
  cmd->add_option("--fraction", g.subsampleFraction, "episode subsample fraction")
      ->capture_default_str();
  cmd->add_option("--gen-seed", g.seed, "generation seed")->capture_default_str();
  cmd->add_option("--behavior", g.behavior, "dqn, uniform or right")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bvelab: offline value-estimation workbench"};
  app.set_version_flag("--version", BVELAB_VERSION);
  app.require_subcommand(1);

  experiment::GenerateOptions gen;
  std::string genOut;
  auto* generate = app.add_subcommand("generate", "log a noisy behaviour dataset (BVED)");
  generate->add_option("--env", gen.env, "catch, chain[:n], grid, divergence")->capture_default_str();
  generate->add_option("--seed", gen.seed, "generation seed")->capture_default_str();
  generate->add_option("--gamma", gen.gamma, "discount for return-to-go")->capture_default_str();
  generate->add_option("--out", genOut, "output path");
  generate->add_option("--episodes", gen.episodes, "episodes to log")->capture_default_str();
  generate->add_option("--noise", gen.noiseEpsilon, "action-noise epsilon")->capture_default_str();
  generate->add_option("--fraction", gen.subsampleFraction, "episode subsample fraction")
      ->capture_default_str();
  generate->add_option("--behavior", gen.behavior, "dqn, uniform or right")->capture_default_str();

  ConfigFlags trainFlags;
  auto* train = app.add_subcommand("train", "train one run per seed and evaluate it");
  trainFlags.attach(train);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "roll out a checkpoint in the noise-free env");
  evaluate->add_option("--checkpoint", ev.checkpoint, "BVEQ checkpoint")->required();
  evaluate->add_option("--env", ev.env, "environment")->capture_default_str();
  evaluate->add_option("--dataset", ev.dataset, "dataset for action gap and normalisation");
  evaluate->add_option("--episodes", ev.episodes, "episodes")->capture_default_str();
  evaluate->add_option("--seed", ev.seed, "evaluation seed")->capture_default_str();
  evaluate->add_option("--gamma", ev.gamma, "discount")->capture_default_str();
  evaluate->add_option("--epsilon", ev.epsilon, "evaluation epsilon");
  evaluate->add_option("--mode", ev.mode, "label for the mode column");
  evaluate->add_option("--out", ev.out, "CSV path (stdout if omitted)");

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "exact tabular values and policy improvement");
  analyze->add_option("--mdp", an.mdp, "JSON MDP file");
  analyze->add_option("--builtin", an.builtin, "grid, chain[:n] or divergence")->capture_default_str();
  analyze->add_option("--ending", an.ending, "chain ending: terminating or continuing")
      ->check(CLI::IsMember({"terminating", "continuing"}));
  analyze->add_option("--policy", an.policy, "uniform or one action per state (comma-separated)");
  analyze->add_option("--gamma", an.gamma, "discount");
  analyze->add_option("--out", an.out, "output directory (stdout if omitted)");

  DivergenceArgs dv;
  auto* div = app.add_subcommand("divergence", "toy divergence trace (step, w, u1, u2)");
  div->add_option("--gamma", dv.toy.gamma, "discount")->capture_default_str();
  div->add_option("--beta", dv.toy.betaFeature, "feature of s3")->capture_default_str();
  div->add_option("--lr", dv.toy.learningRate, "step size")->capture_default_str();
  div->add_option("--w0", dv.toy.initialW, "initial w")->capture_default_str();
  div->add_option("--steps", dv.steps, "updates")->capture_default_str();
  div->add_option("--mode", dv.mode, "DQN, DDQN or BVE")->capture_default_str();
  div->add_option("--optimizer", dv.optimizer, "sgd or adam")->capture_default_str();
  div->add_option("--sampling", dv.sampling, "full, cyclic or uniform")->capture_default_str();
  div->add_option("--seed", dv.seed, "sampling seed")->capture_default_str();
  div->add_option("--out", dv.out, "CSV path (stdout if omitted)");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "axis x modes x seeds with median/stderr aggregation");
  sw.flags.attach(sweep);
  sweep->add_option("--axis", sw.axis, "fraction, lambda or noise")->capture_default_str();
  sweep->add_option("--values", sw.values, "comma-separated axis values")->required();
  sweep->add_option("--modes", sw.modes, "comma-separated modes")->capture_default_str();
  sweep->add_option("--workers", sw.workers, "parallel runs")->check(CLI::PositiveNumber);
  sweep->add_option("--subsample-seed", sw.subsampleSeed, "seed for the fraction axis");
  addGenerateOptions(sweep, sw.generate);

  std::string infoPath;
  int bins = 10;
  auto* info = app.add_subcommand("dataset-info", "dataset header and return histogram");
  info->add_option("dataset", infoPath, "BVED file")->required();
  info->add_option("--bins", bins, "histogram bins")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*generate) return cmdGenerate(gen, genOut);
    if (*train) return cmdTrain(trainFlags);
    if (*evaluate) return cmdEvaluate(ev);
    if (*analyze) return cmdAnalyze(an);
    if (*div) return cmdDivergence(dv);
    if (*sweep) return cmdSweep(sw);
    if (*info) return cmdDatasetInfo(infoPath, bins);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ArchitectureMismatch& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const FormatVersionMismatch& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const ChecksumMismatch& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const CorruptDataset& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
