#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bvelab/datastore.hpp"
#include "bvelab/neuralnet.hpp"

namespace bvelab::agents {

enum class Mode { kDqn, kDdqn, kBve, kRDqn, kRBve, kBc, kFilteredBc, kMc, kCql };

std::string_view modeName(Mode mode);
// Accepts the names produced by modeName (case-insensitive). Throws ConfigError.
Mode parseMode(std::string_view name);
bool usesRanking(Mode mode);
bool isTemporalDifference(Mode mode);

struct LossConfig {
  double gamma = 0.99;
  double lambdaRank = 0.005;
  double marginNu = 0.05;
  double betaTemp = 0.5;
  int nStep = 1;
  double cqlAlpha = 0.01;
  // Double-DQN action selection for the Q-learning family. kDqn forces it
  // off, kDdqn forces it on.
  bool doubleDqn = true;
  // Upper clip on the success weight exp((G - mean) / beta).
  double maxSuccessWeight = 20.0;
};

// ------------------------------------------------------------ Q models

struct QPass {
  Eigen::MatrixXd values;  // numActions x batch
  nn::ForwardTrace trace;
};

// How an MLP maps a batch of states to per-action values.
class QModel {
 public:
  virtual ~QModel() = default;
  virtual int numActions() const = 0;
  virtual int stateWidth() const = 0;
  virtual int networkInputWidth() const = 0;
  virtual int networkOutputWidth() const = 0;
  virtual QPass forward(const nn::MlpParams& params, const Eigen::MatrixXd& states) const = 0;
  virtual Eigen::MatrixXd values(const nn::MlpParams& params, const Eigen::MatrixXd& states) const = 0;
  // Gradient of sum(dValues .* values) through the pass.
  virtual nn::GradientBundle backward(const nn::MlpParams& params, const QPass& pass,
                                      const Eigen::MatrixXd& dValues) const = 0;
};

// state -> one output per action.
class StateInputQ final : public QModel {
 public:
  StateInputQ(int stateWidth, int numActions) : stateWidth_(stateWidth), numActions_(numActions) {}
  int numActions() const override { return numActions_; }
  int stateWidth() const override { return stateWidth_; }
  int networkInputWidth() const override { return stateWidth_; }
  int networkOutputWidth() const override { return numActions_; }
  QPass forward(const nn::MlpParams& params, const Eigen::MatrixXd& states) const override;
  Eigen::MatrixXd values(const nn::MlpParams& params, const Eigen::MatrixXd& states) const override;
  nn::GradientBundle backward(const nn::MlpParams& params, const QPass& pass,
                              const Eigen::MatrixXd& dValues) const override;

 private:
  int stateWidth_;
  int numActions_;
};

// [state; one-hot(action)] -> scalar, evaluated once per action.
class StateActionInputQ final : public QModel {
 public:
  StateActionInputQ(int stateWidth, int numActions)
      : stateWidth_(stateWidth), numActions_(numActions) {}
  int numActions() const override { return numActions_; }
  int stateWidth() const override { return stateWidth_; }
  int networkInputWidth() const override { return stateWidth_ + numActions_; }
  int networkOutputWidth() const override { return 1; }
  QPass forward(const nn::MlpParams& params, const Eigen::MatrixXd& states) const override;
  Eigen::MatrixXd values(const nn::MlpParams& params, const Eigen::MatrixXd& states) const override;
  nn::GradientBundle backward(const nn::MlpParams& params, const QPass& pass,
                              const Eigen::MatrixXd& dValues) const override;

 private:
  Eigen::MatrixXd expand(const Eigen::MatrixXd& states) const;
  int stateWidth_;
  int numActions_;
};

Eigen::VectorXd qValues(const QModel& model, const nn::MlpParams& params,
                        std::span<const double> state);

// Lowest index wins ties.
int argmaxAction(const Eigen::Ref<const Eigen::VectorXd>& row);
// Mean over columns of (best - second best).
double meanActionGap(const Eigen::MatrixXd& values);

// ------------------------------------------------------------ targets

// One record's bootstrapped target, or nullopt when the record is skipped.
using Target = std::optional<double>;

Target dqnTarget(const data::TransitionRecord& record, const QModel& model,
                 const nn::MlpParams& targetParams, const nn::MlpParams& onlineParams,
                 const LossConfig& cfg);
// Skips truncated tails (non-terminal without a logged next action).
Target bveTarget(const data::TransitionRecord& record, const QModel& model,
                 const nn::MlpParams& targetParams, const LossConfig& cfg);

enum class BootstrapKind { kQLearning, kBehavior };

// Summary of up to n consecutive records from one episode.
struct NStepWindow {
  double discountedRewards = 0.0;
  int steps = 0;
  bool reachedTerminal = false;
  const data::Observation* bootstrapState = nullptr;
  std::optional<int> bootstrapAction;
};

// Throws WindowNotContiguous.
NStepWindow summarizeWindow(std::span<const data::TransitionRecord> window, int n, double gamma);

Target nStepTarget(std::span<const data::TransitionRecord> window, const QModel& model,
                   const nn::MlpParams& targetParams, const nn::MlpParams& onlineParams,
                   const LossConfig& cfg, BootstrapKind kind);

// ------------------------------------------------------------ batches

struct RecordRef {
  const data::Episode* episode = nullptr;
  int t = 0;
  double episodeReturn = 0.0;  // undiscounted return of the whole episode
  const data::TransitionRecord& record() const { return (*episode)[static_cast<std::size_t>(t)]; }
};

struct Minibatch {
  std::vector<RecordRef> records;
  double batchMeanReturnToGo = 0.0;

  // Columns gathered from the records (n-step summaries for the bootstrap).
  Eigen::MatrixXd states;
  std::vector<int> actions;
  Eigen::VectorXd returnToGo;
  Eigen::VectorXd episodeReturn;
  Eigen::VectorXd windowRewards;
  Eigen::VectorXd bootstrapDiscount;  // gamma^m, 0 when the window hit a terminal
  Eigen::MatrixXd bootstrapStates;
  std::vector<std::optional<int>> bootstrapActions;
  std::vector<bool> reachedTerminal;

  int size() const { return static_cast<int>(records.size()); }
};

// One reference per record of the dataset, in storage order.
std::vector<RecordRef> recordRefs(const data::Dataset& dataset);
Minibatch makeMinibatch(std::vector<RecordRef> records, const LossConfig& cfg);
Minibatch makeMinibatch(const data::Episode& episode, const LossConfig& cfg);

// ------------------------------------------------------------ losses

struct LossBreakdown {
  double tdLoss = 0.0;
  double rankLoss = 0.0;
  double auxLoss = 0.0;
  double total = 0.0;
};

struct LossResult {
  LossBreakdown breakdown;
  nn::GradientBundle grads;
  int effectiveBatch = 0;
};

double successWeight(double returnToGo, double batchMeanReturnToGo, const LossConfig& cfg);
// Unweighted sum over non-dataset actions of max(q_i - q_action + margin, 0)^2.
double hingeSum(std::span<const double> q, int action, double margin);
double rankingLoss(const QModel& model, const nn::MlpParams& params,
                   const data::TransitionRecord& record, double batchMeanReturnToGo,
                   const LossConfig& cfg);

// Mean squared TD error over non-skipped records plus, for the ranking
// modes, lambda times the mean weighted ranking loss; CQL adds its
// regulariser as auxLoss. No gradient flows through targetParams.
// Throws EmptyEffectiveBatch when every record is skipped.
LossResult tdLoss(const QModel& model, const nn::MlpParams& params,
                  const nn::MlpParams& targetParams, const Minibatch& batch, const LossConfig& cfg,
                  Mode mode);
// Softmax cross-entropy of the logged actions. With `filtered`, records from
// episodes returning less than thresholdMeanReturn are dropped.
LossResult bcLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch,
                  bool filtered, double thresholdMeanReturn);
// Mean squared error between Q(s, a) and the return-to-go.
LossResult mcLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch);
// alpha * mean(logsumexp_a Q(s, a) - Q(s, a_t)).
double cqlLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch,
               const LossConfig& cfg);

// ------------------------------------------------------------ training

enum class Optimizer { kAdam, kSgd };
enum class Sampling { kUniform, kCyclic, kFullBatch };

struct TrainConfig {
  Mode mode = Mode::kRBve;
  LossConfig loss;
  int steps = 20000;
  int batchSize = 128;
  int targetUpdatePeriod = 2500;
  double learningRate = 1e-4;
  Optimizer optimizer = Optimizer::kAdam;
  Sampling sampling = Sampling::kUniform;
  std::vector<int> hiddenWidths{56, 56};
  std::uint64_t seed = 1;
  // Any |parameter| above this halts training as diverged.
  double divergenceThreshold = 1e6;
  int metricsEvery = 1000;

  // Optional overrides used by the toy reproductions.
  std::shared_ptr<const QModel> model;
  std::optional<nn::MlpParams> initialParams;
  std::optional<nn::TrainableMask> trainable;
  std::function<void(int step, const nn::MlpParams&)> onStep;
};

struct TrainMetricsRow {
  int step = 0;
  std::string mode;
  std::uint64_t seed = 0;
  LossBreakdown loss;
  double actionGap = 0.0;
  double paramNormMax = 0.0;
};

struct TrainResult {
  nn::MlpParams params;
  std::shared_ptr<const QModel> model;
  std::vector<TrainMetricsRow> metrics;
  bool diverged = false;
  int divergedAtStep = -1;
  std::string divergenceMessage;
  int stepsCompleted = 0;
};

// Offline training on a fixed dataset. Deterministic for a fixed config.
// DivergenceDetected is caught and reported through the result.
TrainResult trainLoop(const data::Dataset& dataset, const TrainConfig& config);

// Online epsilon-greedy DQN used to generate datasets: learns from the
// transitions it observes while logEpisodes records them.
struct OnlineDqnConfig {
  std::vector<int> hiddenWidths{56, 56};
  double learningRate = 1e-3;
  double gamma = 0.99;
  int batchSize = 32;
  int minReplay = 100;
  int replayCapacity = 100000;
  int targetUpdatePeriod = 100;
  double epsilonStart = 1.0;
  double epsilonEnd = 0.01;
  int epsilonDecaySteps = 1000;
};

class OnlineDqnBehavior final : public data::BehaviorPolicy {
 public:
  OnlineDqnBehavior(int stateWidth, int numActions, OnlineDqnConfig config, std::uint64_t seed);

  int act(const data::Observation& state, Rng& rng) override;
  void observe(const data::Observation& state, int executedAction, double reward,
               const data::Observation& nextState, bool terminal) override;

  double currentEpsilon() const;
  const nn::MlpParams& params() const { return params_; }
  std::int64_t updates() const { return adam_.stepCount; }

 private:
  struct Stored {
    data::Observation state;
    int action;
    double reward;
    data::Observation nextState;
    bool terminal;
  };
  void learn();

  OnlineDqnConfig cfg_;
  StateInputQ model_;
  nn::MlpParams params_;
  nn::MlpParams target_;
  nn::AdamState adam_;
  std::vector<Stored> replay_;
  std::size_t replayNext_ = 0;
  std::int64_t envSteps_ = 0;
  Rng rng_;
};

}  // namespace bvelab::agents
