#include "bvelab/agents.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "bvelab/errors.hpp"

namespace bvelab::agents {

namespace {

constexpr std::pair<Mode, std::string_view> kModeNames[] = {
    {Mode::kDqn, "DQN"},   {Mode::kDdqn, "DDQN"}, {Mode::kBve, "BVE"},
    {Mode::kRDqn, "R-DQN"}, {Mode::kRBve, "R-BVE"}, {Mode::kBc, "BC"},
    {Mode::kFilteredBc, "FBC"}, {Mode::kMc, "MC"}, {Mode::kCql, "CQL"},
};

bool isQLearning(Mode m) {
  return m == Mode::kDqn || m == Mode::kDdqn || m == Mode::kRDqn || m == Mode::kCql;
}

bool isBehavior(Mode m) { return m == Mode::kBve || m == Mode::kRBve; }

bool useDouble(Mode m, const LossConfig& cfg) {
  if (m == Mode::kDqn) return false;
  if (m == Mode::kDdqn) return true;
  return cfg.doubleDqn;
}

Eigen::MatrixXd column(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double logSumExp(const Eigen::Ref<const Eigen::VectorXd>& q) {
  const double m = q.maxCoeff();
  return m + std::log((q.array() - m).exp().sum());
}

void checkStates(const QModel& model, const Eigen::MatrixXd& states) {
  if (states.rows() != model.stateWidth()) {
    throw ShapeMismatch("state width " + std::to_string(states.rows()) + ", model expects " +
                        std::to_string(model.stateWidth()));
  }
}

}  // namespace

std::string_view modeName(Mode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  return "?";
}

Mode parseMode(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  std::replace(upper.begin(), upper.end(), '_', '-');
  if (upper == "RBVE") upper = "R-BVE";
  if (upper == "RDQN") upper = "R-DQN";
  if (upper == "FILTERED-BC") upper = "FBC";
  for (const auto& [m, n] : kModeNames) {
    if (n == upper) return m;
  }
  throw ConfigError("unknown agent mode '" + std::string(name) + "'");
}

bool usesRanking(Mode mode) { return mode == Mode::kRDqn || mode == Mode::kRBve; }

bool isTemporalDifference(Mode mode) { return isQLearning(mode) || isBehavior(mode); }

// ------------------------------------------------------------ Q models

QPass StateInputQ::forward(const nn::MlpParams& params, const Eigen::MatrixXd& states) const {
  checkStates(*this, states);
  QPass pass;
  pass.trace = nn::forwardTrace(params, states);
  pass.values = pass.trace.output();
  return pass;
}

Eigen::MatrixXd StateInputQ::values(const nn::MlpParams& params,
                                    const Eigen::MatrixXd& states) const {
  checkStates(*this, states);
  return nn::forwardBatch(params, states);
}

nn::GradientBundle StateInputQ::backward(const nn::MlpParams& params, const QPass& pass,
                                         const Eigen::MatrixXd& dValues) const {
  return nn::backward(params, pass.trace, dValues);
}

Eigen::MatrixXd StateActionInputQ::expand(const Eigen::MatrixXd& states) const {
  checkStates(*this, states);
  const Eigen::Index batch = states.cols();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(stateWidth_ + numActions_, batch * numActions_);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int a = 0; a < numActions_; ++a) {
      const Eigen::Index col = b * numActions_ + a;
      x.col(col).head(stateWidth_) = states.col(b);
      x(stateWidth_ + a, col) = 1.0;
    }
  }
  return x;
}

QPass StateActionInputQ::forward(const nn::MlpParams& params,
                                 const Eigen::MatrixXd& states) const {
  QPass pass;
  pass.trace = nn::forwardTrace(params, expand(states));
  const Eigen::MatrixXd& out = pass.trace.output();
  if (out.rows() != 1) throw ShapeMismatch("state-action network must have a scalar output");
  pass.values = Eigen::Map<const Eigen::MatrixXd>(out.data(), numActions_, states.cols());
  return pass;
}

Eigen::MatrixXd StateActionInputQ::values(const nn::MlpParams& params,
                                          const Eigen::MatrixXd& states) const {
  const Eigen::MatrixXd out = nn::forwardBatch(params, expand(states));
  if (out.rows() != 1) throw ShapeMismatch("state-action network must have a scalar output");
  return Eigen::Map<const Eigen::MatrixXd>(out.data(), numActions_, states.cols());
}

nn::GradientBundle StateActionInputQ::backward(const nn::MlpParams& params, const QPass& pass,
                                               const Eigen::MatrixXd& dValues) const {
  const Eigen::MatrixXd flat =
      Eigen::Map<const Eigen::MatrixXd>(dValues.data(), 1, dValues.size());
  return nn::backward(params, pass.trace, flat);
}

Eigen::VectorXd qValues(const QModel& model, const nn::MlpParams& params,
                        std::span<const double> state) {
  return model.values(params, column(state)).col(0);
}

int argmaxAction(const Eigen::Ref<const Eigen::VectorXd>& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<int>(i);
  }
  return best;
}

double meanActionGap(const Eigen::MatrixXd& values) {
  if (values.rows() < 2) throw std::invalid_argument("action gap needs at least two actions");
  if (values.cols() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index b = 0; b < values.cols(); ++b) {
    double first = -std::numeric_limits<double>::infinity();
    double second = first;
    for (Eigen::Index a = 0; a < values.rows(); ++a) {
      const double q = values(a, b);
      if (q > first) {
        second = first;
        first = q;
      } else if (q > second) {
        second = q;
      }
    }
    total += first - second;
  }
  return total / static_cast<double>(values.cols());
}

// ------------------------------------------------------------ targets

namespace {

double qLearningBootstrap(const QModel& model, const nn::MlpParams& targetParams,
                          const nn::MlpParams& onlineParams, const data::Observation& next,
                          bool doubleDqn) {
  const Eigen::VectorXd qt = qValues(model, targetParams, next);
  if (!doubleDqn) return qt.maxCoeff();
  return qt(argmaxAction(qValues(model, onlineParams, next)));
}

}  // namespace

Target dqnTarget(const data::TransitionRecord& record, const QModel& model,
                 const nn::MlpParams& targetParams, const nn::MlpParams& onlineParams,
                 const LossConfig& cfg) {
  if (record.terminal) return record.reward;
  return record.reward + cfg.gamma * qLearningBootstrap(model, targetParams, onlineParams,
                                                        record.nextState, cfg.doubleDqn);
}

Target bveTarget(const data::TransitionRecord& record, const QModel& model,
                 const nn::MlpParams& targetParams, const LossConfig& cfg) {
  if (record.terminal) return record.reward;
  if (!record.nextAction) return std::nullopt;
  return record.reward + cfg.gamma * qValues(model, targetParams, record.nextState)(*record.nextAction);
}

NStepWindow summarizeWindow(std::span<const data::TransitionRecord> window, int n, double gamma) {
  if (window.empty()) throw WindowNotContiguous("empty n-step window");
  if (n < 1) throw std::invalid_argument("n-step horizon must be at least 1");
  NStepWindow out;
  const std::size_t limit = std::min(window.size(), static_cast<std::size_t>(n));
  double discount = 1.0;
  for (std::size_t k = 0; k < limit; ++k) {
    const auto& r = window[k];
    if (k > 0 && (r.episodeId != window[k - 1].episodeId || r.t != window[k - 1].t + 1)) {
      throw WindowNotContiguous("n-step window crosses an episode boundary or skips steps");
    }
    out.discountedRewards += discount * r.reward;
    discount *= gamma;
    out.steps = static_cast<int>(k) + 1;
    if (r.terminal) {
      out.reachedTerminal = true;
      return out;
    }
    if (k + 1 < limit && !r.nextAction) {
      throw WindowNotContiguous("n-step window continues past a truncated step");
    }
  }
  const auto& last = window[limit - 1];
  out.bootstrapState = &last.nextState;
  out.bootstrapAction = last.nextAction;
  return out;
}

Target nStepTarget(std::span<const data::TransitionRecord> window, const QModel& model,
                   const nn::MlpParams& targetParams, const nn::MlpParams& onlineParams,
                   const LossConfig& cfg, BootstrapKind kind) {
  const NStepWindow w = summarizeWindow(window, cfg.nStep, cfg.gamma);
  if (w.reachedTerminal) return w.discountedRewards;
  const double discount = std::pow(cfg.gamma, w.steps);
  if (kind == BootstrapKind::kQLearning) {
    return w.discountedRewards +
           discount * qLearningBootstrap(model, targetParams, onlineParams, *w.bootstrapState,
                                         cfg.doubleDqn);
  }
  if (!w.bootstrapAction) return std::nullopt;
  return w.discountedRewards +
         discount * qValues(model, targetParams, *w.bootstrapState)(*w.bootstrapAction);
}

// ------------------------------------------------------------ batches

std::vector<RecordRef> recordRefs(const data::Dataset& dataset) {
  std::vector<RecordRef> refs;
  for (const auto& episode : dataset.episodes) {
    const double ret = data::episodicReturn(episode);
    for (std::size_t t = 0; t < episode.size(); ++t) {
      refs.push_back({&episode, static_cast<int>(t), ret});
    }
  }
  return refs;
}

Minibatch makeMinibatch(std::vector<RecordRef> records, const LossConfig& cfg) {
  Minibatch mb;
  mb.records = std::move(records);
  const auto size = static_cast<Eigen::Index>(mb.records.size());
  if (size == 0) return mb;
  const auto dim = static_cast<Eigen::Index>(mb.records.front().record().state.size());
  mb.states.resize(dim, size);
  mb.bootstrapStates = Eigen::MatrixXd::Zero(dim, size);
  mb.returnToGo.resize(size);
  mb.episodeReturn.resize(size);
  mb.windowRewards.resize(size);
  mb.bootstrapDiscount.resize(size);
  mb.actions.resize(static_cast<std::size_t>(size));
  mb.bootstrapActions.resize(static_cast<std::size_t>(size));
  mb.reachedTerminal.resize(static_cast<std::size_t>(size));
  double rtgSum = 0.0;
  for (Eigen::Index b = 0; b < size; ++b) {
    const RecordRef& ref = mb.records[static_cast<std::size_t>(b)];
    const auto& rec = ref.record();
    if (static_cast<Eigen::Index>(rec.state.size()) != dim) {
      throw ShapeMismatch("minibatch records have different feature widths");
    }
    mb.states.col(b) = column(rec.state);
    mb.actions[b] = rec.action;
    mb.returnToGo(b) = rec.returnToGo;
    mb.episodeReturn(b) = ref.episodeReturn;
    rtgSum += rec.returnToGo;

    const auto window = std::span<const data::TransitionRecord>(*ref.episode).subspan(
        static_cast<std::size_t>(ref.t));
    const NStepWindow w = summarizeWindow(window, cfg.nStep, cfg.gamma);
    mb.windowRewards(b) = w.discountedRewards;
    mb.reachedTerminal[b] = w.reachedTerminal;
    mb.bootstrapDiscount(b) = w.reachedTerminal ? 0.0 : std::pow(cfg.gamma, w.steps);
    if (w.bootstrapState) mb.bootstrapStates.col(b) = column(*w.bootstrapState);
    mb.bootstrapActions[b] = w.bootstrapAction;
  }
  mb.batchMeanReturnToGo = rtgSum / static_cast<double>(size);
  return mb;
}

Minibatch makeMinibatch(const data::Episode& episode, const LossConfig& cfg) {
  const double ret = data::episodicReturn(episode);
  std::vector<RecordRef> refs;
  for (std::size_t t = 0; t < episode.size(); ++t) refs.push_back({&episode, static_cast<int>(t), ret});
  return makeMinibatch(std::move(refs), cfg);
}

// ------------------------------------------------------------ losses

double successWeight(double returnToGo, double batchMeanReturnToGo, const LossConfig& cfg) {
  const double w = std::exp((returnToGo - batchMeanReturnToGo) / cfg.betaTemp);
  return std::clamp(w, 0.0, cfg.maxSuccessWeight);
}

double hingeSum(std::span<const double> q, int action, double margin) {
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (static_cast<int>(i) == action) continue;
    const double h = q[i] - q[static_cast<std::size_t>(action)] + margin;
    if (h > 0.0) sum += h * h;
  }
  return sum;
}

double rankingLoss(const QModel& model, const nn::MlpParams& params,
                   const data::TransitionRecord& record, double batchMeanReturnToGo,
                   const LossConfig& cfg) {
  const Eigen::VectorXd q = qValues(model, params, record.state);
  return successWeight(record.returnToGo, batchMeanReturnToGo, cfg) *
         hingeSum({q.data(), static_cast<std::size_t>(q.size())}, record.action, cfg.marginNu);
}

LossResult tdLoss(const QModel& model, const nn::MlpParams& params,
                  const nn::MlpParams& targetParams, const Minibatch& batch, const LossConfig& cfg,
                  Mode mode) {
  if (!isTemporalDifference(mode)) {
    throw std::invalid_argument("tdLoss called with non-TD mode " + std::string(modeName(mode)));
  }
  const int size = batch.size();
  if (size == 0) throw EmptyEffectiveBatch("empty minibatch");
  const int numActions = model.numActions();
  const QPass pass = model.forward(params, batch.states);
  const Eigen::MatrixXd& q = pass.values;
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(numActions, size);

  const bool qlearning = isQLearning(mode);
  const bool doubleDqn = qlearning && useDouble(mode, cfg);
  const Eigen::MatrixXd qTarget = model.values(targetParams, batch.bootstrapStates);
  Eigen::MatrixXd qOnlineNext;
  if (doubleDqn) qOnlineNext = model.values(params, batch.bootstrapStates);

  std::vector<double> delta(static_cast<std::size_t>(size), 0.0);
  std::vector<bool> used(static_cast<std::size_t>(size), false);
  int effective = 0;
  for (int b = 0; b < size; ++b) {
    double y = batch.windowRewards(b);
    if (!batch.reachedTerminal[b]) {
      double boot = 0.0;
      if (qlearning) {
        boot = doubleDqn ? qTarget(argmaxAction(qOnlineNext.col(b)), b) : qTarget.col(b).maxCoeff();
      } else {
        const auto& next = batch.bootstrapActions[b];
        if (!next) continue;
        boot = qTarget(*next, b);
      }
      y += batch.bootstrapDiscount(b) * boot;
    }
    delta[b] = q(batch.actions[b], b) - y;
    used[b] = true;
    ++effective;
  }
  if (effective == 0) throw EmptyEffectiveBatch("every record in the minibatch was skipped");

  LossResult out;
  out.effectiveBatch = effective;
  for (int b = 0; b < size; ++b) {
    if (!used[b]) continue;
    out.breakdown.tdLoss += delta[b] * delta[b];
    dq(batch.actions[b], b) += 2.0 * delta[b] / effective;
  }
  out.breakdown.tdLoss /= effective;

  if (usesRanking(mode)) {
    const double scale = cfg.lambdaRank * 2.0 / size;
    double rank = 0.0;
    for (int b = 0; b < size; ++b) {
      const int a = batch.actions[b];
      const double w = successWeight(batch.returnToGo(b), batch.batchMeanReturnToGo, cfg);
      for (int i = 0; i < numActions; ++i) {
        if (i == a) continue;
        const double h = q(i, b) - q(a, b) + cfg.marginNu;
        if (h <= 0.0) continue;
        rank += w * h * h;
        if (cfg.lambdaRank != 0.0) {
          dq(i, b) += scale * w * h;
          dq(a, b) -= scale * w * h;
        }
      }
    }
    out.breakdown.rankLoss = rank / size;
  }

  if (mode == Mode::kCql && cfg.cqlAlpha > 0.0) {
    double aux = 0.0;
    for (int b = 0; b < size; ++b) {
      const double lse = logSumExp(q.col(b));
      aux += lse - q(batch.actions[b], b);
      const Eigen::VectorXd soft = (q.col(b).array() - lse).exp();
      dq.col(b) += cfg.cqlAlpha / size * soft;
      dq(batch.actions[b], b) -= cfg.cqlAlpha / size;
    }
    out.breakdown.auxLoss = cfg.cqlAlpha * aux / size;
  }

  out.breakdown.total =
      out.breakdown.tdLoss + cfg.lambdaRank * out.breakdown.rankLoss + out.breakdown.auxLoss;
  out.grads = model.backward(params, pass, dq);
  return out;
}

LossResult bcLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch,
                  bool filtered, double thresholdMeanReturn) {
  const int size = batch.size();
  int effective = 0;
  for (int b = 0; b < size; ++b) {
    if (!filtered || batch.episodeReturn(b) >= thresholdMeanReturn) ++effective;
  }
  if (effective == 0) throw EmptyEffectiveBatch("no records pass the behaviour-cloning filter");
  const QPass pass = model.forward(params, batch.states);
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(model.numActions(), size);
  LossResult out;
  out.effectiveBatch = effective;
  for (int b = 0; b < size; ++b) {
    if (filtered && batch.episodeReturn(b) < thresholdMeanReturn) continue;
    const auto logits = pass.values.col(b);
    const double lse = logSumExp(logits);
    out.breakdown.auxLoss += lse - logits(batch.actions[b]);
    dq.col(b) = (logits.array() - lse).exp() / effective;
    dq(batch.actions[b], b) -= 1.0 / effective;
  }
  out.breakdown.auxLoss /= effective;
  out.breakdown.total = out.breakdown.auxLoss;
  out.grads = model.backward(params, pass, dq);
  return out;
}

LossResult mcLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch) {
  const int size = batch.size();
  if (size == 0) throw EmptyEffectiveBatch("empty minibatch");
  const QPass pass = model.forward(params, batch.states);
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(model.numActions(), size);
  LossResult out;
  out.effectiveBatch = size;
  for (int b = 0; b < size; ++b) {
    const double delta = pass.values(batch.actions[b], b) - batch.returnToGo(b);
    out.breakdown.tdLoss += delta * delta;
    dq(batch.actions[b], b) = 2.0 * delta / size;
  }
  out.breakdown.tdLoss /= size;
  out.breakdown.total = out.breakdown.tdLoss;
  out.grads = model.backward(params, pass, dq);
  return out;
}

double cqlLoss(const QModel& model, const nn::MlpParams& params, const Minibatch& batch,
               const LossConfig& cfg) {
  if (!(cfg.cqlAlpha > 0.0)) throw std::invalid_argument("cqlLoss needs cqlAlpha > 0");
  const Eigen::MatrixXd q = model.values(params, batch.states);
  double total = 0.0;
  for (int b = 0; b < batch.size(); ++b) total += logSumExp(q.col(b)) - q(batch.actions[b], b);
  return cfg.cqlAlpha * total / batch.size();
}

// ------------------------------------------------------------ training

TrainResult trainLoop(const data::Dataset& dataset, const TrainConfig& config) {
  const auto& spec = dataset.header.envSpec;
  TrainResult result;
  result.model = config.model ? config.model
                              : std::make_shared<StateInputQ>(spec.observationDim, spec.numActions);
  const QModel& model = *result.model;
  if (model.stateWidth() != spec.observationDim || model.numActions() != spec.numActions) {
    throw ShapeMismatch("dataset shape does not match the Q model");
  }
  if (config.batchSize <= 0 && config.sampling != Sampling::kFullBatch) {
    throw std::invalid_argument("batch size must be positive");
  }
  if (config.targetUpdatePeriod <= 0) throw std::invalid_argument("target period must be positive");

  Rng initRng(deriveSeed(config.seed, 1));
  Rng sampleRng(deriveSeed(config.seed, 2));
  nn::MlpParams params =
      config.initialParams
          ? *config.initialParams
          : nn::makeMlp(model.networkInputWidth(), config.hiddenWidths, model.networkOutputWidth(),
                        initRng);
  if (params.inputWidth() != model.networkInputWidth() ||
      params.outputWidth() != model.networkOutputWidth()) {
    throw ShapeMismatch("initial parameters do not fit the Q model");
  }
  const nn::TrainableMask* mask = config.trainable ? &*config.trainable : nullptr;

  const std::vector<RecordRef> refs = recordRefs(dataset);
  if (refs.empty()) throw EmptyEffectiveBatch("dataset has no transitions");
  const double meanReturn = data::meanEpisodicReturn(dataset);

  // Fixed probe states for the action-gap column.
  const std::size_t probes = std::min<std::size_t>(refs.size(), 256);
  Eigen::MatrixXd probeStates(spec.observationDim, static_cast<Eigen::Index>(probes));
  for (std::size_t i = 0; i < probes; ++i) {
    const auto& s = refs[i * refs.size() / probes].record().state;
    probeStates.col(static_cast<Eigen::Index>(i)) = column(s);
  }

  nn::MlpParams target = nn::snapshot(params);
  nn::AdamState adam = nn::AdamState::init(params, config.learningRate);
  if (config.onStep) config.onStep(0, params);

  std::vector<RecordRef> picks;
  for (int step = 0; step < config.steps; ++step) {
    if (step % config.targetUpdatePeriod == 0) target = nn::snapshot(params);

    picks.clear();
    switch (config.sampling) {
      case Sampling::kFullBatch:
        picks = refs;
        break;
      case Sampling::kCyclic:
        for (int i = 0; i < config.batchSize; ++i) {
          picks.push_back(refs[(static_cast<std::size_t>(step) * config.batchSize + i) % refs.size()]);
        }
        break;
      case Sampling::kUniform:
        for (int i = 0; i < config.batchSize; ++i) {
          picks.push_back(refs[static_cast<std::size_t>(uniformInt(sampleRng, static_cast<int>(refs.size())))]);
        }
        break;
    }
    const Minibatch batch = makeMinibatch(picks, config.loss);

    LossResult loss;
    bool haveUpdate = true;
    try {
      switch (config.mode) {
        case Mode::kBc:
          loss = bcLoss(model, params, batch, false, meanReturn);
          break;
        case Mode::kFilteredBc:
          loss = bcLoss(model, params, batch, true, meanReturn);
          break;
        case Mode::kMc:
          loss = mcLoss(model, params, batch);
          break;
        default:
          loss = tdLoss(model, params, target, batch, config.loss, config.mode);
          break;
      }
    } catch (const EmptyEffectiveBatch&) {
      if (config.sampling == Sampling::kFullBatch) throw;
      haveUpdate = false;
    }

    if (haveUpdate) {
      try {
        if (config.optimizer == Optimizer::kAdam) {
          nn::adamStep(params, adam, loss.grads, mask);
        } else {
          nn::sgdStep(params, loss.grads, config.learningRate, mask);
        }
        if (params.maxAbs() > config.divergenceThreshold) {
          throw DivergenceDetected("parameter magnitude " + std::to_string(params.maxAbs()) +
                                   " exceeds " + std::to_string(config.divergenceThreshold));
        }
      } catch (const DivergenceDetected& e) {
        result.diverged = true;
        result.divergedAtStep = step + 1;
        result.divergenceMessage = e.what();
      }
    }
    result.stepsCompleted = step + 1;
    if (config.onStep) config.onStep(step + 1, params);

    const bool emit = result.diverged || (step + 1) == config.steps ||
                      (config.metricsEvery > 0 && (step + 1) % config.metricsEvery == 0);
    if (emit) {
      TrainMetricsRow row;
      row.step = step + 1;
      row.mode = std::string(modeName(config.mode));
      row.seed = config.seed;
      row.loss = loss.breakdown;
      row.paramNormMax = params.maxAbs();
      row.actionGap = params.allFinite() ? meanActionGap(model.values(params, probeStates))
                                         : std::numeric_limits<double>::quiet_NaN();
      result.metrics.push_back(std::move(row));
    }
    if (result.diverged) break;
  }
  result.params = std::move(params);
  return result;
}

// ------------------------------------------------------------ online DQN

OnlineDqnBehavior::OnlineDqnBehavior(int stateWidth, int numActions, OnlineDqnConfig config,
                                     std::uint64_t seed)
    : cfg_(std::move(config)), model_(stateWidth, numActions), rng_(deriveSeed(seed, 7)) {
  Rng init(deriveSeed(seed, 8));
  params_ = nn::makeMlp(stateWidth, cfg_.hiddenWidths, numActions, init);
  target_ = params_;
  adam_ = nn::AdamState::init(params_, cfg_.learningRate);
}

double OnlineDqnBehavior::currentEpsilon() const {
  if (envSteps_ >= cfg_.epsilonDecaySteps) return cfg_.epsilonEnd;
  const double frac = static_cast<double>(envSteps_) / cfg_.epsilonDecaySteps;
  return cfg_.epsilonStart + frac * (cfg_.epsilonEnd - cfg_.epsilonStart);
}

int OnlineDqnBehavior::act(const data::Observation& state, Rng& rng) {
  const double u = uniform01(rng);
  const int random = uniformInt(rng, model_.numActions());
  if (u < currentEpsilon()) return random;
  return argmaxAction(qValues(model_, params_, state));
}

void OnlineDqnBehavior::observe(const data::Observation& state, int executedAction, double reward,
                                const data::Observation& nextState, bool terminal) {
  Stored s{state, executedAction, reward, nextState, terminal};
  if (replay_.size() < static_cast<std::size_t>(cfg_.replayCapacity)) {
    replay_.push_back(std::move(s));
  } else {
    replay_[replayNext_] = std::move(s);
    replayNext_ = (replayNext_ + 1) % replay_.size();
  }
  ++envSteps_;
  if (replay_.size() >= static_cast<std::size_t>(cfg_.minReplay)) learn();
}

void OnlineDqnBehavior::learn() {
  const int batch = cfg_.batchSize;
  const auto dim = static_cast<Eigen::Index>(replay_.front().state.size());
  Eigen::MatrixXd states(dim, batch);
  Eigen::MatrixXd next(dim, batch);
  std::vector<const Stored*> picks(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    picks[b] = &replay_[static_cast<std::size_t>(uniformInt(rng_, static_cast<int>(replay_.size())))];
    states.col(b) = column(picks[b]->state);
    next.col(b) = column(picks[b]->nextState);
  }
  const QPass pass = model_.forward(params_, states);
  const Eigen::MatrixXd qNext = model_.values(target_, next);
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(model_.numActions(), batch);
  for (int b = 0; b < batch; ++b) {
    const Stored& s = *picks[b];
    const double y = s.terminal ? s.reward : s.reward + cfg_.gamma * qNext.col(b).maxCoeff();
    dq(s.action, b) = 2.0 * (pass.values(s.action, b) - y) / batch;
  }
  nn::adamStep(params_, adam_, model_.backward(params_, pass, dq));
  if (adam_.stepCount % cfg_.targetUpdatePeriod == 0) target_ = params_;
}

}  // namespace bvelab::agents
