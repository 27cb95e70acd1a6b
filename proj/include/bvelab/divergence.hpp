#pragma once

#include <array>
#include <optional>
#include <vector>

#include "bvelab/agents.hpp"
#include "bvelab/datastore.hpp"
#include "bvelab/neuralnet.hpp"

namespace bvelab::divergence {

// Trainable output weights of the toy network
//   Q(s, a) = w relu(s) + u1 relu(a[0] - 2s) + u2 relu(a[1] - 2s) + u3 relu(-2s - a[2]).
struct ToyQParams {
  double w = 1.0;
  double u1 = 0.0;
  double u2 = 0.0;
  double u3 = 0.0;
};

struct ToyConfig {
  double gamma = 0.99;
  double betaFeature = 2.0;  // feature of s3
  double learningRate = 0.1;
  double initialW = 1.0;

  // Q-learning on the toy dataset escapes to infinity exactly when this holds.
  bool divergenceConditionHolds() const { return gamma * betaFeature > 1.0; }
};

using OneHot = std::array<double, 3>;

// a_i[i] = 1.
OneHot actionVector(int action);

double toyForward(const ToyQParams& p, double stateFeature, const OneHot& action);

struct ToyGradients {
  double u1 = 0.0;
  double u2 = 0.0;
  double u3 = 0.0;
  double w = 0.0;
};

// Batch gradients of the half sum of squared TD errors on the three toy
// transitions with theta' = theta, valid for w > 0:
// (u1 - 1, u2 - gamma w, 0, (1 - gamma beta) w).
ToyGradients analyticGradients(const ToyQParams& p, const ToyConfig& cfg);

enum class Objective { kQLearning, kBehaviorValue };

struct GradientDescentRun {
  std::vector<ToyQParams> trajectory;  // trajectory[t] after t updates
  std::optional<int> divergedAtStep;   // first t with |w| > threshold
  bool bounded() const { return !divergedAtStep.has_value(); }
};

// Iterates the closed-form update. For kBehaviorValue the w transition is
// dropped (its logged episode is truncated) and u2 regresses on gamma w.
GradientDescentRun runGradientDescent(const ToyConfig& cfg, int steps,
                                      Objective objective = Objective::kQLearning,
                                      double threshold = 1e6);

// The three logged transitions {(s1,a0,1,s4), (s1,a1,0,s2), (s2,a2,0,s3)} as
// two episodes; the second ends truncated at s3.
data::Dataset toyDataset(double betaFeature);

// Toy network as a generic MLP over [s, a[0], a[1], a[2]] with the constant
// first layer (1 | -2, 1 | -2, 1 | -2, -1 pattern).
nn::MlpParams toyNetwork(const ToyQParams& p);
// Throws ArchitectureMismatch if the network is not the toy architecture.
ToyQParams readToyParams(const nn::MlpParams& params);
// Only the output weights train.
nn::TrainableMask toyTrainableMask();

struct ToyTrainOptions {
  agents::Mode mode = agents::Mode::kDqn;
  agents::Optimizer optimizer = agents::Optimizer::kSgd;
  agents::Sampling sampling = agents::Sampling::kFullBatch;
  int batchSize = 3;
  std::uint64_t seed = 1;
  double divergenceThreshold = 1e6;
};

// Generic trainLoop configured for the toy: state-action Q model, frozen
// first layer, target refreshed every step. Plain SGD uses learning rate
// alpha * n / 2 so that the mean-squared loss over n effective records
// follows the same path as the half-sum loss of the closed form.
agents::TrainConfig toyTrainConfig(const ToyConfig& cfg, int steps, const ToyTrainOptions& options);

struct ToyTrainRun {
  agents::TrainResult result;
  std::vector<ToyQParams> trajectory;  // trajectory[t] after t updates
};

ToyTrainRun trainToy(const ToyConfig& cfg, int steps, const ToyTrainOptions& options = {});

struct CrossCheckReport {
  double maxRelativeDiscrepancy = 0.0;
  int stepsCompared = 0;
  GradientDescentRun analytic;
  ToyTrainRun generic;
};

// Runs the closed form and the generic loop side by side (full-batch GD)
// and reports the largest relative difference in (w, u1, u2) over steps
// where both are finite. mode must be kDqn or kBve.
CrossCheckReport crossCheckWithNeuralnet(const ToyConfig& cfg, int steps,
                                         agents::Mode mode = agents::Mode::kDqn);

}  // namespace bvelab::divergence
