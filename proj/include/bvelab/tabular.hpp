#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bvelab/envs.hpp"

namespace bvelab::tabular {

// Finite MDP with dense transition tensor P[s][a][s'] and rewards r[s][a].
// Terminal states are absorbing with zero reward.
struct TabularMDP {
  int numStates = 0;
  int numActions = 0;
  std::vector<double> transitions;  // (s * numActions + a) * numStates + s'
  Eigen::MatrixXd rewards;          // numStates x numActions
  std::vector<bool> terminalMask;
  double gamma = 0.99;
  Eigen::VectorXd initialDistribution;
  std::vector<std::string> stateNames;  // optional labels

  static TabularMDP empty(int numStates, int numActions, double gamma);

  double& p(int s, int a, int next) {
    return transitions[(static_cast<std::size_t>(s) * numActions + a) * numStates + next];
  }
  double p(int s, int a, int next) const {
    return transitions[(static_cast<std::size_t>(s) * numActions + a) * numStates + next];
  }
  // Successor of a deterministic (s, a); -1 if the row is not a point mass.
  int deterministicNext(int s, int a) const;
  int startState() const;

  // Throws std::invalid_argument on rows not summing to one or terminal
  // states that are not reward-free self-loops.
  void validate() const;
};

struct TabularPolicy {
  Eigen::MatrixXd probs;  // numStates x numActions

  static TabularPolicy uniform(int numStates, int numActions);
  static TabularPolicy deterministic(const std::vector<int>& actions, int numActions);
  int action(int s) const;  // most probable action, lowest index on ties
};

struct ValueTables {
  Eigen::VectorXd v;
  Eigen::MatrixXd q;  // numStates x numActions
};

// Exact (I - gamma P_pi) V = r_pi solve with terminal states pinned to 0.
// Throws SingularSystem when gamma = 1 and some non-terminal recurrent class
// never ends.
ValueTables evaluatePolicy(const TabularMDP& mdp, const TabularPolicy& policy);
// Q from V: r + gamma * P V, zero at terminal states.
Eigen::MatrixXd qFromV(const TabularMDP& mdp, const Eigen::VectorXd& v);

// argmax_a Q[s][a], lowest index on ties.
TabularPolicy greedyImprove(const ValueTables& values);

struct ValueIterationResult {
  ValueTables values;
  int iterations = 0;
  double residual = 0.0;
};

// Sup-norm value iteration until the Bellman residual drops below tolerance.
// Throws NonConvergence after maxIterations.
ValueIterationResult valueIteration(const TabularMDP& mdp, double tolerance,
                                    int maxIterations = 1000000);

struct TwoOutcomePremise {
  bool deterministic = false;
  bool finiteHorizon = false;
  bool behaviorReachesHigh = false;
  std::vector<int> witnessStates;  // states from which some trajectory earns H
  bool holds() const { return deterministic && finiteHorizon && behaviorReachesHigh; }
};

// Checks the two-outcome structure (zero reward on non-terminating
// transitions, reward in {low, high} on terminating ones, deterministic
// dynamics) and whether the behaviour policy reaches a high outcome with
// positive probability from every witness state. Throws StructureViolation
// when the structure does not hold.
TwoOutcomePremise checkTwoOutcomePremise(const TabularMDP& mdp, const TabularPolicy& behavior,
                                 double rewardLow, double rewardHigh);

// Follows a deterministic policy through deterministic dynamics from `start`
// and returns the undiscounted return, or nullopt if no terminal state is
// reached within maxSteps.
std::optional<double> deterministicRollout(const TabularMDP& mdp, const TabularPolicy& policy,
                                           int start, int maxSteps);

// ---------------------------------------------------------------- builders

enum class ChainEnding {
  // The rightmost state pays 1 for both actions; RIGHT stays, LEFT moves left.
  kContinuing,
  // Either action in the rightmost state pays 1 and ends the episode (the
  // dynamics of envs::ChainEnv).
  kTerminating,
};

TabularMDP chainMdp(int n, double gamma, ChainEnding ending);
TabularMDP gridMdp(const envs::GridLayout& layout, double gamma);
TabularMDP divergenceMdp(double gamma);

// JSON description: {"numStates", "numActions", "gamma", "start" or
// "initialDistribution", "terminal": [..], "rewards": [[..]..],
// "transitions": [{"s", "a", "next", "p"}, ..], optional "stateNames"}.
TabularMDP parseMdpJson(const std::string& text);
TabularMDP loadMdpJson(const std::filesystem::path& path);

}  // namespace bvelab::tabular
