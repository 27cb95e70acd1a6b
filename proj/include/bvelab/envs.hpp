#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bvelab/rng.hpp"

namespace bvelab::envs {

using Observation = std::vector<double>;

struct EnvSpec {
  std::string name;
  int observationDim = 0;
  int numActions = 0;
  int maxEpisodeLength = 0;

  bool operator==(const EnvSpec&) const = default;
};

struct StepResult {
  Observation nextObservation;
  double reward = 0.0;
  bool terminal = false;
  // Episode hit maxEpisodeLength without reaching a terminal state.
  bool truncated = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Observation reset(std::uint64_t seed) = 0;
  // Throws ActionOutOfRange, or SteppedTerminalEnv once the episode ended.
  virtual StepResult step(int action) = 0;
  // Action the dynamics actually applied on the most recent step.
  virtual int lastExecutedAction() const = 0;
  virtual bool episodeOver() const = 0;
  virtual int stepCount() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

// Shared bookkeeping for the concrete environments: range checks, step
// counter, terminal latch and time-limit truncation.
class EpisodicEnvironment : public Environment {
 public:
  const EnvSpec& spec() const override { return spec_; }
  Observation reset(std::uint64_t seed) final;
  StepResult step(int action) final;
  int lastExecutedAction() const override { return lastAction_; }
  bool episodeOver() const override { return over_; }
  int stepCount() const override { return steps_; }

 protected:
  explicit EpisodicEnvironment(EnvSpec spec) : spec_(std::move(spec)) {}

  struct Transition {
    double reward = 0.0;
    bool terminal = false;
  };
  virtual void resetState(Rng& rng) = 0;
  virtual Transition advance(int action, Rng& rng) = 0;
  virtual Observation observe() const = 0;

  Rng rng_{0};

 private:
  EnvSpec spec_;
  int steps_ = 0;
  int lastAction_ = -1;
  bool over_ = true;
};

// Corridor of n states. Start leftmost; action 0 moves left (clamped), action
// 1 moves right. Either action taken in the rightmost state pays 1 and ends
// the episode. Features are one-hot of length n.
class ChainEnv : public EpisodicEnvironment {
 public:
  static constexpr int kLeft = 0;
  static constexpr int kRight = 1;

  explicit ChainEnv(int n, int maxEpisodeLength = 1000);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<ChainEnv>(*this);
  }
  int position() const { return pos_; }
  int length() const { return n_; }

 protected:
  void resetState(Rng&) override { pos_ = 0; }
  Transition advance(int action, Rng&) override;
  Observation observe() const override;

 private:
  int n_;
  int pos_ = 0;
};

// bsuite-style Catch: a ball drops one row per step from a random column of
// the top row; the paddle on the bottom row moves left/stay/right. Reaching
// the bottom row ends the episode with +1 if caught and -1 otherwise.
class CatchEnv : public EpisodicEnvironment {
 public:
  explicit CatchEnv(int rows = 10, int columns = 5);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<CatchEnv>(*this);
  }
  int ballRow() const { return ballRow_; }
  int ballColumn() const { return ballCol_; }
  int paddleColumn() const { return paddleCol_; }

 protected:
  void resetState(Rng& rng) override;
  Transition advance(int action, Rng&) override;
  Observation observe() const override;

 private:
  int rows_;
  int cols_;
  int ballRow_ = 0;
  int ballCol_ = 0;
  int paddleCol_ = 0;
};

// Four-state MDP with scalar features 0, 1, beta (and -1 for the absorbing
// state). From s1: a0 -> s4 paying 1, a1 -> s2, a2 -> s3. From s2 every
// action leads to s3, from s3 every action ends the episode. All other
// rewards are 0.
class DivergenceEnv : public EpisodicEnvironment {
 public:
  enum State { kS1 = 0, kS2 = 1, kS3 = 2, kS4 = 3 };

  explicit DivergenceEnv(double beta = 2.0);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<DivergenceEnv>(*this);
  }
  static int nextState(int state, int action);
  static double reward(int state, int action);
  double feature(int state) const;
  int state() const { return state_; }

 protected:
  void resetState(Rng&) override { state_ = kS1; }
  Transition advance(int action, Rng&) override;
  Observation observe() const override { return {feature(state_)}; }

 private:
  double beta_;
  int state_ = kS1;
};

// Rectangular grid with walls, terminal cells and per-cell entry rewards.
struct GridLayout {
  enum class Cell { kFree, kWall, kTerminal };
  static constexpr int kUp = 0, kRight = 1, kDown = 2, kLeft = 3;

  int rows = 0;
  int cols = 0;
  std::vector<Cell> cells;        // row-major
  std::vector<double> entryReward;  // reward for moving into the cell
  double stepReward = 0.0;        // added to every move
  int start = 0;

  // Parses rows of characters: '.' free, '#' wall, 'S' start, 'G' terminal
  // goal, 'X' terminal pit, 'n' free with negative reward. Rewards for G, X,
  // n are given by the arguments.
  static GridLayout parse(const std::vector<std::string>& rows, double goalReward,
                          double pitReward, double negativeReward, double stepReward);

  int numCells() const { return rows * cols; }
  bool isTerminal(int cell) const { return cells[cell] == Cell::kTerminal; }
  bool isWall(int cell) const { return cells[cell] == Cell::kWall; }
  // Deterministic move; bumping into a wall or the border stays put.
  int move(int cell, int action) const;
  double reward(int cell, int action) const { return entryReward[move(cell, action)] + stepReward; }
};

// High-reward goal far from the start with a short route lined by
// negative-reward cells.
GridLayout shippedGrid();

class GridWorldEnv : public EpisodicEnvironment {
 public:
  explicit GridWorldEnv(GridLayout layout, int maxEpisodeLength = 200);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<GridWorldEnv>(*this);
  }
  const GridLayout& layout() const { return layout_; }
  int cell() const { return cell_; }

 protected:
  void resetState(Rng&) override { cell_ = layout_.start; }
  Transition advance(int action, Rng&) override;
  Observation observe() const override;

 private:
  GridLayout layout_;
  int cell_ = 0;
};

// Classic cart-pole balancing, two actions (push left/right), +1 per step.
class CartpoleEnv : public EpisodicEnvironment {
 public:
  explicit CartpoleEnv(int maxEpisodeLength = 1000);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<CartpoleEnv>(*this);
  }

 protected:
  void resetState(Rng& rng) override;
  Transition advance(int action, Rng&) override;
  Observation observe() const override { return {x_, xDot_, theta_, thetaDot_}; }

 private:
  double x_ = 0, xDot_ = 0, theta_ = 0, thetaDot_ = 0;
};

// Classic mountain car, three actions (push left/none/right), -1 per step.
class MountainCarEnv : public EpisodicEnvironment {
 public:
  explicit MountainCarEnv(int maxEpisodeLength = 1000);
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<MountainCarEnv>(*this);
  }

 protected:
  void resetState(Rng& rng) override;
  Transition advance(int action, Rng&) override;
  Observation observe() const override { return {position_, velocity_}; }

 private:
  double position_ = 0, velocity_ = 0;
};

// Replaces the requested action with a uniformly drawn one with probability
// epsilon before forwarding it to the wrapped environment.
class ActionNoiseWrapper : public Environment {
 public:
  ActionNoiseWrapper(std::unique_ptr<Environment> base, double epsilon, std::uint64_t seed);
  ActionNoiseWrapper(const ActionNoiseWrapper& other);

  const EnvSpec& spec() const override { return base_->spec(); }
  Observation reset(std::uint64_t seed) override { return base_->reset(seed); }
  StepResult step(int action) override;
  int lastExecutedAction() const override { return base_->lastExecutedAction(); }
  bool episodeOver() const override { return base_->episodeOver(); }
  int stepCount() const override { return base_->stepCount(); }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<ActionNoiseWrapper>(*this);
  }

  double epsilon() const { return epsilon_; }
  long long substitutions() const { return substitutions_; }
  long long forwardedSteps() const { return forwarded_; }

 private:
  std::unique_ptr<Environment> base_;
  double epsilon_;
  Rng rng_;
  long long substitutions_ = 0;
  long long forwarded_ = 0;
};

std::unique_ptr<Environment> wrapActionNoise(std::unique_ptr<Environment> env, double epsilon,
                                             std::uint64_t seed);

// Builds a shipped environment by name: "catch", "chain" (n=5 unless
// "chain:<n>"), "divergence", "grid", "cartpole", "mountain_car".
std::unique_ptr<Environment> makeEnvironment(const std::string& name);

}  // namespace bvelab::envs
