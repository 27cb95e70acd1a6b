#include "bvelab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bvelab/errors.hpp"

namespace bvelab::envs {

Observation EpisodicEnvironment::reset(std::uint64_t seed) {
  rng_.seed(seed);
  steps_ = 0;
  lastAction_ = -1;
  over_ = false;
  resetState(rng_);
  return observe();
}

StepResult EpisodicEnvironment::step(int action) {
  if (over_) throw SteppedTerminalEnv(spec_.name + ": step after episode end");
  if (action < 0 || action >= spec_.numActions) {
    throw ActionOutOfRange(spec_.name + ": action " + std::to_string(action) + " not in [0, " +
                           std::to_string(spec_.numActions) + ")");
  }
  Transition tr = advance(action, rng_);
  ++steps_;
  lastAction_ = action;
  StepResult out;
  out.nextObservation = observe();
  out.reward = tr.reward;
  out.terminal = tr.terminal;
  out.truncated = !tr.terminal && steps_ >= spec_.maxEpisodeLength;
  over_ = out.terminal || out.truncated;
  return out;
}

// ---------------------------------------------------------------- chain

ChainEnv::ChainEnv(int n, int maxEpisodeLength)
    : EpisodicEnvironment({"chain:" + std::to_string(n), n, 2, maxEpisodeLength}), n_(n) {
  if (n < 2) throw std::invalid_argument("ChainEnv needs at least 2 states");
}

EpisodicEnvironment::Transition ChainEnv::advance(int action, Rng&) {
  if (pos_ == n_ - 1) return {1.0, true};
  pos_ = action == kRight ? pos_ + 1 : std::max(pos_ - 1, 0);
  return {0.0, false};
}

Observation ChainEnv::observe() const {
  Observation o(n_, 0.0);
  o[pos_] = 1.0;
  return o;
}

// ---------------------------------------------------------------- catch

CatchEnv::CatchEnv(int rows, int columns)
    : EpisodicEnvironment({"catch", rows * columns, 3, rows - 1}), rows_(rows), cols_(columns) {}

void CatchEnv::resetState(Rng& rng) {
  ballRow_ = 0;
  ballCol_ = uniformInt(rng, cols_);
  paddleCol_ = cols_ / 2;
}

EpisodicEnvironment::Transition CatchEnv::advance(int action, Rng&) {
  paddleCol_ = std::clamp(paddleCol_ + (action - 1), 0, cols_ - 1);
  ++ballRow_;
  if (ballRow_ == rows_ - 1) return {ballCol_ == paddleCol_ ? 1.0 : -1.0, true};
  return {0.0, false};
}

Observation CatchEnv::observe() const {
  Observation board(static_cast<std::size_t>(rows_ * cols_), 0.0);
  board[ballRow_ * cols_ + ballCol_] = 1.0;
  board[(rows_ - 1) * cols_ + paddleCol_] = 1.0;
  return board;
}

// ----------------------------------------------------------- divergence

DivergenceEnv::DivergenceEnv(double beta)
    : EpisodicEnvironment({"divergence", 1, 3, 3}), beta_(beta) {}

int DivergenceEnv::nextState(int state, int action) {
  switch (state) {
    case kS1:
      return action == 0 ? kS4 : (action == 1 ? kS2 : kS3);
    case kS2:
      return kS3;
    default:
      return kS4;
  }
}

double DivergenceEnv::reward(int state, int action) {
  return state == kS1 && action == 0 ? 1.0 : 0.0;
}

double DivergenceEnv::feature(int state) const {
  switch (state) {
    case kS1:
      return 0.0;
    case kS2:
      return 1.0;
    case kS3:
      return beta_;
    default:
      return -1.0;
  }
}

EpisodicEnvironment::Transition DivergenceEnv::advance(int action, Rng&) {
  const double r = reward(state_, action);
  state_ = nextState(state_, action);
  return {r, state_ == kS4};
}

// ----------------------------------------------------------------- grid

GridLayout GridLayout::parse(const std::vector<std::string>& rows, double goalReward,
                             double pitReward, double negativeReward, double stepReward) {
  GridLayout g;
  g.rows = static_cast<int>(rows.size());
  g.cols = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  g.stepReward = stepReward;
  bool sawStart = false;
  for (int r = 0; r < g.rows; ++r) {
    if (static_cast<int>(rows[r].size()) != g.cols) {
      throw std::invalid_argument("grid rows must have equal length");
    }
    for (int c = 0; c < g.cols; ++c) {
      Cell kind = Cell::kFree;
      double reward = 0.0;
      switch (rows[r][c]) {
        case '.':
          break;
        case '#':
          kind = Cell::kWall;
          break;
        case 'S':
          g.start = r * g.cols + c;
          sawStart = true;
          break;
        case 'G':
          kind = Cell::kTerminal;
          reward = goalReward;
          break;
        case 'X':
          kind = Cell::kTerminal;
          reward = pitReward;
          break;
        case 'n':
          reward = negativeReward;
          break;
        default:
          throw std::invalid_argument(std::string("unknown grid cell '") + rows[r][c] + "'");
      }
      g.cells.push_back(kind);
      g.entryReward.push_back(reward);
    }
  }
  if (!sawStart) throw std::invalid_argument("grid has no start cell");
  return g;
}

int GridLayout::move(int cell, int action) const {
  int r = cell / cols;
  int c = cell % cols;
  switch (action) {
    case kUp:
      --r;
      break;
    case kRight:
      ++c;
      break;
    case kDown:
      ++r;
      break;
    case kLeft:
      --c;
      break;
    default:
      throw ActionOutOfRange("grid action " + std::to_string(action));
  }
  if (r < 0 || r >= rows || c < 0 || c >= cols) return cell;
  const int next = r * cols + c;
  return isWall(next) ? cell : next;
}

GridLayout shippedGrid() {
  return GridLayout::parse(
      {
          "S..nnnnnG",
          "......#..",
          ".#.#####.",
          ".#.......",
          ".#X..X...",
          "........X",
      },
      50.0, -10.0, -4.0, 0.0);
}

GridWorldEnv::GridWorldEnv(GridLayout layout, int maxEpisodeLength)
    : EpisodicEnvironment({"grid", layout.numCells(), 4, maxEpisodeLength}),
      layout_(std::move(layout)) {}

EpisodicEnvironment::Transition GridWorldEnv::advance(int action, Rng&) {
  const double r = layout_.reward(cell_, action);
  cell_ = layout_.move(cell_, action);
  return {r, layout_.isTerminal(cell_)};
}

Observation GridWorldEnv::observe() const {
  Observation o(static_cast<std::size_t>(layout_.numCells()), 0.0);
  o[cell_] = 1.0;
  return o;
}

// ------------------------------------------------------------- cartpole

namespace {
constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kPoleHalfLength = 0.5;
constexpr double kForce = 10.0;
constexpr double kTau = 0.02;
constexpr double kThetaLimit = 12.0 * 2.0 * std::numbers::pi / 360.0;
constexpr double kXLimit = 2.4;
}  // namespace

CartpoleEnv::CartpoleEnv(int maxEpisodeLength)
    : EpisodicEnvironment({"cartpole", 4, 2, maxEpisodeLength}) {}

void CartpoleEnv::resetState(Rng& rng) {
  auto draw = [&rng] { return -0.05 + 0.1 * uniform01(rng); };
  x_ = draw();
  xDot_ = draw();
  theta_ = draw();
  thetaDot_ = draw();
}

EpisodicEnvironment::Transition CartpoleEnv::advance(int action, Rng&) {
  const double force = action == 1 ? kForce : -kForce;
  const double totalMass = kCartMass + kPoleMass;
  const double poleMassLength = kPoleMass * kPoleHalfLength;
  const double cosT = std::cos(theta_);
  const double sinT = std::sin(theta_);
  const double temp = (force + poleMassLength * thetaDot_ * thetaDot_ * sinT) / totalMass;
  const double thetaAcc =
      (kGravity * sinT - cosT * temp) /
      (kPoleHalfLength * (4.0 / 3.0 - kPoleMass * cosT * cosT / totalMass));
  const double xAcc = temp - poleMassLength * thetaAcc * cosT / totalMass;
  x_ += kTau * xDot_;
  xDot_ += kTau * xAcc;
  theta_ += kTau * thetaDot_;
  thetaDot_ += kTau * thetaAcc;
  const bool failed = x_ < -kXLimit || x_ > kXLimit || theta_ < -kThetaLimit || theta_ > kThetaLimit;
  return {1.0, failed};
}

// --------------------------------------------------------- mountain car

MountainCarEnv::MountainCarEnv(int maxEpisodeLength)
    : EpisodicEnvironment({"mountain_car", 2, 3, maxEpisodeLength}) {}

void MountainCarEnv::resetState(Rng& rng) {
  position_ = -0.6 + 0.2 * uniform01(rng);
  velocity_ = 0.0;
}

EpisodicEnvironment::Transition MountainCarEnv::advance(int action, Rng&) {
  velocity_ += (action - 1) * 0.001 - 0.0025 * std::cos(3.0 * position_);
  velocity_ = std::clamp(velocity_, -0.07, 0.07);
  position_ = std::clamp(position_ + velocity_, -1.2, 0.6);
  if (position_ == -1.2 && velocity_ < 0) velocity_ = 0.0;
  return {-1.0, position_ >= 0.5};
}

// ---------------------------------------------------------- noise wrap

ActionNoiseWrapper::ActionNoiseWrapper(std::unique_ptr<Environment> base, double epsilon,
                                       std::uint64_t seed)
    : base_(std::move(base)), epsilon_(epsilon), rng_(seed) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("action noise epsilon must lie in [0, 1]");
  }
}

ActionNoiseWrapper::ActionNoiseWrapper(const ActionNoiseWrapper& other)
    : base_(other.base_->clone()),
      epsilon_(other.epsilon_),
      rng_(other.rng_),
      substitutions_(other.substitutions_),
      forwarded_(other.forwarded_) {}

StepResult ActionNoiseWrapper::step(int action) {
  const int n = base_->spec().numActions;
  if (action < 0 || action >= n) {
    throw ActionOutOfRange("noise wrapper: action " + std::to_string(action));
  }
  // Both draws happen every step so the noise stream is independent of epsilon.
  const double u = uniform01(rng_);
  const int replacement = uniformInt(rng_, n);
  ++forwarded_;
  if (u < epsilon_) {
    ++substitutions_;
    action = replacement;
  }
  return base_->step(action);
}

std::unique_ptr<Environment> wrapActionNoise(std::unique_ptr<Environment> env, double epsilon,
                                             std::uint64_t seed) {
  return std::make_unique<ActionNoiseWrapper>(std::move(env), epsilon, seed);
}

std::unique_ptr<Environment> makeEnvironment(const std::string& name) {
  if (name == "catch") return std::make_unique<CatchEnv>();
  if (name == "chain") return std::make_unique<ChainEnv>(5);
  if (name.rfind("chain:", 0) == 0) {
    int n = 0;
    try {
      n = std::stoi(name.substr(6));
    } catch (const std::exception&) {
      throw ConfigError("bad chain length in '" + name + "'");
    }
    if (n < 2) throw ConfigError("chain needs at least 2 states");
    return std::make_unique<ChainEnv>(n);
  }
  if (name == "divergence") return std::make_unique<DivergenceEnv>();
  if (name == "grid") return std::make_unique<GridWorldEnv>(shippedGrid());
  if (name == "cartpole") return std::make_unique<CartpoleEnv>();
  if (name == "mountain_car") return std::make_unique<MountainCarEnv>();
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace bvelab::envs
