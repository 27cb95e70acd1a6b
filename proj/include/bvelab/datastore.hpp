#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bvelab/envs.hpp"
#include "bvelab/rng.hpp"

namespace bvelab::data {

using envs::Observation;

struct TransitionRecord {
  std::int64_t episodeId = 0;
  int t = 0;
  Observation state;
  int action = 0;
  double reward = 0.0;
  Observation nextState;
  // Absent at terminal steps and at the last step of a truncated log.
  std::optional<int> nextAction;
  bool terminal = false;
  double returnToGo = 0.0;  // discounted with the dataset gamma

  bool operator==(const TransitionRecord&) const = default;
};

using Episode = std::vector<TransitionRecord>;

struct DatasetHeader {
  envs::EnvSpec envSpec;
  double gamma = 0.99;
  double noiseEpsilon = 0.0;
  std::string generatorDescription;
  double subsampleFraction = 1.0;
  std::int64_t numEpisodes = 0;
  std::int64_t numTransitions = 0;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Episode> episodes;

  bool operator==(const Dataset&) const = default;
};

// Undiscounted sum of an episode's rewards.
double episodicReturn(const Episode& episode);
double meanEpisodicReturn(const Dataset& dataset);

// Policy driving logEpisodes. act() proposes an action; observe() sees the
// transition that was actually executed, which lets learning behaviours
// (an online DQN) update as data is gathered.
class BehaviorPolicy {
 public:
  virtual ~BehaviorPolicy() = default;
  virtual int act(const Observation& state, Rng& rng) = 0;
  virtual void observe(const Observation& /*state*/, int /*executedAction*/, double /*reward*/,
                       const Observation& /*nextState*/, bool /*terminal*/) {}
};

class UniformPolicy : public BehaviorPolicy {
 public:
  explicit UniformPolicy(int numActions) : numActions_(numActions) {}
  int act(const Observation&, Rng& rng) override { return uniformInt(rng, numActions_); }

 private:
  int numActions_;
};

class ConstantPolicy : public BehaviorPolicy {
 public:
  explicit ConstantPolicy(int action) : action_(action) {}
  int act(const Observation&, Rng&) override { return action_; }

 private:
  int action_;
};

// Rolls out numEpisodes episodes and records every executed step. The
// recorded action is the one the environment applied (after any action
// noise). Features are rounded to float32 so that the stored dataset
// round-trips exactly through the binary format.
Dataset logEpisodes(envs::Environment& env, BehaviorPolicy& policy, int numEpisodes,
                    std::uint64_t seed, double gamma, std::string generatorDescription = {});

// Backward pass filling returnToGo. Throws EmptyEpisode.
void computeReturnToGo(Episode& episode, double gamma);

// Keeps ceil(fraction * numEpisodes) whole episodes drawn uniformly without
// replacement, in their original order.
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

// Episodes with return strictly below the dataset mean go first, the rest second.
std::pair<Dataset, Dataset> splitByEpisodicReturn(const Dataset& dataset);

// Checks header counts, episode continuity and the return-to-go recursion.
// Throws CorruptDataset.
void validate(const Dataset& dataset);

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

std::vector<std::uint8_t> serialize(const Dataset& dataset);
Dataset deserialize(std::span<const std::uint8_t> bytes);
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

}  // namespace bvelab::data
