#include "bvelab/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "bvelab/binary_io.hpp"
#include "bvelab/errors.hpp"

namespace bvelab::data {

namespace {

constexpr std::string_view kMagic = "BVED";

Observation toFloat32(const Observation& o) {
  Observation out(o.size());
  std::transform(o.begin(), o.end(), out.begin(),
                 [](double v) { return static_cast<double>(static_cast<float>(v)); });
  return out;
}

void refreshCounts(Dataset& d) {
  d.header.numEpisodes = static_cast<std::int64_t>(d.episodes.size());
  d.header.numTransitions = 0;
  for (const auto& e : d.episodes) d.header.numTransitions += static_cast<std::int64_t>(e.size());
}

nlohmann::json headerToJson(const DatasetHeader& h) {
  return {
      {"env",
       {{"name", h.envSpec.name},
        {"observationDim", h.envSpec.observationDim},
        {"numActions", h.envSpec.numActions},
        {"maxEpisodeLength", h.envSpec.maxEpisodeLength}}},
      {"gamma", h.gamma},
      {"noiseEpsilon", h.noiseEpsilon},
      {"generatorDescription", h.generatorDescription},
      {"subsampleFraction", h.subsampleFraction},
      {"numEpisodes", h.numEpisodes},
      {"numTransitions", h.numTransitions},
      {"returnToGo", "discounted with gamma"},
  };
}

DatasetHeader headerFromJson(const nlohmann::json& j) {
  DatasetHeader h;
  const auto& env = j.at("env");
  h.envSpec.name = env.at("name").get<std::string>();
  h.envSpec.observationDim = env.at("observationDim").get<int>();
  h.envSpec.numActions = env.at("numActions").get<int>();
  h.envSpec.maxEpisodeLength = env.at("maxEpisodeLength").get<int>();
  h.gamma = j.at("gamma").get<double>();
  h.noiseEpsilon = j.at("noiseEpsilon").get<double>();
  h.generatorDescription = j.at("generatorDescription").get<std::string>();
  h.subsampleFraction = j.at("subsampleFraction").get<double>();
  h.numEpisodes = j.at("numEpisodes").get<std::int64_t>();
  h.numTransitions = j.at("numTransitions").get<std::int64_t>();
  return h;
}

void putFeatures(io::ByteWriter& w, const Observation& o) {
  for (double v : o) w.put<float>(static_cast<float>(v));
}

Observation getFeatures(io::ByteReader& r, int dim) {
  Observation o(static_cast<std::size_t>(dim));
  for (auto& v : o) v = static_cast<double>(r.get<float>());
  return o;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * (1.0 + std::abs(b)); }

}  // namespace

double episodicReturn(const Episode& episode) {
  double total = 0.0;
  for (const auto& r : episode) total += r.reward;
  return total;
}

double meanEpisodicReturn(const Dataset& dataset) {
  if (dataset.episodes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : dataset.episodes) total += episodicReturn(e);
  return total / static_cast<double>(dataset.episodes.size());
}

void computeReturnToGo(Episode& episode, double gamma) {
  if (episode.empty()) throw EmptyEpisode("cannot annotate an empty episode");
  double next = 0.0;
  for (auto it = episode.rbegin(); it != episode.rend(); ++it) {
    it->returnToGo = it == episode.rbegin() ? it->reward : it->reward + gamma * next;
    next = it->returnToGo;
  }
}

Dataset logEpisodes(envs::Environment& env, BehaviorPolicy& policy, int numEpisodes,
                    std::uint64_t seed, double gamma, std::string generatorDescription) {
  if (numEpisodes <= 0) throw std::invalid_argument("logEpisodes needs numEpisodes > 0");
  Dataset d;
  d.header.envSpec = env.spec();
  d.header.gamma = gamma;
  if (const auto* noisy = dynamic_cast<const envs::ActionNoiseWrapper*>(&env)) {
    d.header.noiseEpsilon = noisy->epsilon();
  }
  d.header.generatorDescription = std::move(generatorDescription);

  Rng policyRng(deriveSeed(seed, 0xB0B));
  for (int e = 0; e < numEpisodes; ++e) {
    Episode episode;
    Observation state = env.reset(deriveSeed(seed, static_cast<std::uint64_t>(e)));
    while (!env.episodeOver()) {
      const int proposed = policy.act(state, policyRng);
      envs::StepResult step = env.step(proposed);
      const int executed = env.lastExecutedAction();
      policy.observe(state, executed, step.reward, step.nextObservation, step.terminal);

      TransitionRecord rec;
      rec.episodeId = e;
      rec.t = static_cast<int>(episode.size());
      rec.state = toFloat32(state);
      rec.action = executed;
      rec.reward = step.reward;
      rec.nextState = toFloat32(step.nextObservation);
      rec.terminal = step.terminal;
      if (!episode.empty()) episode.back().nextAction = executed;
      episode.push_back(std::move(rec));
      state = std::move(step.nextObservation);
    }
    computeReturnToGo(episode, gamma);
    d.episodes.push_back(std::move(episode));
  }
  refreshCounts(d);
  return d;
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("subsample fraction must lie in (0, 1]");
  }
  const std::size_t n = dataset.episodes.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `keep` slots hold a uniform draw.
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniformInt(rng, static_cast<int>(n - i)));
    std::swap(order[i], order[j]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());

  Dataset out;
  out.header = dataset.header;
  out.header.subsampleFraction *= fraction;
  for (std::size_t i : order) out.episodes.push_back(dataset.episodes[i]);
  refreshCounts(out);
  return out;
}

std::pair<Dataset, Dataset> splitByEpisodicReturn(const Dataset& dataset) {
  if (dataset.episodes.empty()) throw std::invalid_argument("cannot split an empty dataset");
  const double mean = meanEpisodicReturn(dataset);
  Dataset below;
  Dataset above;
  below.header = above.header = dataset.header;
  for (const auto& e : dataset.episodes) {
    (episodicReturn(e) < mean ? below : above).episodes.push_back(e);
  }
  refreshCounts(below);
  refreshCounts(above);
  return {std::move(below), std::move(above)};
}

void validate(const Dataset& d) {
  std::int64_t transitions = 0;
  const auto dim = static_cast<std::size_t>(d.header.envSpec.observationDim);
  for (const auto& episode : d.episodes) {
    if (episode.empty()) throw CorruptDataset("empty episode");
    transitions += static_cast<std::int64_t>(episode.size());
    for (std::size_t t = 0; t < episode.size(); ++t) {
      const auto& r = episode[t];
      if (r.state.size() != dim || r.nextState.size() != dim) {
        throw CorruptDataset("feature width differs from header");
      }
      if (r.action < 0 || r.action >= d.header.envSpec.numActions) {
        throw CorruptDataset("action out of range");
      }
      const bool last = t + 1 == episode.size();
      if (r.terminal && !last) throw CorruptDataset("terminal step inside an episode");
      if (last) {
        if (r.nextAction) throw CorruptDataset("next action recorded after the last step");
        if (!close(r.returnToGo, r.reward)) throw CorruptDataset("return-to-go recursion broken");
        continue;
      }
      const auto& next = episode[t + 1];
      if (next.episodeId != r.episodeId || next.t != r.t + 1) {
        throw CorruptDataset("episode steps are not contiguous");
      }
      if (r.nextState != next.state || r.nextAction != next.action) {
        throw CorruptDataset("next state/action disagree with the following step");
      }
      if (!close(r.returnToGo, r.reward + d.header.gamma * next.returnToGo)) {
        throw CorruptDataset("return-to-go recursion broken");
      }
    }
  }
  if (d.header.numEpisodes != static_cast<std::int64_t>(d.episodes.size()) ||
      d.header.numTransitions != transitions) {
    throw CorruptDataset("header counts disagree with the body");
  }
}

std::vector<std::uint8_t> serialize(const Dataset& d) {
  io::ByteWriter w;
  const std::string header = headerToJson(d.header).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(header.size()));
  w.putBytes(header);
  for (const auto& episode : d.episodes) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(episode.size()));
    w.put<std::int64_t>(episode.empty() ? 0 : episode.front().episodeId);
    for (const auto& r : episode) {
      w.put<std::int32_t>(r.t);
      putFeatures(w, r.state);
      w.put<std::int32_t>(r.action);
      w.put<double>(r.reward);
      putFeatures(w, r.nextState);
      w.put<std::int32_t>(r.nextAction.value_or(-1));
      w.put<std::uint8_t>(r.terminal ? 1 : 0);
      w.put<double>(r.returnToGo);
    }
  }
  return io::seal(kMagic, kDatasetFormatVersion, w.bytes());
}

Dataset deserialize(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(io::unseal(kMagic, kDatasetFormatVersion, bytes));
  Dataset d;
  const auto headerLength = r.get<std::uint32_t>();
  try {
    d.header = headerFromJson(nlohmann::json::parse(r.getString(headerLength)));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptDataset(std::string("bad dataset header: ") + e.what());
  }
  const int dim = d.header.envSpec.observationDim;
  for (std::int64_t e = 0; e < d.header.numEpisodes; ++e) {
    const auto length = r.get<std::uint32_t>();
    const auto episodeId = r.get<std::int64_t>();
    Episode episode(length);
    for (auto& rec : episode) {
      rec.episodeId = episodeId;
      rec.t = r.get<std::int32_t>();
      rec.state = getFeatures(r, dim);
      rec.action = r.get<std::int32_t>();
      rec.reward = r.get<double>();
      rec.nextState = getFeatures(r, dim);
      const auto next = r.get<std::int32_t>();
      if (next >= 0) rec.nextAction = next;
      rec.terminal = r.get<std::uint8_t>() != 0;
      rec.returnToGo = r.get<double>();
    }
    d.episodes.push_back(std::move(episode));
  }
  if (r.remaining() != 0) throw CorruptDataset("trailing bytes after the last episode");
  validate(d);
  return d;
}

void save(const Dataset& dataset, const std::filesystem::path& path) {
  io::writeFile(path, serialize(dataset));
}

Dataset load(const std::filesystem::path& path) { return deserialize(io::readFile(path)); }

}  // namespace bvelab::data
