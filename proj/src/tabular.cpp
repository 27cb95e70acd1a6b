#include "bvelab/tabular.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "bvelab/errors.hpp"

namespace bvelab::tabular {

namespace {

constexpr double kRowTolerance = 1e-12;

struct Successor {
  int next;
  double prob;
};

// Non-zero entries of every P[s][a] row.
std::vector<std::vector<Successor>> successors(const TabularMDP& mdp) {
  std::vector<std::vector<Successor>> out(static_cast<std::size_t>(mdp.numStates) * mdp.numActions);
  for (int s = 0; s < mdp.numStates; ++s) {
    for (int a = 0; a < mdp.numActions; ++a) {
      auto& row = out[static_cast<std::size_t>(s) * mdp.numActions + a];
      for (int n = 0; n < mdp.numStates; ++n) {
        if (mdp.p(s, a, n) != 0.0) row.push_back({n, mdp.p(s, a, n)});
      }
    }
  }
  return out;
}

}  // namespace

TabularMDP TabularMDP::empty(int numStates, int numActions, double gamma) {
  TabularMDP m;
  m.numStates = numStates;
  m.numActions = numActions;
  m.transitions.assign(static_cast<std::size_t>(numStates) * numActions * numStates, 0.0);
  m.rewards = Eigen::MatrixXd::Zero(numStates, numActions);
  m.terminalMask.assign(static_cast<std::size_t>(numStates), false);
  m.gamma = gamma;
  m.initialDistribution = Eigen::VectorXd::Zero(numStates);
  if (numStates > 0) m.initialDistribution(0) = 1.0;
  return m;
}

int TabularMDP::deterministicNext(int s, int a) const {
  int found = -1;
  for (int n = 0; n < numStates; ++n) {
    const double prob = p(s, a, n);
    if (prob == 0.0) continue;
    if (std::abs(prob - 1.0) > kRowTolerance || found != -1) return -1;
    found = n;
  }
  return found;
}

int TabularMDP::startState() const {
  Eigen::Index best = 0;
  initialDistribution.maxCoeff(&best);
  return static_cast<int>(best);
}

void TabularMDP::validate() const {
  if (numStates <= 0 || numActions <= 0) throw std::invalid_argument("MDP has no states or actions");
  if (rewards.rows() != numStates || rewards.cols() != numActions ||
      static_cast<int>(terminalMask.size()) != numStates ||
      initialDistribution.size() != numStates) {
    throw std::invalid_argument("MDP tables have inconsistent sizes");
  }
  for (int s = 0; s < numStates; ++s) {
    for (int a = 0; a < numActions; ++a) {
      double total = 0.0;
      for (int n = 0; n < numStates; ++n) {
        if (p(s, a, n) < 0.0) throw std::invalid_argument("negative transition probability");
        total += p(s, a, n);
      }
      if (std::abs(total - 1.0) > kRowTolerance) {
        throw std::invalid_argument("P[" + std::to_string(s) + "][" + std::to_string(a) +
                                    "] sums to " + std::to_string(total));
      }
      if (terminalMask[s] && (p(s, a, s) != 1.0 || rewards(s, a) != 0.0)) {
        throw std::invalid_argument("terminal state " + std::to_string(s) +
                                    " must be a reward-free self-loop");
      }
    }
  }
  if (std::abs(initialDistribution.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("initial distribution does not sum to 1");
  }
}

TabularPolicy TabularPolicy::uniform(int numStates, int numActions) {
  return {Eigen::MatrixXd::Constant(numStates, numActions, 1.0 / numActions)};
}

TabularPolicy TabularPolicy::deterministic(const std::vector<int>& actions, int numActions) {
  TabularPolicy p{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()), numActions)};
  for (std::size_t s = 0; s < actions.size(); ++s) p.probs(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  return p;
}

int TabularPolicy::action(int s) const {
  int best = 0;
  for (Eigen::Index a = 1; a < probs.cols(); ++a) {
    if (probs(s, a) > probs(s, best)) best = static_cast<int>(a);
  }
  return best;
}

Eigen::MatrixXd qFromV(const TabularMDP& mdp, const Eigen::VectorXd& v) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.numStates, mdp.numActions);
  for (int s = 0; s < mdp.numStates; ++s) {
    if (mdp.terminalMask[s]) continue;
    for (int a = 0; a < mdp.numActions; ++a) {
      double expected = 0.0;
      for (int n = 0; n < mdp.numStates; ++n) expected += mdp.p(s, a, n) * v(n);
      q(s, a) = mdp.rewards(s, a) + mdp.gamma * expected;
    }
  }
  return q;
}

ValueTables evaluatePolicy(const TabularMDP& mdp, const TabularPolicy& policy) {
  if (policy.probs.rows() != mdp.numStates || policy.probs.cols() != mdp.numActions) {
    throw std::invalid_argument("policy shape does not match the MDP");
  }
  const int n = mdp.numStates;
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    // Terminal rows stay e_s with rhs 0, pinning V(terminal) = 0.
    if (mdp.terminalMask[s]) continue;
    for (int a = 0; a < mdp.numActions; ++a) {
      const double pa = policy.probs(s, a);
      if (pa == 0.0) continue;
      rhs(s) += pa * mdp.rewards(s, a);
      for (int next = 0; next < n; ++next) system(s, next) -= mdp.gamma * pa * mdp.p(s, a, next);
    }
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  if (!(lu.rcond() > 1e-12)) {
    throw SingularSystem("policy evaluation system is singular (rcond " +
                         std::to_string(lu.rcond()) + ")");
  }
  ValueTables out;
  out.v = lu.solve(rhs);
  if (!out.v.allFinite()) throw SingularSystem("policy evaluation produced non-finite values");
  out.q = qFromV(mdp, out.v);
  return out;
}

TabularPolicy greedyImprove(const ValueTables& values) {
  std::vector<int> actions(static_cast<std::size_t>(values.q.rows()));
  for (Eigen::Index s = 0; s < values.q.rows(); ++s) {
    int best = 0;
    for (Eigen::Index a = 1; a < values.q.cols(); ++a) {
      if (values.q(s, a) > values.q(s, best)) best = static_cast<int>(a);
    }
    actions[static_cast<std::size_t>(s)] = best;
  }
  return TabularPolicy::deterministic(actions, static_cast<int>(values.q.cols()));
}

ValueIterationResult valueIteration(const TabularMDP& mdp, double tolerance, int maxIterations) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  const auto succ = successors(mdp);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.numStates);
  Eigen::VectorXd next(mdp.numStates);
  for (int it = 1; it <= maxIterations; ++it) {
    for (int s = 0; s < mdp.numStates; ++s) {
      if (mdp.terminalMask[s]) {
        next(s) = 0.0;
        continue;
      }
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < mdp.numActions; ++a) {
        double expected = 0.0;
        for (const auto& [n, prob] : succ[static_cast<std::size_t>(s) * mdp.numActions + a]) {
          expected += prob * v(n);
        }
        best = std::max(best, mdp.rewards(s, a) + mdp.gamma * expected);
      }
      next(s) = best;
    }
    const double residual = (next - v).cwiseAbs().maxCoeff();
    v.swap(next);
    if (!v.allFinite()) break;
    if (residual < tolerance) {
      ValueIterationResult out;
      out.values.v = v;
      out.values.q = qFromV(mdp, v);
      out.iterations = it;
      out.residual = residual;
      return out;
    }
  }
  throw NonConvergence("value iteration did not converge within " + std::to_string(maxIterations) +
                       " iterations");
}

namespace {

// States from which an H outcome is reachable using only actions allowed by
// `allowed`.
std::vector<bool> reachesHigh(const TabularMDP& mdp, const std::vector<int>& next,
                              double rewardHigh, const std::function<bool(int, int)>& allowed) {
  std::vector<bool> good(static_cast<std::size_t>(mdp.numStates), false);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int s = 0; s < mdp.numStates; ++s) {
      if (good[s] || mdp.terminalMask[s]) continue;
      for (int a = 0; a < mdp.numActions; ++a) {
        if (!allowed(s, a)) continue;
        const int n = next[static_cast<std::size_t>(s) * mdp.numActions + a];
        const bool high = mdp.terminalMask[n] ? mdp.rewards(s, a) == rewardHigh : good[n];
        if (high) {
          good[s] = true;
          changed = true;
          break;
        }
      }
    }
  }
  return good;
}

bool hasCycle(const TabularMDP& mdp, const std::vector<int>& next) {
  // 0 unvisited, 1 on stack, 2 done.
  std::vector<int> color(static_cast<std::size_t>(mdp.numStates), 0);
  std::function<bool(int)> visit = [&](int s) {
    color[s] = 1;
    for (int a = 0; a < mdp.numActions; ++a) {
      const int n = next[static_cast<std::size_t>(s) * mdp.numActions + a];
      if (mdp.terminalMask[n]) continue;
      if (color[n] == 1) return true;
      if (color[n] == 0 && visit(n)) return true;
    }
    color[s] = 2;
    return false;
  };
  for (int s = 0; s < mdp.numStates; ++s) {
    if (!mdp.terminalMask[s] && color[s] == 0 && visit(s)) return true;
  }
  return false;
}

}  // namespace

TwoOutcomePremise checkTwoOutcomePremise(const TabularMDP& mdp, const TabularPolicy& behavior,
                                 double rewardLow, double rewardHigh) {
  if (!(rewardLow < rewardHigh)) throw StructureViolation("need rewardLow < rewardHigh");
  std::vector<int> next(static_cast<std::size_t>(mdp.numStates) * mdp.numActions, -1);
  for (int s = 0; s < mdp.numStates; ++s) {
    if (mdp.terminalMask[s]) continue;
    for (int a = 0; a < mdp.numActions; ++a) {
      const int n = mdp.deterministicNext(s, a);
      if (n < 0) {
        throw StructureViolation("transition from state " + std::to_string(s) + " action " +
                                 std::to_string(a) + " is not deterministic");
      }
      const double r = mdp.rewards(s, a);
      if (mdp.terminalMask[n]) {
        if (r != rewardLow && r != rewardHigh) {
          throw StructureViolation("terminating reward " + std::to_string(r) + " is neither L nor H");
        }
      } else if (r != 0.0) {
        throw StructureViolation("non-terminating transition pays " + std::to_string(r));
      }
      next[static_cast<std::size_t>(s) * mdp.numActions + a] = n;
    }
  }

  TwoOutcomePremise out;
  out.deterministic = true;
  out.finiteHorizon = !hasCycle(mdp, next);
  const auto any = reachesHigh(mdp, next, rewardHigh, [](int, int) { return true; });
  const auto viaBehavior = reachesHigh(mdp, next, rewardHigh,
                                       [&](int s, int a) { return behavior.probs(s, a) > 0.0; });
  out.behaviorReachesHigh = true;
  for (int s = 0; s < mdp.numStates; ++s) {
    if (!any[s]) continue;
    out.witnessStates.push_back(s);
    if (!viaBehavior[s]) out.behaviorReachesHigh = false;
  }
  return out;
}

std::optional<double> deterministicRollout(const TabularMDP& mdp, const TabularPolicy& policy,
                                           int start, int maxSteps) {
  int s = start;
  double total = 0.0;
  for (int step = 0; step < maxSteps; ++step) {
    if (mdp.terminalMask[s]) return total;
    const int a = policy.action(s);
    const int n = mdp.deterministicNext(s, a);
    if (n < 0) throw StructureViolation("rollout hit a stochastic transition");
    total += mdp.rewards(s, a);
    s = n;
  }
  if (mdp.terminalMask[s]) return total;
  return std::nullopt;
}

// ---------------------------------------------------------------- builders

TabularMDP chainMdp(int n, double gamma, ChainEnding ending) {
  if (n < 2) throw std::invalid_argument("chain needs at least 2 states");
  const bool terminating = ending == ChainEnding::kTerminating;
  TabularMDP m = TabularMDP::empty(terminating ? n + 1 : n, 2, gamma);
  for (int s = 0; s < n; ++s) {
    m.stateNames.push_back("c" + std::to_string(s));
    if (s == n - 1) {
      m.rewards(s, 0) = m.rewards(s, 1) = 1.0;
      if (terminating) {
        m.p(s, 0, n) = m.p(s, 1, n) = 1.0;
      } else {
        m.p(s, 0, s - 1) = 1.0;
        m.p(s, 1, s) = 1.0;
      }
      continue;
    }
    m.p(s, 0, std::max(s - 1, 0)) = 1.0;
    m.p(s, 1, s + 1) = 1.0;
  }
  if (terminating) {
    m.terminalMask[n] = true;
    m.p(n, 0, n) = m.p(n, 1, n) = 1.0;
    m.stateNames.push_back("end");
  }
  return m;
}

TabularMDP gridMdp(const envs::GridLayout& layout, double gamma) {
  TabularMDP m = TabularMDP::empty(layout.numCells(), 4, gamma);
  for (int c = 0; c < layout.numCells(); ++c) {
    m.stateNames.push_back("r" + std::to_string(c / layout.cols) + "c" + std::to_string(c % layout.cols));
    // Walls are unreachable; pinning them as absorbing keeps the system regular.
    if (layout.isTerminal(c) || layout.isWall(c)) {
      m.terminalMask[c] = true;
      for (int a = 0; a < 4; ++a) m.p(c, a, c) = 1.0;
      continue;
    }
    for (int a = 0; a < 4; ++a) {
      m.p(c, a, layout.move(c, a)) = 1.0;
      m.rewards(c, a) = layout.reward(c, a);
    }
  }
  m.initialDistribution.setZero();
  m.initialDistribution(layout.start) = 1.0;
  return m;
}

TabularMDP divergenceMdp(double gamma) {
  using envs::DivergenceEnv;
  TabularMDP m = TabularMDP::empty(4, 3, gamma);
  m.stateNames = {"s1", "s2", "s3", "s4"};
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 3; ++a) {
      m.p(s, a, DivergenceEnv::nextState(s, a)) = 1.0;
      m.rewards(s, a) = DivergenceEnv::reward(s, a);
    }
  }
  m.terminalMask[DivergenceEnv::kS4] = true;
  for (int a = 0; a < 3; ++a) m.p(DivergenceEnv::kS4, a, DivergenceEnv::kS4) = 1.0;
  return m;
}

TabularMDP parseMdpJson(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("MDP JSON: ") + e.what());
  }
  try {
    TabularMDP m = TabularMDP::empty(j.at("numStates").get<int>(), j.at("numActions").get<int>(),
                                     j.value("gamma", 0.99));
    if (j.contains("initialDistribution")) {
      const auto init = j.at("initialDistribution").get<std::vector<double>>();
      if (static_cast<int>(init.size()) != m.numStates) {
        throw std::invalid_argument("initialDistribution length differs from numStates");
      }
      m.initialDistribution = Eigen::Map<const Eigen::VectorXd>(init.data(), m.numStates);
    } else {
      m.initialDistribution.setZero();
      m.initialDistribution(j.value("start", 0)) = 1.0;
    }
    for (int s : j.value("terminal", std::vector<int>{})) m.terminalMask.at(s) = true;
    if (j.contains("rewards")) {
      const auto r = j.at("rewards").get<std::vector<std::vector<double>>>();
      if (static_cast<int>(r.size()) != m.numStates) {
        throw std::invalid_argument("rewards needs one row per state");
      }
      for (int s = 0; s < m.numStates; ++s) {
        if (static_cast<int>(r[s].size()) != m.numActions) {
          throw std::invalid_argument("rewards row needs one entry per action");
        }
        for (int a = 0; a < m.numActions; ++a) m.rewards(s, a) = r[s][a];
      }
    }
    for (const auto& t : j.at("transitions")) {
      m.p(t.at("s").get<int>(), t.at("a").get<int>(), t.at("next").get<int>()) +=
          t.value("p", 1.0);
    }
    for (int s = 0; s < m.numStates; ++s) {
      if (!m.terminalMask[s]) continue;
      for (int a = 0; a < m.numActions; ++a) {
        double total = 0.0;
        for (int n = 0; n < m.numStates; ++n) total += m.p(s, a, n);
        if (total == 0.0) m.p(s, a, s) = 1.0;
      }
    }
    if (j.contains("stateNames")) m.stateNames = j.at("stateNames").get<std::vector<std::string>>();
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("MDP JSON: ") + e.what());
  }
}

TabularMDP loadMdpJson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parseMdpJson(buffer.str());
}

}  // namespace bvelab::tabular
