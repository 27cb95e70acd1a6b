// Acceptance suite: one PASS/FAIL line per criterion, with the measured
// values and wall-clock time. Exit status is nonzero if any line fails.
//
//   acceptance --group fast    closed-form, tabular and equivalence checks
//   acceptance --group catch   Catch end-to-end reproduction (minutes)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "bvelab/agents.hpp"
#include "bvelab/datastore.hpp"
#include "bvelab/divergence.hpp"
#include "bvelab/envs.hpp"
#include "bvelab/evaluation.hpp"
#include "bvelab/experiment.hpp"
#include "bvelab/neuralnet.hpp"
#include "bvelab/tabular.hpp"
#include "support/random_mdps.hpp"

using namespace bvelab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Reporter {
 public:
  // Runs `check`, prints its line and flags runtime overruns when a budget
  // (seconds) is given.
  void run(const std::string& name, const std::function<Outcome()>& check, double budget = 0.0) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget > 0.0 && secs >= budget) {
      o.pass = false;
      o.detail += " [over the " + fmt(budget) + " s budget]";
    }
    std::printf("%s  %-34s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures_ += o.pass ? 0 : 1;
  }

  int failures() const { return failures_; }

  static std::string fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
  }

 private:
  int failures_ = 0;
};

std::string fmt(double v) { return Reporter::fmt(v); }

// ------------------------------------------------------------ fast group

Outcome divergenceReproduction() {
  divergence::ToyConfig cfg;
  const auto analytic = divergence::runGradientDescent(cfg, 1000);
  const auto run = divergence::trainToy(cfg, 1000);
  const int predicted = analytic.divergedAtStep.value_or(-1);
  const bool ok = predicted == 148 && run.result.diverged &&
                  std::abs(run.result.divergedAtStep - predicted) <= 1;
  return {ok, "analytic step " + std::to_string(predicted) + ", trainLoop step " +
                  std::to_string(run.result.divergedAtStep)};
}

Outcome divergenceBoundary() {
  int cases = 0, agree = 0;
  std::string bad;
  for (double product : {0.5, 0.9, 1.0, 1.1, 2.0}) {
    for (double gamma : {0.5, 0.9, 0.99}) {
      divergence::ToyConfig cfg;
      cfg.gamma = gamma;
      cfg.betaFeature = product / gamma;
      // Slowest divergent case grows by 1 + 0.1 (1.1 - 1) per step.
      const auto run = divergence::trainToy(cfg, 3000);
      const bool expected = cfg.divergenceConditionHolds();
      ++cases;
      if (run.result.diverged == expected) ++agree;
      else bad += " gb=" + fmt(product) + "/g=" + fmt(gamma);
    }
  }
  return {agree == cases, std::to_string(agree) + "/" + std::to_string(cases) +
                              " configurations agree with gamma*beta > 1" + bad};
}

Outcome bveBoundedness() {
  divergence::ToyConfig cfg;
  divergence::ToyTrainOptions opt;
  opt.mode = agents::Mode::kBve;
  const auto run = divergence::trainToy(cfg, 100000, opt);
  double maxAbs = 0.0;
  for (const auto& p : run.trajectory)
    maxAbs = std::max({maxAbs, std::abs(p.w), std::abs(p.u1), std::abs(p.u2), std::abs(p.u3)});
  const double u1Err = std::abs(run.trajectory.back().u1 - 1.0);
  const bool ok = !run.result.diverged && maxAbs < 1e3 && u1Err <= 1e-6 &&
                  run.trajectory.size() == 100001;
  return {ok, "max |param| " + fmt(maxAbs) + ", |u1 - 1| " + fmt(u1Err) + " after 1e5 steps"};
}

Outcome crossCheck() {
  divergence::ToyConfig cfg;
  const auto dqn = divergence::crossCheckWithNeuralnet(cfg, 50, agents::Mode::kDqn);
  const auto bve = divergence::crossCheckWithNeuralnet(cfg, 50, agents::Mode::kBve);
  const double worst = std::max(dqn.maxRelativeDiscrepancy, bve.maxRelativeDiscrepancy);
  const bool ok = worst <= 1e-8 && dqn.stepsCompared >= 50 && bve.stepsCompared >= 50;
  return {ok, "max relative discrepancy " + fmt(worst) + " (DQN and BVE, 50 steps)"};
}

Outcome gradientCorrectness() {
  Rng rng(2024);
  std::uniform_int_distribution<int> width(1, 12), depth(0, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  int checked = 0, redrawn = 0;
  while (checked < 100) {
    const int in = width(rng), out = width(rng);
    std::vector<int> hidden(static_cast<std::size_t>(depth(rng)));
    for (auto& h : hidden) h = width(rng);
    auto params = nn::makeMlp(in, hidden, out, rng);
    for (auto& l : params.layers)
      for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.3 * normal(rng);
    std::vector<double> x(static_cast<std::size_t>(in)), gy(static_cast<std::size_t>(out));
    for (auto& v : x) v = 2.0 * normal(rng);
    for (auto& v : gy) v = normal(rng);
    if (!hidden.empty() && nn::minHiddenPreActivation(params, x) < 1e-3) {
      ++redrawn;
      continue;
    }
    worst = std::max(worst, nn::finiteDifferenceCheck(params, x, gy).maxRelativeError);
    ++checked;
  }
  return {worst < 1e-4, "max relative error " + fmt(worst) + " over 100 nets (" +
                            std::to_string(redrawn) + " inputs redrawn near a kink)"};
}

Outcome lemma2() {
  // Strictness is judged relative to |V(s+1)|: at gamma 0.5 and n >= 18 the
  // leftmost values are themselves below 1e-9.
  double minMargin = 1e300, minAbsMargin = 1e300, worstGap = 0.0;
  int instances = 0;
  for (int n = 2; n <= 20; ++n) {
    for (double gamma : {0.5, 0.9, 0.99}) {
      const auto m = tabular::chainMdp(n, gamma, tabular::ChainEnding::kContinuing);
      const auto uniform = tabular::evaluatePolicy(
          m, tabular::TabularPolicy::uniform(m.numStates, m.numActions));
      const auto improved = tabular::evaluatePolicy(m, tabular::greedyImprove(uniform));
      const auto optimal = tabular::valueIteration(m, 1e-12).values;
      for (int s = 0; s + 1 < m.numStates; ++s) {
        const double d = uniform.v[s + 1] - uniform.v[s];
        minAbsMargin = std::min(minAbsMargin, d);
        minMargin = std::min(minMargin, d / std::abs(uniform.v[s + 1]));
      }
      for (int s = 0; s < m.numStates; ++s) {
        if (m.terminalMask[s]) continue;
        worstGap = std::max(worstGap, std::abs(improved.v[s] - optimal.v[s]) /
                                          std::max(1.0, std::abs(optimal.v[s])));
      }
      ++instances;
    }
  }
  const bool ok = minMargin > 1e-9 && worstGap <= 1e-8;
  return {ok, std::to_string(instances) + " chains, min relative margin " + fmt(minMargin) + " (absolute " +
                  fmt(minAbsMargin) + ")" +
                  ", max |V_1step - V_opt| (relative) " + fmt(worstGap)};
}

Outcome lemma1() {
  std::mt19937_64 rng(99);
  int instances = 0, witnesses = 0, reached = 0;
  for (int trial = 0; trial < 2000 && instances < 20; ++trial) {
    const int interior = 4 + static_cast<int>(rng() % 9);
    const auto c = testing::randomTwoOutcomeMdp(rng, interior, 3, 0.0, 1.0);
    const auto premise = tabular::checkTwoOutcomePremise(c.mdp, c.behavior, 0.0, 1.0);
    if (!premise.holds() || premise.witnessStates.empty()) continue;
    const auto improved = tabular::greedyImprove(tabular::evaluatePolicy(c.mdp, c.behavior));
    for (int s : premise.witnessStates) {
      ++witnesses;
      const auto g = tabular::deterministicRollout(c.mdp, improved, s, c.mdp.numStates);
      if (g && *g == 1.0) ++reached;
    }
    ++instances;
  }
  const bool ok = instances == 20 && witnesses > 0 && reached == witnesses;
  return {ok, std::to_string(instances) + " MDPs, H reached from " + std::to_string(reached) +
                  "/" + std::to_string(witnesses) + " witness states"};
}

Outcome gridNearOptimality() {
  const auto m = tabular::gridMdp(envs::shippedGrid(), 0.99);
  const int s = m.startState();
  const auto uniform =
      tabular::evaluatePolicy(m, tabular::TabularPolicy::uniform(m.numStates, m.numActions));
  const auto one = tabular::evaluatePolicy(m, tabular::greedyImprove(uniform));
  const auto opt = tabular::valueIteration(m, 1e-10).values;
  const double recovered = (one.v[s] - uniform.v[s]) / (opt.v[s] - uniform.v[s]);
  return {recovered >= 0.95, "V_uniform " + fmt(uniform.v[s]) + ", V_1step " + fmt(one.v[s]) +
                                 ", V_opt " + fmt(opt.v[s]) + ", gap recovered " +
                                 fmt(recovered)};
}

Outcome equivalences() {
  auto env = envs::wrapActionNoise(envs::makeEnvironment("catch"), 0.25, 41);
  data::UniformPolicy behavior(3);
  const auto d = data::logEpisodes(*env, behavior, 30, 40, 0.99, "uniform");

  auto train = [&](agents::Mode mode) {
    agents::TrainConfig tc;
    tc.mode = mode;
    tc.loss.lambdaRank = 0.0;
    tc.steps = 300;
    tc.batchSize = 32;
    tc.targetUpdatePeriod = 100;
    tc.learningRate = 1e-3;
    tc.hiddenWidths = {16, 16};
    tc.seed = 5;
    return agents::trainLoop(d, tc).params;
  };
  const bool bve = train(agents::Mode::kRBve) == train(agents::Mode::kBve);
  const bool dqn = train(agents::Mode::kRDqn) == train(agents::Mode::kDdqn);
  const bool identity = data::subsample(d, 1.0, 7) == d;

  const auto path = std::filesystem::temp_directory_path() / "bvelab_acceptance_roundtrip.bved";
  data::save(d, path);
  const auto loaded = data::load(path);
  const bool roundTrip = loaded == d && data::serialize(loaded) == data::serialize(d);
  std::filesystem::remove(path);

  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {bve && dqn && identity && roundTrip,
          std::string("R-BVE==BVE ") + yn(bve) + ", R-DQN==DDQN " + yn(dqn) +
              ", fraction 1 identity " + yn(identity) + ", save/load identical " + yn(roundTrip)};
}

Outcome rankingUnitValues() {
  agents::StateInputQ model(1, 3);
  agents::LossConfig cfg;
  nn::MlpParams equal;
  equal.layers.push_back({Eigen::MatrixXd::Zero(3, 1), Eigen::VectorXd::Constant(3, 0.7)});
  data::TransitionRecord rec;
  rec.state = {0.0};
  rec.nextState = {0.0};
  rec.action = 2;
  rec.returnToGo = 0.25;
  const double loss = agents::rankingLoss(model, equal, rec, rec.returnToGo, cfg);
  const double expected = 2.0 * cfg.marginNu * cfg.marginNu;
  const double weight = agents::successWeight(0.25, 0.25, cfg);
  const bool ok = std::abs(loss - expected) <= 1e-15 && weight == 1.0;
  return {ok, "equal-Q loss " + fmt(loss) + " vs 2 nu^2 " + fmt(expected) + ", w at the mean " +
                  fmt(weight)};
}

void runFast(Reporter& r) {
  r.run("divergence reproduction", divergenceReproduction, 1.0);
  r.run("divergence boundary", divergenceBoundary, 5.0);
  r.run("BVE boundedness", bveBoundedness, 10.0);
  r.run("generic vs analytic cross-check", crossCheck);
  r.run("gradient correctness", gradientCorrectness);
  r.run("exact chain values and improvement", lemma2, 5.0);
  r.run("one-step improvement reaches H", lemma1);
  r.run("grid near-optimality", gridNearOptimality);
  r.run("equivalence reductions", equivalences);
  r.run("ranking-loss unit values", rankingUnitValues);
}

// ------------------------------------------------------------ catch group

std::vector<double> column(const experiment::SweepResult& sweep, double fraction,
                           const std::string& mode, double eval::MetricsRow::*field) {
  std::vector<double> out;
  for (const auto& row : sweep.rows)
    if (row.mode == mode && row.datasetFraction == fraction && !row.failed && !row.diverged)
      out.push_back(row.*field);
  return out;
}

double medianOr(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : eval::median(v);
}

void runCatch(Reporter& r, const std::string& csvPath, int workers) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<agents::Mode> modes{agents::Mode::kDdqn, agents::Mode::kBve,
                                        agents::Mode::kRDqn, agents::Mode::kRBve};

  data::Dataset full;
  r.run("Catch dataset generation", [&] {
    experiment::GenerateOptions g;
    g.seed = 7;
    full = experiment::generateDataset(g);
    const bool ok = full.episodes.size() == 200 && full.header.noiseEpsilon == 0.25;
    return Outcome{ok, std::to_string(full.episodes.size()) + " episodes, " +
                           std::to_string(full.header.numTransitions) +
                           " transitions, mean return " +
                           fmt(data::meanEpisodicReturn(full))};
  });

  experiment::SweepSpec spec;
  spec.axis = experiment::SweepAxis::kDatasetFraction;
  spec.values = {0.1, 0.01};
  spec.modes = modes;
  spec.subsampleSeed = 3;
  spec.workers = workers;
  spec.manifest = "acceptance";
  experiment::SweepResult fractions;
  r.run("Catch fraction sweep runs", [&] {
    fractions = experiment::runSweep(spec, full);
    int diverged = 0;
    for (const auto& row : fractions.rows) diverged += row.diverged ? 1 : 0;
    return Outcome{fractions.failures.empty(),
                   std::to_string(fractions.rows.size()) + " runs of " +
                       std::to_string(spec.base.trainingSteps) + " steps, " +
                       std::to_string(fractions.failures.size()) + " failed, " +
                       std::to_string(diverged) + " diverged"};
  });

  r.run("Catch R-BVE return >= DDQN (10%)", [&] {
    const double rbve = medianOr(column(fractions, 0.1, "R-BVE", &eval::MetricsRow::episodicReturnMedian));
    const double ddqn = medianOr(column(fractions, 0.1, "DDQN", &eval::MetricsRow::episodicReturnMedian));
    return Outcome{rbve >= ddqn, "median return R-BVE " + fmt(rbve) + ", DDQN " + fmt(ddqn)};
  });

  r.run("Catch over-estimation ordering (1%)", [&] {
    auto med = [&](const char* m) {
      return medianOr(column(fractions, 0.01, m, &eval::MetricsRow::overEstimationError));
    };
    const double ddqn = med("DDQN"), rdqn = med("R-DQN"), bve = med("BVE"), rbve = med("R-BVE");
    const bool ok = ddqn >= rdqn && rdqn >= std::max(bve, rbve);
    return Outcome{ok, "median DDQN " + fmt(ddqn) + " >= R-DQN " + fmt(rdqn) +
                           " >= max(BVE " + fmt(bve) + ", R-BVE " + fmt(rbve) + ")"};
  });

  // lambda = 0 reuses the BVE runs (bit-identical by the equivalence check),
  // lambda = 0.005 the default R-BVE runs; only lambda = 0.1 is new.
  experiment::SweepResult lambdaSweep;
  r.run("Catch action-gap monotonicity", [&] {
    experiment::SweepSpec ls = spec;
    ls.axis = experiment::SweepAxis::kLambda;
    ls.values = {0.1};
    ls.modes = {agents::Mode::kRBve};
    lambdaSweep = experiment::runSweep(ls, data::subsample(full, 0.1, spec.subsampleSeed));
    std::vector<double> high;
    for (const auto& row : lambdaSweep.rows)
      if (!row.failed && !row.diverged) high.push_back(row.actionGapMean);
    const double g0 = medianOr(column(fractions, 0.1, "BVE", &eval::MetricsRow::actionGapMean));
    const double g1 = medianOr(column(fractions, 0.1, "R-BVE", &eval::MetricsRow::actionGapMean));
    const double g2 = medianOr(high);
    const bool ok = lambdaSweep.failures.empty() && g2 >= g1 && g1 >= g0;
    return Outcome{ok, "median gap lambda 0.1 " + fmt(g2) + " >= 0.005 " + fmt(g1) + " >= 0 " +
                           fmt(g0)};
  });

  if (!csvPath.empty()) {
    std::ofstream out(csvPath);
    out << eval::metricsCsvHeader() << "\n";
    for (const auto& row : fractions.rows) out << eval::toCsvLine(row) << "\n";
    for (const auto& row : lambdaSweep.rows) out << eval::toCsvLine(row) << "\n";
  }

  const double total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.run("Catch runtime", [&] {
    return Outcome{total < 900.0, "total " + fmt(std::round(total)) + " s (target 900 s)"};
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bvelab acceptance suite"};
  std::string group = "fast";
  std::string csv;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--group", group, "fast, catch or all")
      ->check(CLI::IsMember({"fast", "catch", "all"}));
  app.add_option("--csv", csv, "write the Catch per-run metrics here");
  app.add_option("--workers", workers, "parallel training runs")->check(CLI::PositiveNumber);
  bool reportOnly = false;
  app.add_flag("--report-only", reportOnly, "exit 0 once every criterion has been reported");
  CLI11_PARSE(app, argc, argv);

  Reporter r;
  if (group == "fast" || group == "all") runFast(r);
  if (group == "catch" || group == "all") runCatch(r, csv, workers);
  std::printf("%d criteria failed%s\n", r.failures(), reportOnly ? " (report only)" : "");
  return r.failures() == 0 || reportOnly ? 0 : 1;
}
