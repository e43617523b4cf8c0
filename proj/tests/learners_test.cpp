#include "modcred/learners.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "modcred/harness.hpp"
#include "modcred/keydoor.hpp"
#include "modcred/rng.hpp"
#include "modcred/tabular.hpp"

using namespace modcred;

namespace {

std::vector<TraceStep> collectBatch(const TaskSpec& task, Learner& learner,
                                    int steps, std::uint64_t seed) {
  std::mt19937_64 envRng(mixSeed(seed, 8));
  std::mt19937_64 actRng(mixSeed(seed, 9));
  EnvState env = resetEnv(task, envRng);
  std::vector<TraceStep> batch;
  for (int i = 0; i < steps; ++i) {
    const std::vector<double> encoded = encode(task, env);
    TraceStep step = learner.act(encoded, actRng);
    const StepResult result = stepEnv(task, env, step.chosen);
    step.reward = result.reward;
    step.done = result.done;
    step.nextState = encode(task, result.next);
    batch.push_back(std::move(step));
    env = result.done ? resetEnv(task, envRng) : result.next;
  }
  return batch;
}

int firstEpisodeStartWithSuccessor(const std::vector<TraceStep>& batch) {
  int episodeStart = 0;
  for (size_t t = 0; t + 1 < batch.size(); ++t) {
    if (!batch[t].done && static_cast<int>(t) >= episodeStart) return episodeStart;
    if (batch[t].done) episodeStart = static_cast<int>(t) + 1;
  }
  return 0;
}

double maxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double out = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    out = std::max(out, std::abs(a[i] - b[i]));
  }
  return out;
}

}  // namespace

TEST(VickreySelect, CloneSetsThePrice) {
  const std::vector<double> bids{0.5, 0.5, 0.3, 0.3};
  const AuctionResult result = vickreySelect(bids);
  EXPECT_EQ(result.winner, 0);
  EXPECT_DOUBLE_EQ(result.price, 0.5);
}

TEST(VickreySelect, SymmetricTieGoesToLowestIndex) {
  const std::vector<double> bids{0.9, 0.9, 0.9, 0.9};
  const AuctionResult result = vickreySelect(bids);
  EXPECT_EQ(result.winner, 0);
  EXPECT_DOUBLE_EQ(result.price, 0.9);
}

TEST(VickreySelect, SingleAgentPaysItsClone) {
  const std::vector<double> bids{0.42, 0.42};
  const AuctionResult result = vickreySelect(bids);
  EXPECT_EQ(result.winner, 0);
  EXPECT_DOUBLE_EQ(result.price, 0.42);
}

TEST(VickreySelect, Errors) {
  EXPECT_THROW(vickreySelect(std::vector<double>{}), EmptyBidsError);
  EXPECT_THROW(vickreySelect(std::vector<double>{1.0, 2.0, 3.0}),
               std::invalid_argument);
}

TEST(VickreyUtility, WorkedExample) {
  const std::vector<double> nextBids{0.2, 0.7, 0.1};
  EXPECT_NEAR(vickreyUtility(1.0, 0.99, nextBids, 0.3), 1.393, 1e-12);
}

TEST(VickreyUtility, TerminalTruthfulFixedPoint) {
  EXPECT_DOUBLE_EQ(vickreyUtility(1.0, 0.99, {}, 1.0), 0.0);
}

TEST(CvsAct, DeterministicBiddersWinnerIsArgmaxMean) {
  LearnerConfig config;
  config.cvsBidStd = 1e-9;  // the std -> 0 limit
  CvsLearner cvs(10, 4, config, 3);
  std::mt19937_64 rng(1);
  std::vector<double> input(10, 0.0);
  input[0] = 1.0;
  const std::vector<double> means = cvs.bidMeans(input);
  int argmax = 0;
  for (int k = 1; k < 4; ++k) {
    if (means[k] > means[argmax]) argmax = k;
  }
  const TraceStep step = cvs.act(input, rng);
  EXPECT_EQ(step.chosen, argmax);
}

TEST(CvsAct, OneSelectionFlagPerStepAndAllBidsRecorded) {
  LearnerConfig config;
  CvsLearner cvs(10, 4, config, 5);
  std::mt19937_64 rng(6);
  std::vector<double> input(10, 0.0);
  input[2] = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    const TraceStep step = cvs.act(input, rng);
    EXPECT_EQ(step.bids.size(), 4u);
    const std::vector<int> flags = selectionFlags(step);
    int total = 0;
    for (int f : flags) total += f;
    EXPECT_EQ(total, 1);
    EXPECT_EQ(flags[step.chosen], 1);
  }
}

TEST(CvsUpdate, UnselectedAgentIsBitwiseUntouched) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  config.minibatchSize = 16;
  config.updateEpochs = 2;
  CvsLearner cvs(task.encodingSize(), task.doorCount, config, 11);
  std::vector<TraceStep> batch = collectBatch(task, cvs, 64, 12);
  // reassign every win to agent 0 so agents 1..N-1 have none
  for (TraceStep& step : batch) {
    step.chosen = 0;
    step.logProb = 0.0;  // consistent stored log-prob for agent 0's samples
  }
  // recompute stored log-probs for agent 0 under its own means
  for (TraceStep& step : batch) {
    const double mean = cvs.bidMeans(step.state)[0];
    const double z = (step.bids[0] - mean) / config.cvsBidStd;
    step.logProb = -0.5 * z * z - std::log(config.cvsBidStd) -
                   0.5 * std::log(2.0 * M_PI);
  }
  std::vector<std::vector<double>> before;
  for (const Mlp& net : cvs.bidders()) before.push_back(net.params());
  cvs.update(batch);
  EXPECT_NE(cvs.bidders()[0].params(), before[0]);
  for (size_t k = 1; k < cvs.bidders().size(); ++k) {
    EXPECT_EQ(cvs.bidders()[k].params(), before[k]) << "agent " << k;
  }
}

TEST(CvsUpdate, EmptyBatchRejected) {
  LearnerConfig config;
  CvsLearner cvs(4, 2, config, 1);
  EXPECT_THROW(cvs.update({}), EmptyBatchError);
}

TEST(CvsUpdate, ParameterStorageDisjointAcrossAgents) {
  LearnerConfig config;
  CvsLearner cvs(10, 6, config, 2);
  const auto spans = cvs.decisionParameterSpans();
  ASSERT_EQ(spans.size(), 6u);
  for (size_t i = 0; i < spans.size(); ++i) {
    for (size_t j = i + 1; j < spans.size(); ++j) {
      const bool disjoint =
          spans[i].second <= spans[j].first || spans[j].second <= spans[i].first;
      EXPECT_TRUE(disjoint);
    }
  }
}

TEST(GradientLocality, CvsStepContributionIgnoresOtherSteps) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  CvsLearner cvs(task.encodingSize(), task.doorCount, config, 21);
  std::vector<TraceStep> batch = collectBatch(task, cvs, 128, 22);
  const int t = firstEpisodeStartWithSuccessor(batch);
  const std::vector<double> before = cvs.perStepGradient(batch, t);
  ASSERT_FALSE(before.empty());

  std::vector<TraceStep> perturbed = batch;
  for (size_t tp = 0; tp < batch.size(); ++tp) {
    if (static_cast<int>(tp) == t) continue;
    perturbed[tp].reward += 1.0;
    for (double& b : perturbed[tp].bids) b += 0.25;
  }
  const std::vector<double> after = cvs.perStepGradient(perturbed, t);
  EXPECT_LE(maxAbsDiff(before, after), 1e-12);
}

TEST(GradientLocality, PpoStepContributionCouplesThroughAdvantages) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  PpoLearner ppo(task.encodingSize(), task.doorCount, config, 31);
  std::vector<TraceStep> batch = collectBatch(task, ppo, 128, 32);
  const int t = firstEpisodeStartWithSuccessor(batch);
  ASSERT_FALSE(batch[t].done);  // successor step exists in the same episode
  const std::vector<double> before = ppo.perStepGradient(batch, t);

  std::vector<TraceStep> perturbed = batch;
  perturbed[t + 1].reward += 1.0;  // later reward in the same episode
  const std::vector<double> after = ppo.perStepGradient(perturbed, t);
  EXPECT_GT(maxAbsDiff(before, after), 1e-6);
}

TEST(Ppo, ActionDistributionIsValid) {
  LearnerConfig config;
  PpoLearner ppo(10, 6, config, 41);
  std::vector<double> input(10, 0.0);
  input[3] = 1.0;
  const std::vector<double> probs = ppo.actionProbabilities(input);
  double sum = 0.0;
  for (double p : probs) {
    EXPECT_GE(p, 0.0);
    sum += p;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Ppo, RatioOneGradientEqualsVanillaPolicyGradient) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  config.entropyCoef = 0.0;
  PpoLearner ppo(task.encodingSize(), task.doorCount, config, 51);
  std::vector<TraceStep> batch = collectBatch(task, ppo, 64, 52);
  const int t = 0;
  // stored log-probs came from these same parameters, so the ratio is 1 and
  // the clip is inactive: the surrogate gradient must be the vanilla policy
  // gradient -A * grad(log pi(a|s)) = backward(-A (e_a - p))
  const std::vector<double> grad = ppo.perStepGradient(batch, t);

  Mlp::Cache cache;
  const Mlp& net = ppo.policy();
  const std::vector<double> probs = softmax(net.forward(batch[t].state, cache));
  std::vector<double> unitDz(probs.size(), 0.0);
  for (size_t j = 0; j < probs.size(); ++j) {
    unitDz[j] = -((static_cast<int>(j) == batch[t].chosen ? 1.0 : 0.0) - probs[j]);
  }
  std::vector<double> unitGrad(net.paramCount(), 0.0);
  net.backward(cache, unitDz, unitGrad);

  // grad == A * unitGrad for one scalar A (the advantage at step t)
  double a = 0.0;
  for (int i = 0; i < net.paramCount(); ++i) {
    if (std::abs(unitGrad[i]) > 1e-8) {
      a = grad[i] / unitGrad[i];
      break;
    }
  }
  EXPECT_NE(a, 0.0);
  for (int i = 0; i < net.paramCount(); ++i) {
    EXPECT_NEAR(grad[i], a * unitGrad[i], 1e-9 + 1e-6 * std::abs(grad[i]));
  }
}

TEST(Ppo, ClipBoundaryZeroesTheSurrogateGradient) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  config.entropyCoef = 0.0;
  PpoLearner ppo(task.encodingSize(), task.doorCount, config, 61);
  std::vector<TraceStep> batch = collectBatch(task, ppo, 32, 62);
  // force ratio 1.5 with a positive advantage: clipped objective is constant
  const int t = 0;
  batch[t].logProb = std::log(batch[t].bids[batch[t].chosen]) - std::log(1.5);
  batch[t].reward = 5.0;  // strongly positive advantage at step t
  batch[t].done = true;   // isolate the step as its own episode segment
  const std::vector<double> grad = ppo.perStepGradient(batch, t);
  for (double g : grad) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Ppo, ZeroAdvantageLeavesOnlyTheEntropyTerm) {
  LearnerConfig config;
  PpoLearner ppo(6, 3, config, 71);
  // single-step episode with reward equal to the discounted value drop makes
  // the TD error exactly zero
  std::vector<double> x(6, 0.0);
  x[0] = 1.0;
  std::mt19937_64 rng(72);
  TraceStep step = ppo.act(x, rng);
  step.done = true;
  step.nextState = x;
  step.reward = step.value;  // delta = r + 0 - V = 0
  std::vector<TraceStep> batch{step};

  const std::vector<double> grad = ppo.perStepGradient(batch, 0);
  // finite differences of -entropyCoef * H(pi(s))
  PpoLearner probe = ppo;
  std::vector<double>& params = const_cast<Mlp&>(probe.policy()).params();
  const double h = 1e-6;
  for (int i = 0; i < static_cast<int>(params.size()); i += 23) {
    const double saved = params[i];
    auto entropyLoss = [&] {
      const std::vector<double> p = probe.actionProbabilities(x);
      double entropy = 0.0;
      for (double v : p) {
        if (v > 0) entropy -= v * std::log(v);
      }
      return -config.entropyCoef * entropy;
    };
    params[i] = saved + h;
    const double up = entropyLoss();
    params[i] = saved - h;
    const double down = entropyLoss();
    params[i] = saved;
    EXPECT_NEAR(grad[i], (up - down) / (2.0 * h), 1e-5);
  }
}

TEST(Ppof, EqualLogitsGiveUniformDistribution) {
  LearnerConfig config;
  PpofLearner ppof(4, 3, config, 81);
  // zero out every logit network
  PpofLearner probe = ppof;
  // restore() round trip gives mutable access through checkpoints
  nlohmann::json ckpt = ppof.checkpoint();
  for (auto& net : ckpt["nets"]) {
    for (auto& p : net["params"]) p = 0.0;
  }
  probe.restore(ckpt);
  std::vector<double> x(4, 0.5);
  const std::vector<double> probs = probe.actionProbabilities(x);
  for (double p : probs) EXPECT_NEAR(p, 1.0 / 3, 1e-12);
}

TEST(Ppof, ProbabilitiesSumToOne) {
  LearnerConfig config;
  PpofLearner ppof(10, 6, config, 91);
  std::vector<double> x(10, 0.0);
  x[1] = 1.0;
  x[7] = 1.0;
  const std::vector<double> probs = ppof.actionProbabilities(x);
  double sum = 0.0;
  for (double p : probs) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Ppof, LogProbGradientCouplesAcrossNetworks) {
  // the softmax ties log p(a=k) to every logit network j != k
  LearnerConfig config;
  PpofLearner ppof(5, 3, config, 101);
  std::vector<double> x(5, 0.0);
  x[2] = 1.0;
  const int k = 0;
  const int j = 2;
  nlohmann::json ckpt = ppof.checkpoint();
  auto logProbK = [&](const nlohmann::json& state) {
    PpofLearner probe = ppof;
    probe.restore(state);
    return std::log(probe.actionProbabilities(x)[k]);
  };
  const double h = 1e-6;
  double maxGrad = 0.0;
  for (size_t i = 0; i < ckpt["nets"][j]["params"].size(); i += 17) {
    nlohmann::json up = ckpt;
    up["nets"][j]["params"][i] = up["nets"][j]["params"][i].get<double>() + h;
    nlohmann::json down = ckpt;
    down["nets"][j]["params"][i] = down["nets"][j]["params"][i].get<double>() - h;
    maxGrad = std::max(maxGrad,
                       std::abs(logProbK(up) - logProbK(down)) / (2.0 * h));
  }
  EXPECT_GT(maxGrad, 1e-6);
}

TEST(Ppof, ParameterSpansDisjointUnlikePpo) {
  LearnerConfig config;
  PpofLearner ppof(10, 6, config, 111);
  const auto spans = ppof.decisionParameterSpans();
  for (size_t i = 0; i < spans.size(); ++i) {
    for (size_t j = i + 1; j < spans.size(); ++j) {
      EXPECT_TRUE(spans[i].second <= spans[j].first ||
                  spans[j].second <= spans[i].first);
    }
  }
  PpoLearner ppo(10, 6, config, 112);
  const auto shared = ppo.decisionParameterSpans();
  EXPECT_EQ(shared[0].first, shared[1].first);
  EXPECT_EQ(shared[0].second, shared[1].second);
}

TEST(Learners, CheckpointRoundTripIsBitwise) {
  const TaskSpec task = taskFromId("linear_chain/train");
  LearnerConfig config;
  config.minibatchSize = 32;
  config.updateEpochs = 1;
  for (const std::string& algorithm : {"ppo", "ppof", "cvs"}) {
    auto learner = makeLearner(algorithm, task.encodingSize(), task.doorCount,
                               config, 121);
    auto batch = collectBatch(task, *learner, 64, 122);
    learner->update(batch);
    const nlohmann::json ckpt = learner->checkpoint();

    auto copy = makeLearner(algorithm, task.encodingSize(), task.doorCount,
                            config, 999);
    copy->restore(ckpt);
    std::mt19937_64 rngA(7), rngB(7);
    std::vector<double> x(task.encodingSize(), 0.0);
    x[0] = 1.0;
    const TraceStep a = learner->act(x, rngA);
    const TraceStep b = copy->act(x, rngB);
    EXPECT_EQ(a.bids, b.bids) << algorithm;
    EXPECT_EQ(a.chosen, b.chosen) << algorithm;
  }
}

TEST(Tabular, OneStepTerminalRule) {
  QTable table(4);
  TabularTransition transition{"s", 2, 1.0, "t", true, -1};
  tabularTdUpdate(table, transition, TdKind::QLearning, 0.5, 0.99);
  EXPECT_DOUBLE_EQ(table.value("s", 2), 0.5);
}

TEST(Tabular, UpdateTouchesExactlyOneCell) {
  QTable table(3);
  table.row("a") = {0.1, 0.2, 0.3};
  table.row("b") = {0.4, 0.5, 0.6};
  TabularTransition transition{"a", 1, 0.0, "b", false, 2};
  tabularTdUpdate(table, transition, TdKind::Sarsa, 0.1, 0.9);
  EXPECT_DOUBLE_EQ(table.value("a", 0), 0.1);
  EXPECT_DOUBLE_EQ(table.value("a", 2), 0.3);
  EXPECT_DOUBLE_EQ(table.value("b", 0), 0.4);
  EXPECT_DOUBLE_EQ(table.value("b", 1), 0.5);
  EXPECT_DOUBLE_EQ(table.value("b", 2), 0.6);
  // target = 0 + 0.9 * Q(b, 2) = 0.54; cell = 0.2 + 0.1 (0.54 - 0.2)
  EXPECT_NEAR(table.value("a", 1), 0.234, 1e-12);
}

TEST(Tabular, SarsaAndQLearningDifferOnlyInTarget) {
  QTable q(3), s(3);
  q.row("a") = s.row("a") = {0.0, 0.0, 0.0};
  q.row("b") = s.row("b") = {0.2, 0.9, 0.1};
  TabularTransition transition{"a", 0, 1.0, "b", false, 2};
  tabularTdUpdate(q, transition, TdKind::QLearning, 0.5, 1.0);
  tabularTdUpdate(s, transition, TdKind::Sarsa, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(q.value("a", 0), 0.5 * (1.0 + 0.9));
  EXPECT_DOUBLE_EQ(s.value("a", 0), 0.5 * (1.0 + 0.1));
}

TEST(Tabular, IndexErrors) {
  QTable table(2);
  TabularTransition bad{"s", 5, 0.0, "t", true, -1};
  EXPECT_THROW(tabularTdUpdate(table, bad, TdKind::QLearning, 0.1, 0.9),
               IndexError);
  TabularTransition sarsaNoNext{"s", 0, 0.0, "t", false, -1};
  EXPECT_THROW(tabularTdUpdate(table, sarsaNoNext, TdKind::Sarsa, 0.1, 0.9),
               IndexError);
}

TEST(Tabular, LearnerSolvesLinearChain) {
  TaskSpec task = taskFromId("linear_chain/train");
  // a roomy cap so uniform exploration reaches the reward; the tabular state
  // does not carry the remaining step budget
  task.maxSteps = 20;
  LearnerConfig config;
  config.tabularAlpha = 0.2;
  config.tabularEpsilon = 1.0;  // off-policy: learn from uniform exploration
  auto learner = makeLearner("qlearning", task.encodingSize(), task.doorCount,
                             config, 7);
  std::mt19937_64 envRng(1), actRng(2);
  for (int epoch = 0; epoch < 100; ++epoch) {
    auto batch = collectBatch(task, *learner, 512, 1000 + epoch);
    learner->update(batch);
  }
  // the greedy policy read off the table must follow the optimal sequence
  const auto* tabular = dynamic_cast<const TabularLearner*>(learner.get());
  ASSERT_NE(tabular, nullptr);
  EnvState state = resetEnv(task, envRng);
  double total = 0.0;
  for (int step = 0; step < 5; ++step) {
    const std::string key = tabularStateKey(encode(task, state));
    int action = 0;
    for (int a = 1; a < task.doorCount; ++a) {
      if (tabular->table().value(key, a) > tabular->table().value(key, action)) {
        action = a;
      }
    }
    const StepResult result = stepEnv(task, state, action);
    total += result.reward;
    if (result.done) break;
    state = result.next;
  }
  EXPECT_DOUBLE_EQ(total, 1.0);
  (void)actRng;
}
