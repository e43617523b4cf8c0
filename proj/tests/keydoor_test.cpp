#include "modcred/keydoor.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace modcred;

namespace {

EnvState stateAt(const TaskSpec& task, int subtask, int position) {
  EnvState state;
  const Subtask& sub = task.subtasks.at(subtask);
  state.room = sub.rooms.at(position);
  state.subtask = subtask;
  state.key = task.keyAt(state.room, subtask).value();
  return state;
}

// Runs the subtask's optimal door sequence and returns (total reward, steps).
std::pair<double, int> playOptimal(const TaskSpec& task, int subtask) {
  EnvState state = stateAt(task, subtask, 0);
  double total = 0.0;
  int steps = 0;
  for (int action : optimalSequence(task, subtask)) {
    const StepResult result = stepEnv(task, state, action);
    total += result.reward;
    ++steps;
    state = result.next;
    if (result.done) break;
  }
  return {total, steps};
}

}  // namespace

TEST(MakeTask, LinearChainOptimalSequences) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  EXPECT_EQ(optimalSequence(train, 0), (std::vector<int>{0, 1, 2}));  // A B C

  const TaskSpec last = makeTask(Topology::LinearChain, "transfer_last");
  EXPECT_EQ(optimalSequence(last, 0), (std::vector<int>{0, 1, 3}));  // A B D

  const TaskSpec first = makeTask(Topology::LinearChain, "transfer_first");
  EXPECT_EQ(optimalSequence(first, 0), (std::vector<int>{5, 1, 2}));  // F B C

  const TaskSpec middle = makeTask(Topology::LinearChain, "transfer_middle");
  EXPECT_EQ(optimalSequence(middle, 0), (std::vector<int>{0, 4, 2}));  // A E C
}

TEST(MakeTask, LetterAliasesMatchFigureLabels) {
  EXPECT_EQ(makeTask(Topology::LinearChain, "a").id, "linear_chain/train");
  EXPECT_EQ(makeTask(Topology::LinearChain, "d").id, "linear_chain/transfer_last");
  EXPECT_EQ(taskFromId("common_ancestor/b").id, "common_ancestor/transfer_root");
  EXPECT_THROW(makeTask(Topology::LinearChain, "e"), UnknownVariantError);
  EXPECT_THROW(taskFromId("no_such_topology/train"), UnknownVariantError);
  EXPECT_THROW(taskFromId("plain-id"), UnknownVariantError);
}

TEST(MakeTask, CommonAncestorMixture) {
  const TaskSpec train = makeTask(Topology::CommonAncestor, "train");
  ASSERT_EQ(train.subtasks.size(), 2u);
  EXPECT_EQ(optimalSequence(train, 0), (std::vector<int>{0, 1}));  // A B
  EXPECT_EQ(optimalSequence(train, 1), (std::vector<int>{0, 2}));  // A C
  EXPECT_DOUBLE_EQ(train.subtasks[0].weight, 0.5);
  // after door A, the key is B for one subtask and C for the other
  EXPECT_EQ(train.keyAt(1, 0).value(), 1);
  EXPECT_EQ(train.keyAt(1, 1).value(), 2);
}

TEST(MakeTask, CommonDescendantSharesLastDecision) {
  const TaskSpec train = makeTask(Topology::CommonDescendant, "train");
  EXPECT_EQ(optimalSequence(train, 0), (std::vector<int>{0, 2}));  // A C
  EXPECT_EQ(optimalSequence(train, 1), (std::vector<int>{1, 2}));  // B C
  const TaskSpec shared = makeTask(Topology::CommonDescendant, "transfer_shared");
  EXPECT_EQ(optimalSequence(shared, 0), (std::vector<int>{0, 3}));  // A D
  EXPECT_EQ(optimalSequence(shared, 1), (std::vector<int>{1, 3}));  // B D
}

TEST(MakeTask, ForgettingPair) {
  const TaskSpec a = makeTask(Topology::Forgetting, "a");
  const TaskSpec b = makeTask(Topology::Forgetting, "b");
  EXPECT_EQ(optimalSequence(a, 0), (std::vector<int>{0, 2}));  // A C
  EXPECT_EQ(optimalSequence(b, 0), (std::vector<int>{1, 3}));  // B D
  EXPECT_EQ(a.doorCount, 4);
  EXPECT_TRUE(a.hasContextBit);
  // disjoint starts and terminals; shared middle room distinguished by the
  // context bit
  EXPECT_NE(a.subtasks[0].rooms.front(), b.subtasks[0].rooms.front());
  EXPECT_NE(a.subtasks[0].rooms.back(), b.subtasks[0].rooms.back());
  EXPECT_EQ(a.subtasks[0].rooms[1], b.subtasks[0].rooms[1]);
  const std::vector<double> middleA = encode(a, stateAt(a, 0, 1));
  const std::vector<double> middleB = encode(b, stateAt(b, 0, 1));
  EXPECT_EQ(middleA.back(), 0.0);
  EXPECT_EQ(middleB.back(), 1.0);
  EXPECT_NE(middleA, middleB);
}

TEST(Encode, AppendixVectorsVerbatim) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  EnvState room0 = stateAt(train, 0, 0);
  EXPECT_EQ(encode(train, room0),
            (std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 0, 0}));

  EnvState room2d = stateAt(train, 0, 2);
  room2d.key = 3;  // key for D
  EXPECT_EQ(encode(train, room2d),
            (std::vector<double>{0, 0, 1, 0, 0, 0, 0, 1, 0, 0}));
}

TEST(Encode, OptimalPathListings) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  const std::vector<std::vector<double>> expectedTrain{
      {1, 0, 0, 0, 1, 0, 0, 0, 0, 0},
      {0, 1, 0, 0, 0, 1, 0, 0, 0, 0},
      {0, 0, 1, 0, 0, 0, 1, 0, 0, 0}};
  for (int pos = 0; pos < 3; ++pos) {
    EXPECT_EQ(encode(train, stateAt(train, 0, pos)), expectedTrain[pos]);
  }
  const TaskSpec transfer = makeTask(Topology::LinearChain, "transfer_last");
  const std::vector<std::vector<double>> expectedTransfer{
      {1, 0, 0, 0, 1, 0, 0, 0, 0, 0},
      {0, 1, 0, 0, 0, 1, 0, 0, 0, 0},
      {0, 0, 1, 0, 0, 0, 0, 1, 0, 0}};
  for (int pos = 0; pos < 3; ++pos) {
    EXPECT_EQ(encode(transfer, stateAt(transfer, 0, pos)), expectedTransfer[pos]);
  }
}

TEST(Encode, InjectiveOverReachableStates) {
  // distinct observations (room, key, context) must encode distinctly;
  // subtasks may legitimately share an observation (common ancestor room 0)
  for (const std::string& id : allTaskIds()) {
    const TaskSpec task = taskFromId(id);
    std::set<std::tuple<int, int, int>> observations;
    std::set<std::vector<double>> encodings;
    for (size_t m = 0; m < task.subtasks.size(); ++m) {
      for (size_t pos = 0; pos + 1 < task.subtasks[m].rooms.size(); ++pos) {
        const EnvState state =
            stateAt(task, static_cast<int>(m), static_cast<int>(pos));
        observations.insert(
            {state.room, state.key, task.subtasks[m].contextBit});
        encodings.insert(encode(task, state));
      }
    }
    EXPECT_EQ(encodings.size(), observations.size()) << id;
  }
}

TEST(Reset, SingleSubtaskIsDeterministic) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  std::mt19937_64 rng(3);
  const EnvState state = resetEnv(train, rng);
  EXPECT_EQ(state.room, 0);
  EXPECT_EQ(state.key, 0);  // key A
  EXPECT_EQ(state.stepsTaken, 0);
}

TEST(Reset, MixtureFrequenciesMatchWeights) {
  const TaskSpec train = makeTask(Topology::CommonAncestor, "train");
  std::mt19937_64 rng(11);
  int first = 0;
  const int episodes = 10000;
  for (int e = 0; e < episodes; ++e) {
    if (resetEnv(train, rng).subtask == 0) ++first;
  }
  EXPECT_NEAR(first / static_cast<double>(episodes), 0.5, 0.02);
}

TEST(Reset, ForgettingStartRooms) {
  std::mt19937_64 rng(0);
  EXPECT_EQ(resetEnv(makeTask(Topology::Forgetting, "a"), rng).room, 0);
  EXPECT_EQ(resetEnv(makeTask(Topology::Forgetting, "b"), rng).room, 1);
}

TEST(Step, TransitionRules) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  const EnvState start = stateAt(train, 0, 0);

  const StepResult correct = stepEnv(train, start, 0);  // door A
  EXPECT_EQ(correct.next.room, 1);
  EXPECT_EQ(correct.next.key, 1);  // key B per schedule
  EXPECT_DOUBLE_EQ(correct.reward, 0.0);
  EXPECT_FALSE(correct.done);

  const StepResult wrong = stepEnv(train, start, 5);  // door F
  EXPECT_EQ(wrong.next.room, 0);
  EXPECT_EQ(wrong.next.key, 0);
  EXPECT_DOUBLE_EQ(wrong.reward, 0.0);
  EXPECT_FALSE(wrong.done);

  const StepResult final = stepEnv(train, stateAt(train, 0, 2), 2);  // door C
  EXPECT_DOUBLE_EQ(final.reward, 1.0);
  EXPECT_TRUE(final.done);

  EXPECT_THROW(stepEnv(train, start, 6), std::invalid_argument);
}

TEST(Step, DeterministicForIdenticalInputs) {
  const TaskSpec train = makeTask(Topology::CommonDescendant, "train");
  const EnvState state = stateAt(train, 1, 0);
  for (int action = 0; action < train.doorCount; ++action) {
    const StepResult a = stepEnv(train, state, action);
    const StepResult b = stepEnv(train, state, action);
    EXPECT_EQ(a.next.room, b.next.room);
    EXPECT_EQ(a.next.key, b.next.key);
    EXPECT_DOUBLE_EQ(a.reward, b.reward);
    EXPECT_EQ(a.done, b.done);
  }
}

TEST(Step, EpisodeCapTerminatesWithoutReward) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  EnvState state = stateAt(train, 0, 0);
  double total = 0.0;
  bool done = false;
  int steps = 0;
  while (!done) {
    const StepResult result = stepEnv(train, state, 5);  // always the wrong door
    total += result.reward;
    done = result.done;
    state = result.next;
    ++steps;
  }
  EXPECT_EQ(steps, train.maxSteps);
  EXPECT_DOUBLE_EQ(total, 0.0);
}

TEST(Step, RewardSupportIsZeroOne) {
  const TaskSpec task = makeTask(Topology::CommonAncestor, "train");
  std::mt19937_64 rng(5);
  for (int episode = 0; episode < 200; ++episode) {
    EnvState state = resetEnv(task, rng);
    bool done = false;
    int rewardSteps = 0;
    while (!done) {
      const int action = static_cast<int>(rng() % task.doorCount);
      const StepResult result = stepEnv(task, state, action);
      EXPECT_TRUE(result.reward == 0.0 || result.reward == 1.0);
      if (result.reward == 1.0) {
        ++rewardSteps;
        EXPECT_TRUE(result.done);
      }
      done = result.done;
      state = result.next;
    }
    EXPECT_LE(rewardSteps, 1);
  }
}

TEST(Step, OptimalRolloutsSucceedAndNeverRevisit) {
  for (const std::string& id : allTaskIds()) {
    const TaskSpec task = taskFromId(id);
    for (size_t m = 0; m < task.subtasks.size(); ++m) {
      const auto [reward, steps] = playOptimal(task, static_cast<int>(m));
      EXPECT_DOUBLE_EQ(reward, 1.0) << id;
      EXPECT_EQ(steps, static_cast<int>(optimalSequence(task, m).size())) << id;

      // acyclic: encoded states along the optimal path are pairwise distinct
      std::set<std::vector<double>> visited;
      EnvState state = stateAt(task, static_cast<int>(m), 0);
      visited.insert(encode(task, state));
      for (int action : optimalSequence(task, static_cast<int>(m))) {
        const StepResult result = stepEnv(task, state, action);
        state = result.next;
        if (result.done) break;
        EXPECT_TRUE(visited.insert(encode(task, state)).second) << id;
      }
    }
  }
}

TEST(Intervention, TransferTasksDifferInExactlyOneEntry) {
  for (Topology t : {Topology::LinearChain, Topology::CommonAncestor,
                     Topology::CommonDescendant}) {
    const TaskSpec train = makeTask(t, "train");
    for (const std::string& variant : taskVariants(t)) {
      if (variant == "train") continue;
      const TaskSpec transfer = makeTask(t, variant);
      EXPECT_EQ(scheduleDiffCount(train, transfer), 1)
          << topologyName(t) << "/" << variant;
    }
  }
}

TEST(Intervention, ApplyTwiceRestoresOriginal) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  const TaskSpec once = applyIntervention(train, "transfer_last");
  EXPECT_EQ(once.id, "linear_chain/transfer_last");
  EXPECT_EQ(scheduleDiffCount(train, once), 1);
  const TaskSpec twice = applyIntervention(once, "transfer_last");
  EXPECT_EQ(twice.id, "linear_chain/train");
  EXPECT_EQ(scheduleDiffCount(train, twice), 0);
}

TEST(Intervention, UnknownVariantRejected) {
  const TaskSpec train = makeTask(Topology::LinearChain, "train");
  EXPECT_THROW(applyIntervention(train, "transfer_nowhere"), UnknownVariantError);
  EXPECT_THROW(applyIntervention(makeTask(Topology::Forgetting, "a"), "b"),
               UnknownVariantError);
}

TEST(TaskJson, DumpCarriesOptimalSequences) {
  const nlohmann::json j = makeTask(Topology::LinearChain, "train").toJson();
  EXPECT_EQ(j.at("id"), "linear_chain/train");
  EXPECT_EQ(j.at("optimal_sequences")[0],
            (std::vector<std::string>{"A", "B", "C"}));
  EXPECT_EQ(j.at("encoding_size").get<int>(), 10);
  // one spare step beyond the three-decision solution
  EXPECT_EQ(j.at("max_steps").get<int>(), 4);
}

TEST(TaskJson, StepCapIsSolutionLengthPlusOne) {
  EXPECT_EQ(taskFromId("linear_chain/train").maxSteps, 4);
  EXPECT_EQ(taskFromId("common_ancestor/train").maxSteps, 3);
  EXPECT_EQ(taskFromId("common_descendant/train").maxSteps, 3);
  EXPECT_EQ(taskFromId("forgetting/a").maxSteps, 3);
}

TEST(TaskJson, AllTaskIdsRoundTripThroughRegistry) {
  const std::vector<std::string> ids = allTaskIds();
  EXPECT_EQ(ids.size(), 14u);  // 3 topologies x 4 variants + forgetting pair
  for (const std::string& id : ids) {
    EXPECT_EQ(taskFromId(id).id, id);
  }
}
