#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "modcred/learners.hpp"

namespace modcred {

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

enum class TdKind { QLearning, Sarsa };

/// Q-table keyed by discrete state keys. Rows are created zero-initialized on
/// first touch; each action owns one column, so a TD update writes exactly
/// one cell.
struct QTable {
  int actionCount = 0;

  explicit QTable(int actions = 0) : actionCount(actions) {}

  std::vector<double>& row(const std::string& state);
  double value(const std::string& state, int action) const;

  std::map<std::string, std::vector<double>> rows;
};

struct TabularTransition {
  std::string state;
  int action = 0;
  double reward = 0.0;
  std::string nextState;
  bool terminal = false;
  int nextAction = -1;  // the action taken at nextState (SARSA target)
};

// Standard TD(0) update: Q-learning bootstraps from max_a' Q(s',a'), SARSA
// from Q(s', a'). Touches only the (state, action) cell.
void tabularTdUpdate(QTable& table, const TabularTransition& transition,
                     TdKind kind, double alpha, double gamma);

std::string tabularStateKey(std::span<const double> encoded);

/// Epsilon-greedy tabular TD(0) learner over encoded binary states.
class TabularLearner : public Learner {
 public:
  TabularLearner(int actions, TdKind kind, LearnerConfig config,
                 std::uint64_t seed);

  std::string name() const override {
    return kind_ == TdKind::QLearning ? "qlearning" : "sarsa";
  }
  int actionCount() const override { return table_.actionCount; }
  int inputSize() const override { return -1; }
  TraceStep act(std::span<const double> state, std::mt19937_64& rng) override;
  void update(const std::vector<TraceStep>& batch) override;
  std::vector<double> actionProbabilities(
      std::span<const double> state) const override;
  std::vector<std::pair<const double*, const double*>> decisionParameterSpans()
      const override;
  std::vector<double> perStepGradient(const std::vector<TraceStep>& batch,
                                      int t) const override;
  nlohmann::json checkpoint() const override;
  void restore(const nlohmann::json& j) override;

  const QTable& table() const { return table_; }

 private:
  int greedyAction(const std::string& key) const;

  TdKind kind_;
  LearnerConfig config_;
  QTable table_;
};

}  // namespace modcred
