#include "modcred/tabular.hpp"

#include <algorithm>
#include <cmath>

#include "modcred/rng.hpp"

namespace modcred {

std::vector<double>& QTable::row(const std::string& state) {
  auto [it, inserted] = rows.try_emplace(state);
  if (inserted) it->second.assign(actionCount, 0.0);
  return it->second;
}

double QTable::value(const std::string& state, int action) const {
  if (action < 0 || action >= actionCount) throw IndexError("bad action");
  auto it = rows.find(state);
  return it == rows.end() ? 0.0 : it->second.at(action);
}

void tabularTdUpdate(QTable& table, const TabularTransition& transition,
                     TdKind kind, double alpha, double gamma) {
  if (transition.action < 0 || transition.action >= table.actionCount) {
    throw IndexError("action out of range");
  }
  double bootstrap = 0.0;
  if (!transition.terminal) {
    if (kind == TdKind::QLearning) {
      const auto it = table.rows.find(transition.nextState);
      if (it != table.rows.end()) {
        bootstrap = *std::max_element(it->second.begin(), it->second.end());
      }
    } else {
      if (transition.nextAction < 0 ||
          transition.nextAction >= table.actionCount) {
        throw IndexError("SARSA update needs the successor action");
      }
      bootstrap = table.value(transition.nextState, transition.nextAction);
    }
  }
  const double target = transition.reward + gamma * bootstrap;
  double& cell = table.row(transition.state)[transition.action];
  cell += alpha * (target - cell);
}

std::string tabularStateKey(std::span<const double> encoded) {
  std::string key;
  key.reserve(encoded.size());
  for (double v : encoded) key.push_back(v > 0.5 ? '1' : '0');
  return key;
}

TabularLearner::TabularLearner(int actions, TdKind kind, LearnerConfig config,
                               std::uint64_t seed)
    : kind_(kind), config_(std::move(config)), table_(actions) {
  (void)seed;  // zero-initialized tables have nothing to randomize
}

int TabularLearner::greedyAction(const std::string& key) const {
  const auto it = table_.rows.find(key);
  if (it == table_.rows.end()) return 0;
  int best = 0;
  for (int a = 1; a < table_.actionCount; ++a) {
    if (it->second[a] > it->second[best]) best = a;
  }
  return best;
}

TraceStep TabularLearner::act(std::span<const double> state,
                              std::mt19937_64& rng) {
  TraceStep step;
  step.state.assign(state.begin(), state.end());
  const std::string key = tabularStateKey(state);
  step.bids.assign(table_.actionCount, 0.0);
  const auto it = table_.rows.find(key);
  if (it != table_.rows.end()) step.bids = it->second;
  const int greedy = greedyAction(key);
  const double u = rngUnit(rng);
  if (u < config_.tabularEpsilon) {
    step.chosen = static_cast<int>(rngUnit(rng) * table_.actionCount);
    step.chosen = std::min(step.chosen, table_.actionCount - 1);
  } else {
    step.chosen = greedy;
  }
  step.value = step.bids[step.chosen];
  return step;
}

void TabularLearner::update(const std::vector<TraceStep>& batch) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  for (size_t i = 0; i < batch.size(); ++i) {
    const TraceStep& step = batch[i];
    TabularTransition transition;
    transition.state = tabularStateKey(step.state);
    transition.action = step.chosen;
    transition.reward = step.reward;
    transition.nextState = tabularStateKey(step.nextState);
    // A batch that ends mid-episode is bootstrapped greedily for SARSA.
    transition.terminal = step.done;
    if (!step.done) {
      transition.nextAction = (i + 1 < batch.size())
                                  ? batch[i + 1].chosen
                                  : greedyAction(transition.nextState);
    }
    tabularTdUpdate(table_, transition, kind_, config_.tabularAlpha,
                    config_.gamma);
  }
}

std::vector<double> TabularLearner::actionProbabilities(
    std::span<const double> state) const {
  const std::string key = tabularStateKey(state);
  std::vector<double> probs(table_.actionCount,
                            config_.tabularEpsilon / table_.actionCount);
  probs[greedyAction(key)] += 1.0 - config_.tabularEpsilon;
  return probs;
}

std::vector<std::pair<const double*, const double*>>
TabularLearner::decisionParameterSpans() const {
  // Columns of the table are disjoint by construction; there is no contiguous
  // per-action storage to expose.
  return {};
}

std::vector<double> TabularLearner::perStepGradient(
    const std::vector<TraceStep>& batch, int t) const {
  const TraceStep& step = batch.at(t);
  const std::string key = tabularStateKey(step.state);
  double bootstrap = 0.0;
  if (!step.done) {
    const std::string nextKey = tabularStateKey(step.nextState);
    bootstrap = table_.value(nextKey, greedyAction(nextKey));
  }
  const double target = step.reward + config_.gamma * bootstrap;
  return {target - table_.value(key, step.chosen)};
}

nlohmann::json TabularLearner::checkpoint() const {
  nlohmann::json rows = nlohmann::json::object();
  for (const auto& [key, values] : table_.rows) rows[key] = values;
  return {{"version", 1},
          {"algorithm", name()},
          {"actions", table_.actionCount},
          {"rows", rows}};
}

void TabularLearner::restore(const nlohmann::json& j) {
  table_ = QTable(j.at("actions").get<int>());
  for (const auto& [key, values] : j.at("rows").items()) {
    table_.rows[key] = values.get<std::vector<double>>();
  }
}

}  // namespace modcred
