#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modcred/mlp.hpp"

namespace modcred {

class EmptyBidsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EmptyBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One recorded decision step. `bids` holds b_t^{1..N}: action probabilities
/// for the policy-gradient learners, sampled bid values for CVS. Selection
/// flags w_t^k are implied by `chosen`.
struct TraceStep {
  std::vector<double> state;
  std::vector<double> bids;
  int chosen = 0;
  double reward = 0.0;
  std::vector<double> nextState;
  bool done = false;
  double logProb = 0.0;
  double value = 0.0;
};

std::vector<int> selectionFlags(const TraceStep& step);

struct LearnerConfig {
  double policyLr = 4e-5;
  double valueLr = 5e-3;
  double clipRatio = 0.2;
  double gaeLambda = 0.95;
  double gamma = 0.99;
  double entropyCoef = 0.1;
  int batchSize = 4096;
  int minibatchSize = 256;
  int updateEpochs = 8;
  std::vector<int> hidden{20, 20};
  bool normalizeAdvantages = false;
  double cvsBidStd = 0.05;
  // "regression": semi-gradient TD(0) pulling the bid mean to the Eq.-1
  // target (the truthful fixed point, where the winner's utility is 0).
  // "surrogate": clipped PPO step on the winner's utility with a private
  // baseline. Both update only the steps an agent won.
  std::string cvsBidObjective = "regression";
  double tabularAlpha = 0.1;
  double tabularEpsilon = 0.1;

  nlohmann::json toJson() const;
  void applyOverrides(const nlohmann::json& j);
};

/// Cloned Vickrey selection over 2N bids laid out agent-major:
/// {agent0 clone0, agent0 clone1, agent1 clone0, ...}. The winner is the
/// agent holding the highest bid (ties to the lowest agent index); the price
/// is the highest bid once that single winning bid is removed, so the
/// winner's own clone can set the price.
struct AuctionResult {
  int winner = 0;
  double price = 0.0;
};
AuctionResult vickreySelect(std::span<const double> clonedBids);

// Eq-style winner utility: reward + gamma * max successor bid - price; the
// successor max term is 0 when `nextBids` is empty (terminal step). Losers
// receive exactly 0 (caller side).
double vickreyUtility(double reward, double gamma,
                      std::span<const double> nextBids, double price);

class Learner {
 public:
  virtual ~Learner() = default;
  virtual std::string name() const = 0;
  virtual int actionCount() const = 0;
  virtual int inputSize() const = 0;

  // Samples an action; fills state, bids, chosen, logProb and value.
  virtual TraceStep act(std::span<const double> state, std::mt19937_64& rng) = 0;
  virtual void update(const std::vector<TraceStep>& batch) = 0;
  // Exact probability of each action under the current stochastic policy.
  virtual std::vector<double> actionProbabilities(
      std::span<const double> state) const = 0;

  // Parameter storage of each decision mechanism; overlapping spans mean the
  // mechanisms share parameters.
  virtual std::vector<std::pair<const double*, const double*>>
  decisionParameterSpans() const = 0;

  // Gradient contribution of step t of the batch to the parameters of the
  // mechanism credited at that step, evaluated at the current (frozen)
  // parameters.
  virtual std::vector<double> perStepGradient(
      const std::vector<TraceStep>& batch, int t) const = 0;

  virtual nlohmann::json checkpoint() const = 0;
  virtual void restore(const nlohmann::json& j) = 0;
};

class PpoLearner : public Learner {
 public:
  PpoLearner(int inputSize, int actions, LearnerConfig config,
             std::uint64_t seed);

  std::string name() const override { return "ppo"; }
  int actionCount() const override { return actions_; }
  int inputSize() const override { return policy_.inputSize(); }
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

  const Mlp& policy() const { return policy_; }
  const Mlp& valueFunction() const { return value_; }

 private:
  int actions_;
  LearnerConfig config_;
  Mlp policy_;
  Mlp value_;
  AdamState policyOpt_;
  AdamState valueOpt_;
  std::mt19937_64 updateRng_;
};

class PpofLearner : public Learner {
 public:
  PpofLearner(int inputSize, int actions, LearnerConfig config,
              std::uint64_t seed);

  std::string name() const override { return "ppof"; }
  int actionCount() const override { return actions_; }
  int inputSize() const override { return value_.inputSize(); }
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

  std::vector<double> logits(std::span<const double> state) const;
  const std::vector<Mlp>& logitNetworks() const { return nets_; }

 private:
  int actions_;
  LearnerConfig config_;
  std::vector<Mlp> nets_;  // one single-output network per action logit
  Mlp value_;              // one shared baseline
  std::vector<AdamState> netOpts_;
  AdamState valueOpt_;
  std::mt19937_64 updateRng_;
};

/// Society of per-decision agents: bidder network (state -> squashed Gaussian
/// bid mean, fixed std) plus a private value baseline, parameters pairwise
/// disjoint across agents. Selection is the cloned Vickrey auction.
class CvsLearner : public Learner {
 public:
  CvsLearner(int inputSize, int actions, LearnerConfig config,
             std::uint64_t seed);

  std::string name() const override { return "cvs"; }
  int actionCount() const override { return actions_; }
  int inputSize() const override { return bidders_.front().inputSize(); }
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

  std::vector<double> bidMeans(std::span<const double> state) const;
  const std::vector<Mlp>& bidders() const { return bidders_; }
  // Winner utilities per step with the successor max-bid treated as a
  // constant target recomputed from the frozen bidders (0 when done).
  std::vector<double> stepUtilities(const std::vector<TraceStep>& batch) const;

 private:
  int actions_;
  LearnerConfig config_;
  std::vector<Mlp> bidders_;
  std::vector<Mlp> baselines_;
  std::vector<AdamState> bidderOpts_;
  std::vector<AdamState> baselineOpts_;
  std::mt19937_64 updateRng_;
};

std::unique_ptr<Learner> makeLearner(const std::string& algorithm,
                                     int inputSize, int actions,
                                     const LearnerConfig& config,
                                     std::uint64_t seed);

}  // namespace modcred
