#include "modcred/learners.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "modcred/rng.hpp"
#include "modcred/tabular.hpp"

namespace modcred {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double normalCdf(double x) { return 0.5 * std::erfc(-x / M_SQRT2); }

double gaussianLogPdf(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * M_PI);
}

std::string rngToString(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rngFromString(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  return rng;
}

int sampleCategorical(const std::vector<double>& probs, std::mt19937_64& rng) {
  const double u = rngUnit(rng);
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// Episode-segmented GAE over a collected batch. Values are recomputed from
// the value network; a batch that ends mid-episode bootstraps from the value
// of the last successor state.
struct BatchAdvantages {
  std::vector<double> advantages;
  std::vector<double> valueTargets;
};

BatchAdvantages computeAdvantages(const std::vector<TraceStep>& batch,
                                  const Mlp& valueNet, double gamma,
                                  double lambda, bool normalize) {
  const int n = static_cast<int>(batch.size());
  std::vector<double> values(n);
  for (int i = 0; i < n; ++i) {
    values[i] = valueNet.forward(batch[i].state)[0];
  }
  BatchAdvantages out;
  out.advantages.assign(n, 0.0);
  out.valueTargets.assign(n, 0.0);
  int start = 0;
  while (start < n) {
    int end = start;
    while (end < n && !batch[end].done) ++end;
    const bool terminated = end < n;
    if (end < n) ++end;  // include the terminal step
    const int len = end - start;
    std::vector<double> rewards(len), segValues(len);
    for (int i = 0; i < len; ++i) {
      rewards[i] = batch[start + i].reward;
      segValues[i] = values[start + i];
    }
    const double bootstrap =
        terminated ? 0.0 : valueNet.forward(batch[end - 1].nextState)[0];
    std::vector<double> adv = gae(rewards, segValues, bootstrap, gamma, lambda);
    for (int i = 0; i < len; ++i) {
      out.advantages[start + i] = adv[i];
      out.valueTargets[start + i] = adv[i] + segValues[i];
    }
    start = end;
  }
  if (normalize && n > 1) {
    double mean = 0.0;
    for (double a : out.advantages) mean += a;
    mean /= n;
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double std = std::sqrt(var / n) + 1e-8;
    for (double& a : out.advantages) a = (a - mean) / std;
  }
  return out;
}

// d(-clipped surrogate)/d logProbNew for one sample; zero when the clipped
// branch is active.
double surrogateScale(double ratio, double advantage, double clip) {
  const double s1 = ratio * advantage;
  const double s2 = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  return s1 <= s2 ? ratio * advantage : 0.0;
}

// dLoss/dLogits for the categorical policy terms shared by PPO and PPOF.
std::vector<double> policyLogitGrad(const std::vector<double>& probs,
                                    int action, double ratio, double advantage,
                                    double clip, double entropyCoef) {
  const int n = static_cast<int>(probs.size());
  const double scale = surrogateScale(ratio, advantage, clip);
  double entropy = 0.0;
  for (double p : probs) {
    if (p > 0.0) entropy -= p * std::log(p);
  }
  std::vector<double> dz(n, 0.0);
  for (int j = 0; j < n; ++j) {
    const double indicator = j == action ? 1.0 : 0.0;
    dz[j] = -scale * (indicator - probs[j]);
    if (probs[j] > 0.0) {
      dz[j] += entropyCoef * probs[j] * (std::log(probs[j]) + entropy);
    }
  }
  return dz;
}

std::vector<int> minibatchOrder(int n, std::mt19937_64& rng) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rngUnit(rng) * (i + 1));
    std::swap(order[i], order[std::min(j, i)]);
  }
  return order;
}

}  // namespace

std::vector<int> selectionFlags(const TraceStep& step) {
  std::vector<int> flags(step.bids.size(), 0);
  flags.at(step.chosen) = 1;
  return flags;
}

nlohmann::json LearnerConfig::toJson() const {
  return {{"policy_lr", policyLr},
          {"value_lr", valueLr},
          {"clip", clipRatio},
          {"gae_lambda", gaeLambda},
          {"gamma", gamma},
          {"entropy_coef", entropyCoef},
          {"batch_size", batchSize},
          {"minibatch_size", minibatchSize},
          {"update_epochs", updateEpochs},
          {"hidden", hidden},
          {"normalize_advantages", normalizeAdvantages},
          {"cvs_bid_std", cvsBidStd},
          {"cvs_bid_objective", cvsBidObjective},
          {"tabular_alpha", tabularAlpha},
          {"tabular_epsilon", tabularEpsilon}};
}

void LearnerConfig::applyOverrides(const nlohmann::json& j) {
  if (j.contains("policy_lr")) policyLr = j["policy_lr"].get<double>();
  if (j.contains("value_lr")) valueLr = j["value_lr"].get<double>();
  if (j.contains("clip")) clipRatio = j["clip"].get<double>();
  if (j.contains("gae_lambda")) gaeLambda = j["gae_lambda"].get<double>();
  if (j.contains("gamma")) gamma = j["gamma"].get<double>();
  if (j.contains("entropy_coef")) entropyCoef = j["entropy_coef"].get<double>();
  if (j.contains("batch_size")) batchSize = j["batch_size"].get<int>();
  if (j.contains("minibatch_size")) minibatchSize = j["minibatch_size"].get<int>();
  if (j.contains("update_epochs")) updateEpochs = j["update_epochs"].get<int>();
  if (j.contains("hidden")) hidden = j["hidden"].get<std::vector<int>>();
  if (j.contains("normalize_advantages")) {
    normalizeAdvantages = j["normalize_advantages"].get<bool>();
  }
  if (j.contains("cvs_bid_std")) cvsBidStd = j["cvs_bid_std"].get<double>();
  if (j.contains("cvs_bid_objective")) {
    cvsBidObjective = j["cvs_bid_objective"].get<std::string>();
    if (cvsBidObjective != "regression" && cvsBidObjective != "surrogate") {
      throw std::invalid_argument("cvs_bid_objective must be regression|surrogate");
    }
  }
  if (j.contains("tabular_alpha")) tabularAlpha = j["tabular_alpha"].get<double>();
  if (j.contains("tabular_epsilon")) {
    tabularEpsilon = j["tabular_epsilon"].get<double>();
  }
}

AuctionResult vickreySelect(std::span<const double> clonedBids) {
  if (clonedBids.empty()) throw EmptyBidsError("no bids");
  if (clonedBids.size() % 2 != 0) {
    throw std::invalid_argument("cloned bids come in pairs");
  }
  int best = 0;
  for (int i = 1; i < static_cast<int>(clonedBids.size()); ++i) {
    if (clonedBids[i] > clonedBids[best]) best = i;
  }
  AuctionResult result;
  result.winner = best / 2;
  double price = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(clonedBids.size()); ++i) {
    if (i == best) continue;
    price = std::max(price, clonedBids[i]);
  }
  result.price = price;
  return result;
}

double vickreyUtility(double reward, double gamma,
                      std::span<const double> nextBids, double price) {
  double maxNext = 0.0;
  if (!nextBids.empty()) {
    maxNext = *std::max_element(nextBids.begin(), nextBids.end());
  }
  return reward + gamma * maxNext - price;
}

// ---------------------------------------------------------------------------
// PPO

PpoLearner::PpoLearner(int inputSize, int actions, LearnerConfig config,
                       std::uint64_t seed)
    : actions_(actions), config_(std::move(config)) {
  std::vector<int> policySizes{inputSize};
  std::vector<int> valueSizes{inputSize};
  for (int h : config_.hidden) {
    policySizes.push_back(h);
    valueSizes.push_back(h);
  }
  policySizes.push_back(actions);
  valueSizes.push_back(1);
  policy_ = Mlp(policySizes, mixSeed(seed, 1));
  value_ = Mlp(valueSizes, mixSeed(seed, 2));
  policyOpt_ = AdamState(policy_.paramCount(), config_.policyLr);
  valueOpt_ = AdamState(value_.paramCount(), config_.valueLr);
  updateRng_.seed(mixSeed(seed, 3));
}

TraceStep PpoLearner::act(std::span<const double> state, std::mt19937_64& rng) {
  TraceStep step;
  step.state.assign(state.begin(), state.end());
  step.bids = softmax(policy_.forward(state));
  step.chosen = sampleCategorical(step.bids, rng);
  step.logProb = std::log(step.bids[step.chosen]);
  step.value = value_.forward(state)[0];
  return step;
}

std::vector<double> PpoLearner::actionProbabilities(
    std::span<const double> state) const {
  return softmax(policy_.forward(state));
}

void PpoLearner::update(const std::vector<TraceStep>& batch) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  const BatchAdvantages adv =
      computeAdvantages(batch, value_, config_.gamma, config_.gaeLambda,
                        config_.normalizeAdvantages);
  const int n = static_cast<int>(batch.size());
  std::vector<double> policyGrad(policy_.paramCount());
  std::vector<double> valueGrad(value_.paramCount());
  Mlp::Cache cache, vcache;
  for (int epoch = 0; epoch < config_.updateEpochs; ++epoch) {
    const std::vector<int> order = minibatchOrder(n, updateRng_);
    for (int begin = 0; begin < n; begin += config_.minibatchSize) {
      const int end = std::min(n, begin + config_.minibatchSize);
      const double invSize = 1.0 / (end - begin);
      std::fill(policyGrad.begin(), policyGrad.end(), 0.0);
      std::fill(valueGrad.begin(), valueGrad.end(), 0.0);
      for (int pos = begin; pos < end; ++pos) {
        const TraceStep& step = batch[order[pos]];
        const std::vector<double> probs = softmax(policy_.forward(step.state, cache));
        const double logpNew = std::log(probs[step.chosen]);
        const double ratio = std::exp(logpNew - step.logProb);
        std::vector<double> dz = policyLogitGrad(
            probs, step.chosen, ratio, adv.advantages[order[pos]],
            config_.clipRatio, config_.entropyCoef);
        for (double& g : dz) g *= invSize;
        policy_.backward(cache, dz, policyGrad);

        const double v = value_.forward(step.state, vcache)[0];
        const double dv = (v - adv.valueTargets[order[pos]]) * invSize;
        value_.backward(vcache, std::vector<double>{dv}, valueGrad);
      }
      policyOpt_.update(policy_.params(), policyGrad);
      valueOpt_.update(value_.params(), valueGrad);
    }
  }
}

std::vector<std::pair<const double*, const double*>>
PpoLearner::decisionParameterSpans() const {
  // every decision mechanism is the same monolithic network
  const double* begin = policy_.params().data();
  const double* end = begin + policy_.paramCount();
  return std::vector<std::pair<const double*, const double*>>(
      actions_, {begin, end});
}

std::vector<double> PpoLearner::perStepGradient(
    const std::vector<TraceStep>& batch, int t) const {
  const BatchAdvantages adv =
      computeAdvantages(batch, value_, config_.gamma, config_.gaeLambda,
                        config_.normalizeAdvantages);
  const TraceStep& step = batch.at(t);
  Mlp::Cache cache;
  const std::vector<double> probs = softmax(policy_.forward(step.state, cache));
  const double logpNew = std::log(probs[step.chosen]);
  const double ratio = std::exp(logpNew - step.logProb);
  const std::vector<double> dz =
      policyLogitGrad(probs, step.chosen, ratio, adv.advantages[t],
                      config_.clipRatio, config_.entropyCoef);
  std::vector<double> grad(policy_.paramCount(), 0.0);
  policy_.backward(cache, dz, grad);
  return grad;
}

nlohmann::json PpoLearner::checkpoint() const {
  return {{"version", 1},
          {"algorithm", "ppo"},
          {"policy", policy_.toJson()},
          {"value", value_.toJson()},
          {"policy_opt", policyOpt_.toJson()},
          {"value_opt", valueOpt_.toJson()},
          {"update_rng", rngToString(updateRng_)}};
}

void PpoLearner::restore(const nlohmann::json& j) {
  policy_ = Mlp::fromJson(j.at("policy"));
  value_ = Mlp::fromJson(j.at("value"));
  policyOpt_ = AdamState::fromJson(j.at("policy_opt"));
  valueOpt_ = AdamState::fromJson(j.at("value_opt"));
  updateRng_ = rngFromString(j.at("update_rng").get<std::string>());
}

// ---------------------------------------------------------------------------
// PPOF

PpofLearner::PpofLearner(int inputSize, int actions, LearnerConfig config,
                         std::uint64_t seed)
    : actions_(actions), config_(std::move(config)) {
  std::vector<int> netSizes{inputSize};
  for (int h : config_.hidden) netSizes.push_back(h);
  netSizes.push_back(1);
  for (int k = 0; k < actions; ++k) {
    nets_.emplace_back(netSizes, mixSeed(seed, 10 + static_cast<std::uint64_t>(k)));
    netOpts_.emplace_back(nets_[k].paramCount(), config_.policyLr);
  }
  value_ = Mlp(netSizes, mixSeed(seed, 2));
  valueOpt_ = AdamState(value_.paramCount(), config_.valueLr);
  updateRng_.seed(mixSeed(seed, 3));
}

std::vector<double> PpofLearner::logits(std::span<const double> state) const {
  std::vector<double> z(actions_);
  for (int k = 0; k < actions_; ++k) z[k] = nets_[k].forward(state)[0];
  return z;
}

TraceStep PpofLearner::act(std::span<const double> state, std::mt19937_64& rng) {
  TraceStep step;
  step.state.assign(state.begin(), state.end());
  step.bids = softmax(logits(state));
  step.chosen = sampleCategorical(step.bids, rng);
  step.logProb = std::log(step.bids[step.chosen]);
  step.value = value_.forward(state)[0];
  return step;
}

std::vector<double> PpofLearner::actionProbabilities(
    std::span<const double> state) const {
  return softmax(logits(state));
}

void PpofLearner::update(const std::vector<TraceStep>& batch) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  const BatchAdvantages adv =
      computeAdvantages(batch, value_, config_.gamma, config_.gaeLambda,
                        config_.normalizeAdvantages);
  const int n = static_cast<int>(batch.size());
  std::vector<std::vector<double>> netGrads(actions_);
  for (int k = 0; k < actions_; ++k) netGrads[k].resize(nets_[k].paramCount());
  std::vector<double> valueGrad(value_.paramCount());
  std::vector<Mlp::Cache> caches(actions_);
  Mlp::Cache vcache;
  for (int epoch = 0; epoch < config_.updateEpochs; ++epoch) {
    const std::vector<int> order = minibatchOrder(n, updateRng_);
    for (int begin = 0; begin < n; begin += config_.minibatchSize) {
      const int end = std::min(n, begin + config_.minibatchSize);
      const double invSize = 1.0 / (end - begin);
      for (int k = 0; k < actions_; ++k) {
        std::fill(netGrads[k].begin(), netGrads[k].end(), 0.0);
      }
      std::fill(valueGrad.begin(), valueGrad.end(), 0.0);
      for (int pos = begin; pos < end; ++pos) {
        const TraceStep& step = batch[order[pos]];
        std::vector<double> z(actions_);
        for (int k = 0; k < actions_; ++k) {
          z[k] = nets_[k].forward(step.state, caches[k])[0];
        }
        const std::vector<double> probs = softmax(z);
        const double logpNew = std::log(probs[step.chosen]);
        const double ratio = std::exp(logpNew - step.logProb);
        const std::vector<double> dz = policyLogitGrad(
            probs, step.chosen, ratio, adv.advantages[order[pos]],
            config_.clipRatio, config_.entropyCoef);
        for (int k = 0; k < actions_; ++k) {
          const double g = dz[k] * invSize;
          if (g != 0.0) {
            nets_[k].backward(caches[k], std::vector<double>{g}, netGrads[k]);
          }
        }
        const double v = value_.forward(step.state, vcache)[0];
        const double dv = (v - adv.valueTargets[order[pos]]) * invSize;
        value_.backward(vcache, std::vector<double>{dv}, valueGrad);
      }
      for (int k = 0; k < actions_; ++k) {
        netOpts_[k].update(nets_[k].params(), netGrads[k]);
      }
      valueOpt_.update(value_.params(), valueGrad);
    }
  }
}

std::vector<std::pair<const double*, const double*>>
PpofLearner::decisionParameterSpans() const {
  std::vector<std::pair<const double*, const double*>> spans;
  for (const Mlp& net : nets_) {
    const double* begin = net.params().data();
    spans.emplace_back(begin, begin + net.paramCount());
  }
  return spans;
}

std::vector<double> PpofLearner::perStepGradient(
    const std::vector<TraceStep>& batch, int t) const {
  const BatchAdvantages adv =
      computeAdvantages(batch, value_, config_.gamma, config_.gaeLambda,
                        config_.normalizeAdvantages);
  const TraceStep& step = batch.at(t);
  std::vector<Mlp::Cache> caches(actions_);
  std::vector<double> z(actions_);
  for (int k = 0; k < actions_; ++k) {
    z[k] = nets_[k].forward(step.state, caches[k])[0];
  }
  const std::vector<double> probs = softmax(z);
  const double logpNew = std::log(probs[step.chosen]);
  const double ratio = std::exp(logpNew - step.logProb);
  const std::vector<double> dz =
      policyLogitGrad(probs, step.chosen, ratio, adv.advantages[t],
                      config_.clipRatio, config_.entropyCoef);
  const int k = step.chosen;
  std::vector<double> grad(nets_[k].paramCount(), 0.0);
  nets_[k].backward(caches[k], std::vector<double>{dz[k]}, grad);
  return grad;
}

nlohmann::json PpofLearner::checkpoint() const {
  nlohmann::json nets = nlohmann::json::array();
  nlohmann::json opts = nlohmann::json::array();
  for (int k = 0; k < actions_; ++k) {
    nets.push_back(nets_[k].toJson());
    opts.push_back(netOpts_[k].toJson());
  }
  return {{"version", 1},
          {"algorithm", "ppof"},
          {"nets", nets},
          {"net_opts", opts},
          {"value", value_.toJson()},
          {"value_opt", valueOpt_.toJson()},
          {"update_rng", rngToString(updateRng_)}};
}

void PpofLearner::restore(const nlohmann::json& j) {
  const auto& nets = j.at("nets");
  const auto& opts = j.at("net_opts");
  for (int k = 0; k < actions_; ++k) {
    nets_[k] = Mlp::fromJson(nets.at(k));
    netOpts_[k] = AdamState::fromJson(opts.at(k));
  }
  value_ = Mlp::fromJson(j.at("value"));
  valueOpt_ = AdamState::fromJson(j.at("value_opt"));
  updateRng_ = rngFromString(j.at("update_rng").get<std::string>());
}

// ---------------------------------------------------------------------------
// CVS

CvsLearner::CvsLearner(int inputSize, int actions, LearnerConfig config,
                       std::uint64_t seed)
    : actions_(actions), config_(std::move(config)) {
  std::vector<int> netSizes{inputSize};
  for (int h : config_.hidden) netSizes.push_back(h);
  netSizes.push_back(1);
  // Under the regression objective the bidder is an action-value estimator
  // (bids are estimated Q-values) and trains at the value-function rate; the
  // selection mechanism is fixed, so there is no policy network. Under the
  // surrogate objective the bidder is a Gaussian bid policy and trains at the
  // policy rate.
  const double bidderLr = config_.cvsBidObjective == "regression"
                              ? config_.valueLr
                              : config_.policyLr;
  for (int k = 0; k < actions; ++k) {
    const auto role = static_cast<std::uint64_t>(k);
    bidders_.emplace_back(netSizes, mixSeed(seed, 100 + 2 * role));
    baselines_.emplace_back(netSizes, mixSeed(seed, 101 + 2 * role));
    bidderOpts_.emplace_back(bidders_[k].paramCount(), bidderLr);
    baselineOpts_.emplace_back(baselines_[k].paramCount(), config_.valueLr);
  }
  updateRng_.seed(mixSeed(seed, 3));
}

std::vector<double> CvsLearner::bidMeans(std::span<const double> state) const {
  std::vector<double> means(actions_);
  for (int k = 0; k < actions_; ++k) {
    means[k] = sigmoid(bidders_[k].forward(state)[0]);
  }
  return means;
}

TraceStep CvsLearner::act(std::span<const double> state, std::mt19937_64& rng) {
  TraceStep step;
  step.state.assign(state.begin(), state.end());
  const std::vector<double> means = bidMeans(state);
  step.bids.resize(actions_);
  for (int k = 0; k < actions_; ++k) {
    step.bids[k] = means[k] + config_.cvsBidStd * rngNormal(rng);
  }
  std::vector<double> cloned(2 * actions_);
  for (int k = 0; k < actions_; ++k) {
    cloned[2 * k] = step.bids[k];
    cloned[2 * k + 1] = step.bids[k];
  }
  const AuctionResult auction = vickreySelect(cloned);
  step.chosen = auction.winner;
  step.logProb =
      gaussianLogPdf(step.bids[step.chosen], means[step.chosen], config_.cvsBidStd);
  step.value = baselines_[step.chosen].forward(state)[0];
  return step;
}

std::vector<double> CvsLearner::actionProbabilities(
    std::span<const double> state) const {
  // Win probability of each agent under independent Gaussian bid noise,
  // integrated by Simpson's rule over the winner's standardized draw.
  const std::vector<double> means = bidMeans(state);
  const double sigma = config_.cvsBidStd;
  const int intervals = 256;  // even
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / intervals;
  std::vector<double> probs(actions_, 0.0);
  for (int k = 0; k < actions_; ++k) {
    double total = 0.0;
    for (int i = 0; i <= intervals; ++i) {
      const double u = lo + h * i;
      double f = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
      for (int j = 0; j < actions_ && f > 0.0; ++j) {
        if (j == k) continue;
        f *= normalCdf(u + (means[k] - means[j]) / sigma);
      }
      const double weight = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      total += weight * f;
    }
    probs[k] = total * h / 3.0;
  }
  double sum = 0.0;
  for (double p : probs) sum += p;
  for (double& p : probs) p /= sum;
  return probs;
}

std::vector<double> CvsLearner::stepUtilities(
    const std::vector<TraceStep>& batch) const {
  std::vector<double> utilities(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const TraceStep& step = batch[i];
    // Successor bids recomputed from the frozen mechanisms: the target is a
    // function of (s_{t+1}, f), not of the recorded successor samples.
    std::vector<double> nextBids;
    if (!step.done) nextBids = bidMeans(step.nextState);
    const double price = step.bids[step.chosen];
    utilities[i] = vickreyUtility(step.reward, config_.gamma, nextBids, price);
  }
  return utilities;
}

void CvsLearner::update(const std::vector<TraceStep>& batch) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  const bool regression = config_.cvsBidObjective == "regression";
  const std::vector<double> utilities = stepUtilities(batch);
  const int n = static_cast<int>(batch.size());
  // targets and advantages are computed from the frozen pre-update nets
  std::vector<double> targets(n);
  std::vector<double> advantages(n);
  for (int i = 0; i < n; ++i) {
    targets[i] = utilities[i] + batch[i].bids[batch[i].chosen];
    advantages[i] = utilities[i] -
                    baselines_[batch[i].chosen].forward(batch[i].state)[0];
  }
  Mlp::Cache cache, vcache;
  for (int k = 0; k < actions_; ++k) {
    std::vector<int> mine;
    for (int i = 0; i < n; ++i) {
      if (batch[i].chosen == k) mine.push_back(i);
    }
    if (mine.empty()) continue;  // never selected: parameters untouched
    std::vector<double> bidderGrad(bidders_[k].paramCount());
    std::vector<double> baselineGrad(baselines_[k].paramCount());
    const int m = static_cast<int>(mine.size());
    for (int epoch = 0; epoch < config_.updateEpochs; ++epoch) {
      const std::vector<int> order = minibatchOrder(m, updateRng_);
      for (int begin = 0; begin < m; begin += config_.minibatchSize) {
        const int end = std::min(m, begin + config_.minibatchSize);
        const double invSize = 1.0 / (end - begin);
        std::fill(bidderGrad.begin(), bidderGrad.end(), 0.0);
        std::fill(baselineGrad.begin(), baselineGrad.end(), 0.0);
        for (int pos = begin; pos < end; ++pos) {
          const TraceStep& step = batch[mine[order[pos]]];
          const double out = bidders_[k].forward(step.state, cache)[0];
          const double mean = sigmoid(out);
          double dOut;
          if (regression) {
            // semi-gradient TD(0): pull the bid mean to the frozen target
            const double tdError = mean - targets[mine[order[pos]]];
            dOut = tdError * mean * (1.0 - mean) * invSize;
          } else {
            const double advantage = advantages[mine[order[pos]]];
            const double bid = step.bids[k];
            const double sigma = config_.cvsBidStd;
            const double logpNew = gaussianLogPdf(bid, mean, sigma);
            const double ratio = std::exp(logpNew - step.logProb);
            const double scale =
                surrogateScale(ratio, advantage, config_.clipRatio);
            // Gaussian entropy is constant for fixed sigma, so the entropy
            // bonus contributes no gradient.
            const double dLogpDMean = (bid - mean) / (sigma * sigma);
            dOut = -scale * dLogpDMean * mean * (1.0 - mean) * invSize;
          }
          bidders_[k].backward(cache, std::vector<double>{dOut}, bidderGrad);

          const double v = baselines_[k].forward(step.state, vcache)[0];
          const double dv = (v - utilities[mine[order[pos]]]) * invSize;
          baselines_[k].backward(vcache, std::vector<double>{dv}, baselineGrad);
        }
        bidderOpts_[k].update(bidders_[k].params(), bidderGrad);
        baselineOpts_[k].update(baselines_[k].params(), baselineGrad);
      }
    }
  }
}

std::vector<std::pair<const double*, const double*>>
CvsLearner::decisionParameterSpans() const {
  std::vector<std::pair<const double*, const double*>> spans;
  for (const Mlp& net : bidders_) {
    const double* begin = net.params().data();
    spans.emplace_back(begin, begin + net.paramCount());
  }
  return spans;
}

std::vector<double> CvsLearner::perStepGradient(
    const std::vector<TraceStep>& batch, int t) const {
  const TraceStep& step = batch.at(t);
  const int k = step.chosen;
  std::vector<double> nextBids;
  if (!step.done) nextBids = bidMeans(step.nextState);
  const double price = step.bids[k];
  const double utility =
      vickreyUtility(step.reward, config_.gamma, nextBids, price);
  Mlp::Cache cache;
  const double out = bidders_[k].forward(step.state, cache)[0];
  const double mean = sigmoid(out);
  double dOut;
  if (config_.cvsBidObjective == "regression") {
    const double target = utility + price;
    dOut = (mean - target) * mean * (1.0 - mean);
  } else {
    const double advantage = utility - baselines_[k].forward(step.state)[0];
    const double sigma = config_.cvsBidStd;
    const double logpNew = gaussianLogPdf(step.bids[k], mean, sigma);
    const double ratio = std::exp(logpNew - step.logProb);
    const double scale = surrogateScale(ratio, advantage, config_.clipRatio);
    const double dLogpDMean = (step.bids[k] - mean) / (sigma * sigma);
    dOut = -scale * dLogpDMean * mean * (1.0 - mean);
  }
  std::vector<double> grad(bidders_[k].paramCount(), 0.0);
  bidders_[k].backward(cache, std::vector<double>{dOut}, grad);
  return grad;
}

nlohmann::json CvsLearner::checkpoint() const {
  nlohmann::json bidders = nlohmann::json::array();
  nlohmann::json baselines = nlohmann::json::array();
  nlohmann::json bidderOpts = nlohmann::json::array();
  nlohmann::json baselineOpts = nlohmann::json::array();
  for (int k = 0; k < actions_; ++k) {
    bidders.push_back(bidders_[k].toJson());
    baselines.push_back(baselines_[k].toJson());
    bidderOpts.push_back(bidderOpts_[k].toJson());
    baselineOpts.push_back(baselineOpts_[k].toJson());
  }
  return {{"version", 1},
          {"algorithm", "cvs"},
          {"bidders", bidders},
          {"baselines", baselines},
          {"bidder_opts", bidderOpts},
          {"baseline_opts", baselineOpts},
          {"update_rng", rngToString(updateRng_)}};
}

void CvsLearner::restore(const nlohmann::json& j) {
  for (int k = 0; k < actions_; ++k) {
    bidders_[k] = Mlp::fromJson(j.at("bidders").at(k));
    baselines_[k] = Mlp::fromJson(j.at("baselines").at(k));
    bidderOpts_[k] = AdamState::fromJson(j.at("bidder_opts").at(k));
    baselineOpts_[k] = AdamState::fromJson(j.at("baseline_opts").at(k));
  }
  updateRng_ = rngFromString(j.at("update_rng").get<std::string>());
}

std::unique_ptr<Learner> makeLearner(const std::string& algorithm,
                                     int inputSize, int actions,
                                     const LearnerConfig& config,
                                     std::uint64_t seed) {
  if (algorithm == "ppo") {
    return std::make_unique<PpoLearner>(inputSize, actions, config, seed);
  }
  if (algorithm == "ppof") {
    return std::make_unique<PpofLearner>(inputSize, actions, config, seed);
  }
  if (algorithm == "cvs") {
    return std::make_unique<CvsLearner>(inputSize, actions, config, seed);
  }
  if (algorithm == "qlearning") {
    return std::make_unique<TabularLearner>(actions, TdKind::QLearning, config,
                                            seed);
  }
  if (algorithm == "sarsa") {
    return std::make_unique<TabularLearner>(actions, TdKind::Sarsa, config,
                                            seed);
  }
  throw std::invalid_argument("unknown algorithm: " + algorithm);
}

}  // namespace modcred
