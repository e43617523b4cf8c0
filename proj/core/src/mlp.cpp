#include "modcred/mlp.hpp"

#include <cmath>
#include <random>

namespace modcred {

Mlp::Mlp(std::vector<int> layerSizes, std::uint64_t seed)
    : sizes_(std::move(layerSizes)) {
  if (sizes_.size() < 2) throw ShapeError("need at least input and output layer");
  for (int s : sizes_) {
    if (s < 1) throw ShapeError("layer sizes must be positive");
  }
  int total = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.resize(total);
  std::mt19937_64 rng(seed);
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    const int count = sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
    for (int i = 0; i < count; ++i) {
      const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      params_[offsets_[l] + i] = (2.0 * unit - 1.0) * bound;
    }
  }
}

void Mlp::checkInput(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != inputSize()) {
    throw ShapeError("input size mismatch");
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Cache cache;
  return forward(x, cache);
}

std::vector<double> Mlp::forward(std::span<const double> x, Cache& cache) const {
  checkInput(x);
  cache.activations.assign(sizes_.size(), {});
  cache.activations[0].assign(x.begin(), x.end());
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double* w = params_.data() + weightOffset(static_cast<int>(l));
    const double* b = params_.data() + biasOffset(static_cast<int>(l));
    const std::vector<double>& a = cache.activations[l];
    std::vector<double>& next = cache.activations[l + 1];
    next.assign(out, 0.0);
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (int i = 0; i < in; ++i) acc += row[i] * a[i];
      next[o] = acc;
    }
    if (l + 2 < sizes_.size()) {
      for (double& value : next) value = value > 0.0 ? value : 0.0;
    }
  }
  return cache.activations.back();
}

void Mlp::backward(const Cache& cache, std::span<const double> outputGrad,
                   std::span<double> grad, std::vector<double>* inputGrad) const {
  if (cache.activations.size() != sizes_.size()) {
    throw ShapeError("cache does not match network");
  }
  if (static_cast<int>(outputGrad.size()) != outputSize()) {
    throw ShapeError("output gradient size mismatch");
  }
  if (static_cast<int>(grad.size()) != paramCount()) {
    throw ShapeError("gradient buffer size mismatch");
  }
  std::vector<double> delta(outputGrad.begin(), outputGrad.end());
  for (int l = static_cast<int>(sizes_.size()) - 2; l >= 0; --l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double* w = params_.data() + weightOffset(l);
    double* gw = grad.data() + weightOffset(l);
    double* gb = grad.data() + biasOffset(l);
    const std::vector<double>& a = cache.activations[l];
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      double* row = gw + o * in;
      for (int i = 0; i < in; ++i) row[i] += d * a[i];
    }
    if (l > 0 || inputGrad != nullptr) {
      std::vector<double> prev(in, 0.0);
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        const double* row = w + o * in;
        for (int i = 0; i < in; ++i) prev[i] += d * row[i];
      }
      if (l > 0) {
        // rectifier derivative from the stored post-activation
        const std::vector<double>& act = cache.activations[l];
        for (int i = 0; i < in; ++i) {
          if (act[i] <= 0.0) prev[i] = 0.0;
        }
        delta = std::move(prev);
      } else if (inputGrad) {
        *inputGrad = std::move(prev);
      }
    }
  }
}

nlohmann::json Mlp::toJson() const {
  return {{"sizes", sizes_}, {"params", params_}};
}

Mlp Mlp::fromJson(const nlohmann::json& j) {
  Mlp net(j.at("sizes").get<std::vector<int>>(), 0);
  auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != net.params_.size()) throw ShapeError("bad checkpoint");
  net.params_ = std::move(params);
  return net;
}

AdamState::AdamState(int paramCount, double lr)
    : learningRate(lr), m(paramCount, 0.0), v(paramCount, 0.0) {}

void AdamState::update(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m.size() || grads.size() != m.size()) {
    throw ShapeError("adam state size mismatch");
  }
  ++step;
  const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < m.size(); ++i) {
    const double g = grads[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    const double mHat = m[i] / correction1;
    const double vHat = v[i] / correction2;
    params[i] -= learningRate * mHat / (std::sqrt(vHat) + epsilon);
  }
}

nlohmann::json AdamState::toJson() const {
  return {{"lr", learningRate}, {"beta1", beta1},  {"beta2", beta2},
          {"eps", epsilon},     {"step", step},    {"m", m},
          {"v", v}};
}

AdamState AdamState::fromJson(const nlohmann::json& j) {
  AdamState state;
  state.learningRate = j.at("lr").get<double>();
  state.beta1 = j.at("beta1").get<double>();
  state.beta2 = j.at("beta2").get<double>();
  state.epsilon = j.at("eps").get<double>();
  state.step = j.at("step").get<long long>();
  state.m = j.at("m").get<std::vector<double>>();
  state.v = j.at("v").get<std::vector<double>>();
  return state;
}

std::vector<double> gae(std::span<const double> rewards,
                        std::span<const double> values, double valueNext,
                        double gamma, double lambda) {
  if (rewards.size() != values.size()) throw ShapeError("length mismatch");
  const int horizon = static_cast<int>(rewards.size());
  std::vector<double> advantages(horizon, 0.0);
  double running = 0.0;
  for (int t = horizon - 1; t >= 0; --t) {
    const double nextValue = t + 1 < horizon ? values[t + 1] : valueNext;
    const double delta = rewards[t] + gamma * nextValue - values[t];
    running = delta + gamma * lambda * running;
    advantages[t] = running;
  }
  return advantages;
}

std::vector<double> softmax(std::span<const double> logits) {
  double maxLogit = logits[0];
  for (double z : logits) maxLogit = std::max(maxLogit, z);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - maxLogit);
    total += p[i];
  }
  for (double& value : p) value /= total;
  return p;
}

}  // namespace modcred
