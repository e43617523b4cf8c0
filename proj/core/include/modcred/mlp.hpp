#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace modcred {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense fully connected network with rectifier hidden layers and a linear
/// output layer. All parameters live in one flat array (per-layer weight
/// blocks in row-major [out][in] order, then the bias block), which keeps the
/// optimizer, checkpointing and finite-difference checks trivial.
class Mlp {
 public:
  Mlp() = default;
  // Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with a
  // per-network generator seeded by `seed`.
  Mlp(std::vector<int> layerSizes, std::uint64_t seed);

  int inputSize() const { return sizes_.front(); }
  int outputSize() const { return sizes_.back(); }
  int paramCount() const { return static_cast<int>(params_.size()); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  struct Cache {
    // activations[0] is the input; activations[l] the post-rectifier output
    // of layer l (linear for the last layer).
    std::vector<std::vector<double>> activations;
  };

  std::vector<double> forward(std::span<const double> x) const;
  std::vector<double> forward(std::span<const double> x, Cache& cache) const;

  // Exact reverse-mode gradients for dLoss/dOutput, accumulated into `grad`
  // (same layout as params). Optionally also returns dLoss/dInput.
  void backward(const Cache& cache, std::span<const double> outputGrad,
                std::span<double> grad, std::vector<double>* inputGrad = nullptr) const;

  nlohmann::json toJson() const;
  static Mlp fromJson(const nlohmann::json& j);

 private:
  void checkInput(std::span<const double> x) const;
  int weightOffset(int layer) const { return offsets_[layer]; }
  int biasOffset(int layer) const {
    return offsets_[layer] + sizes_[layer] * sizes_[layer + 1];
  }

  std::vector<int> sizes_;
  std::vector<int> offsets_;  // flat offset of each layer's weight block
  std::vector<double> params_;
};

/// Bias-corrected Adam over a flat parameter array.
struct AdamState {
  double learningRate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(int paramCount, double lr);
  void update(std::span<double> params, std::span<const double> grads);

  nlohmann::json toJson() const;
  static AdamState fromJson(const nlohmann::json& j);
};

// Generalized advantage estimation over one episode segment:
//   delta_t = r_t + gamma * V_{t+1} - V_t,  A_t = sum_l (gamma*lambda)^l delta_{t+l}
// `valueNext` bootstraps the step after the last one (0 at terminal).
std::vector<double> gae(std::span<const double> rewards,
                        std::span<const double> values, double valueNext,
                        double gamma, double lambda);

std::vector<double> softmax(std::span<const double> logits);

}  // namespace modcred
