#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bvelab/rng.hpp"

namespace bvelab::nn {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  bool operator==(const DenseLayer& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() &&
           bias.size() == o.bias.size() && weight == o.weight && bias == o.bias;
  }
};

// Ordered dense layers. Shared storage shape for parameters, gradients and
// optimizer moments.
struct LayerStack {
  std::vector<DenseLayer> layers;

  int inputWidth() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int outputWidth() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::size_t parameterCount() const;
  bool sameShape(const LayerStack& other) const;
  double maxAbs() const;
  bool allFinite() const;
  void setZero();

  // Flat view in layer order: weights (column-major) then bias, per layer.
  std::vector<double> flatten() const;
  double& at(std::size_t flatIndex);

  bool operator==(const LayerStack&) const = default;
};

// Rectifier on hidden layers, identity on the output layer.
struct MlpParams : LayerStack {};
struct GradientBundle : LayerStack {
  static GradientBundle zerosLike(const LayerStack& shape);
  GradientBundle& operator+=(const GradientBundle& other);
  GradientBundle& operator*=(double s);
};

// Per-layer switches for weights and biases; frozen tensors never move.
struct TrainableMask {
  std::vector<bool> weights;
  std::vector<bool> biases;
  static TrainableMask all(const LayerStack& shape);
};

// Truncated-normal (2 sigma) weights with std 1/sqrt(fanIn), zero biases.
MlpParams makeMlp(int inputWidth, std::span<const int> hiddenWidths, int outputWidth, Rng& rng);
MlpParams zeroMlp(int inputWidth, std::span<const int> hiddenWidths, int outputWidth);

Eigen::VectorXd forward(const MlpParams& params, std::span<const double> input);
// inputs: inputWidth x batch; returns outputWidth x batch.
Eigen::MatrixXd forwardBatch(const MlpParams& params, const Eigen::MatrixXd& inputs);

// Activations kept for the backward pass. activations[0] is the input,
// activations[l] the output of layer l-1 (after the rectifier on hidden
// layers); activations.back() is the network output.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> activations;
  const Eigen::MatrixXd& output() const { return activations.back(); }
};

ForwardTrace forwardTrace(const MlpParams& params, const Eigen::MatrixXd& inputs);

// Gradient of sum_b <outputGrad[:, b], output[:, b]> with respect to every
// parameter. The rectifier subgradient at 0 is 0.
GradientBundle backward(const MlpParams& params, const ForwardTrace& trace,
                        const Eigen::MatrixXd& outputGrad);
GradientBundle backward(const MlpParams& params, std::span<const double> input,
                        std::span<const double> perOutputGradient);

struct GradientCheck {
  double maxRelativeError = 0.0;
  std::size_t coordinates = 0;
};

// Compares backward() against central differences of <perOutputGradient,
// forward(params, input)> on every parameter. Coordinates where both values
// are below absFloor in magnitude count as exact.
GradientCheck finiteDifferenceCheck(const MlpParams& params, std::span<const double> input,
                                    std::span<const double> perOutputGradient, double h = 1e-5,
                                    double absFloor = 1e-9);

// Smallest |pre-activation| over the hidden units for one input. Finite
// differences straddling a rectifier kink are meaningless below ~h.
double minHiddenPreActivation(const MlpParams& params, std::span<const double> input);

// Deep copy used as a frozen target network.
inline MlpParams snapshot(const MlpParams& params) { return params; }

struct AdamState {
  std::int64_t stepCount = 0;
  GradientBundle firstMoment;
  GradientBundle secondMoment;
  double learningRate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilonHat = 1e-8;

  static AdamState init(const LayerStack& shape, double learningRate);
};

// Bias-corrected Adam update. Throws NonFiniteGradient on NaN/Inf input and
// DivergenceDetected if any parameter is non-finite afterwards.
void adamStep(MlpParams& params, AdamState& state, const GradientBundle& grads,
              const TrainableMask* mask = nullptr);
// Plain gradient descent, same error contract as adamStep.
void sgdStep(MlpParams& params, const GradientBundle& grads, double learningRate,
             const TrainableMask* mask = nullptr);

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

std::vector<std::uint8_t> serializeParams(const MlpParams& params);
MlpParams deserializeParams(std::span<const std::uint8_t> bytes);
void saveCheckpoint(const MlpParams& params, const std::filesystem::path& path);
MlpParams loadCheckpoint(const std::filesystem::path& path);

}  // namespace bvelab::nn
