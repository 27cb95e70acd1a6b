#include "bvelab/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "bvelab/binary_io.hpp"
#include "bvelab/errors.hpp"

namespace bvelab::nn {

namespace {

constexpr std::string_view kMagic = "BVEQ";

void requireSameShape(const LayerStack& a, const LayerStack& b, const char* what) {
  if (!a.sameShape(b)) throw ShapeMismatch(std::string(what) + ": layer shapes differ");
}

MlpParams allocate(int inputWidth, std::span<const int> hiddenWidths, int outputWidth) {
  MlpParams p;
  int in = inputWidth;
  auto add = [&](int out) {
    p.layers.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
    in = out;
  };
  for (int h : hiddenWidths) add(h);
  add(outputWidth);
  return p;
}

}  // namespace

std::size_t LayerStack::parameterCount() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool LayerStack::sameShape(const LayerStack& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.bias.size() != b.bias.size()) {
      return false;
    }
  }
  return true;
}

double LayerStack::maxAbs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    if (l.weight.size() > 0) m = std::max(m, l.weight.cwiseAbs().maxCoeff());
    if (l.bias.size() > 0) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

bool LayerStack::allFinite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

void LayerStack::setZero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

std::vector<double> LayerStack::flatten() const {
  std::vector<double> out;
  out.reserve(parameterCount());
  for (const auto& l : layers) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

double& LayerStack::at(std::size_t flatIndex) {
  for (auto& l : layers) {
    const auto w = static_cast<std::size_t>(l.weight.size());
    if (flatIndex < w) return l.weight.data()[flatIndex];
    flatIndex -= w;
    const auto b = static_cast<std::size_t>(l.bias.size());
    if (flatIndex < b) return l.bias.data()[flatIndex];
    flatIndex -= b;
  }
  throw std::out_of_range("flat parameter index out of range");
}

GradientBundle GradientBundle::zerosLike(const LayerStack& shape) {
  GradientBundle g;
  g.layers = shape.layers;
  g.setZero();
  return g;
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  requireSameShape(*this, other, "gradient accumulation");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

GradientBundle& GradientBundle::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

TrainableMask TrainableMask::all(const LayerStack& shape) {
  return {std::vector<bool>(shape.layers.size(), true), std::vector<bool>(shape.layers.size(), true)};
}

MlpParams makeMlp(int inputWidth, std::span<const int> hiddenWidths, int outputWidth, Rng& rng) {
  MlpParams p = allocate(inputWidth, hiddenWidths, outputWidth);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& l : p.layers) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) {
      double z = normal(rng);
      while (std::abs(z) > 2.0) z = normal(rng);
      l.weight.data()[i] = stddev * z;
    }
  }
  return p;
}

MlpParams zeroMlp(int inputWidth, std::span<const int> hiddenWidths, int outputWidth) {
  return allocate(inputWidth, hiddenWidths, outputWidth);
}

ForwardTrace forwardTrace(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  if (params.layers.empty()) throw ShapeMismatch("network has no layers");
  if (inputs.rows() != params.inputWidth()) {
    throw ShapeMismatch("input width " + std::to_string(inputs.rows()) + ", network expects " +
                        std::to_string(params.inputWidth()));
  }
  ForwardTrace trace;
  trace.activations.reserve(params.layers.size() + 1);
  trace.activations.push_back(inputs);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    Eigen::MatrixXd z = l.weight * trace.activations.back();
    z.colwise() += l.bias;
    if (i + 1 < params.layers.size()) z = z.cwiseMax(0.0);
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

Eigen::MatrixXd forwardBatch(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  if (params.layers.empty()) throw ShapeMismatch("network has no layers");
  if (inputs.rows() != params.inputWidth()) {
    throw ShapeMismatch("input width " + std::to_string(inputs.rows()) + ", network expects " +
                        std::to_string(params.inputWidth()));
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    Eigen::MatrixXd z = l.weight * a;
    z.colwise() += l.bias;
    if (i + 1 < params.layers.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward(const MlpParams& params, std::span<const double> input) {
  const Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
  return forwardBatch(params, x);
}

GradientBundle backward(const MlpParams& params, const ForwardTrace& trace,
                        const Eigen::MatrixXd& outputGrad) {
  if (outputGrad.rows() != params.outputWidth() || outputGrad.cols() != trace.output().cols()) {
    throw ShapeMismatch("output gradient shape does not match the forward pass");
  }
  GradientBundle g;
  g.layers.resize(params.layers.size());
  Eigen::MatrixXd delta = outputGrad;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    const Eigen::MatrixXd& in = trace.activations[i];
    g.layers[i].weight = delta * in.transpose();
    g.layers[i].bias = delta.rowwise().sum();
    if (i == 0) break;
    delta = params.layers[i].weight.transpose() * delta;
    // Hidden activations are rectified, so a positive activation marks an
    // active unit.
    delta = delta.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
  }
  return g;
}

GradientBundle backward(const MlpParams& params, std::span<const double> input,
                        std::span<const double> perOutputGradient) {
  if (static_cast<int>(perOutputGradient.size()) != params.outputWidth()) {
    throw ShapeMismatch("per-output gradient length differs from the output width");
  }
  const Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
  const Eigen::Map<const Eigen::VectorXd> gy(perOutputGradient.data(),
                                             static_cast<Eigen::Index>(perOutputGradient.size()));
  return backward(params, forwardTrace(params, x), gy);
}

GradientCheck finiteDifferenceCheck(const MlpParams& params, std::span<const double> input,
                                    std::span<const double> perOutputGradient, double h,
                                    double absFloor) {
  const auto analytic = backward(params, input, perOutputGradient).flatten();
  const Eigen::Map<const Eigen::VectorXd> gy(perOutputGradient.data(),
                                             static_cast<Eigen::Index>(perOutputGradient.size()));
  MlpParams probe = params;
  GradientCheck out;
  out.coordinates = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double& theta = probe.at(i);
    const double saved = theta;
    theta = saved + h;
    const double up = gy.dot(forward(probe, input));
    theta = saved - h;
    const double down = gy.dot(forward(probe, input));
    theta = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale < absFloor) continue;
    out.maxRelativeError = std::max(out.maxRelativeError, std::abs(numeric - analytic[i]) / scale);
  }
  return out;
}

double minHiddenPreActivation(const MlpParams& params, std::span<const double> input) {
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(input.data(),
                                                        static_cast<Eigen::Index>(input.size()));
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
    const Eigen::VectorXd z = params.layers[l].weight * x + params.layers[l].bias;
    smallest = std::min(smallest, z.cwiseAbs().minCoeff());
    x = z.cwiseMax(0.0);
  }
  return smallest;
}

AdamState AdamState::init(const LayerStack& shape, double learningRate) {
  AdamState s;
  s.firstMoment = GradientBundle::zerosLike(shape);
  s.secondMoment = GradientBundle::zerosLike(shape);
  s.learningRate = learningRate;
  return s;
}

namespace {

void checkGradient(const MlpParams& params, const GradientBundle& grads) {
  requireSameShape(params, grads, "optimizer step");
  if (!grads.allFinite()) throw NonFiniteGradient("gradient contains NaN or Inf");
}

void checkParams(const MlpParams& params) {
  if (!params.allFinite()) throw DivergenceDetected("non-finite parameter after optimizer step");
}

bool trainable(const std::vector<bool>& flags, std::size_t i) {
  return flags.empty() || flags[i];
}

}  // namespace

void adamStep(MlpParams& params, AdamState& state, const GradientBundle& grads,
              const TrainableMask* mask) {
  checkGradient(params, grads);
  requireSameShape(params, state.firstMoment, "adam moments");
  ++state.stepCount;
  const double t = static_cast<double>(state.stepCount);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= state.learningRate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + state.epsilonHat);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    auto& m = state.firstMoment.layers[i];
    auto& v = state.secondMoment.layers[i];
    const auto& g = grads.layers[i];
    if (!mask || trainable(mask->weights, i)) update(l.weight, m.weight, v.weight, g.weight);
    if (!mask || trainable(mask->biases, i)) update(l.bias, m.bias, v.bias, g.bias);
  }
  checkParams(params);
}

void sgdStep(MlpParams& params, const GradientBundle& grads, double learningRate,
             const TrainableMask* mask) {
  checkGradient(params, grads);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (!mask || trainable(mask->weights, i)) {
      params.layers[i].weight -= learningRate * grads.layers[i].weight;
    }
    if (!mask || trainable(mask->biases, i)) {
      params.layers[i].bias -= learningRate * grads.layers[i].bias;
    }
  }
  checkParams(params);
}

std::vector<std::uint8_t> serializeParams(const MlpParams& params) {
  io::ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.put<double>(l.weight(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.put<double>(l.bias(r));
  }
  return io::seal(kMagic, kCheckpointFormatVersion, w.bytes());
}

MlpParams deserializeParams(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(io::unseal(kMagic, kCheckpointFormatVersion, bytes));
  MlpParams p;
  const auto numLayers = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < numLayers; ++i) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (!p.layers.empty() && static_cast<Eigen::Index>(cols) != p.layers.back().weight.rows()) {
      throw ShapeMismatch("checkpoint layer widths do not chain");
    }
    DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index row = 0; row < l.weight.rows(); ++row) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(row, c) = r.get<double>();
    }
    for (Eigen::Index row = 0; row < l.bias.size(); ++row) l.bias(row) = r.get<double>();
    p.layers.push_back(std::move(l));
  }
  if (r.remaining() != 0) throw ShapeMismatch("trailing bytes in checkpoint");
  return p;
}

void saveCheckpoint(const MlpParams& params, const std::filesystem::path& path) {
  io::writeFile(path, serializeParams(params));
}

MlpParams loadCheckpoint(const std::filesystem::path& path) {
  return deserializeParams(io::readFile(path));
}

}  // namespace bvelab::nn
