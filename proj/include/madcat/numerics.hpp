#pragma once

// Dense feed-forward networks with analytic gradients, the two losses the
// detector needs, and SGD/Adam updates. Everything here is single-threaded
// and deterministic for a given seed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "madcat/errors.hpp"
#include "madcat/mask_spec.hpp"
#include "madcat/rng.hpp"

namespace madcat::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Lower clamp for probabilities inside log terms; upper is 1 - kProbClamp.
inline constexpr double kProbClamp = 1e-7;

enum class Activation { relu, sigmoid, identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw DataError("unknown activation '" + s + "'");
}

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

class DenseNet {
public:
  DenseNet() = default;

  explicit DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

  /// All-zero parameters. `sizes` has one more entry than `activations`.
  static DenseNet zeros(const std::vector<int>& sizes, const std::vector<Activation>& activations) {
    check_shape_args(sizes, activations);
    std::vector<Layer> layers;
    for (std::size_t i = 0; i < activations.size(); ++i) {
      layers.push_back({Matrix::Zero(sizes[i + 1], sizes[i]), Vector::Zero(sizes[i + 1]), activations[i]});
    }
    return DenseNet(std::move(layers));
  }

  /// Uniform fan-in scaled weights: bound sqrt(6/fan_in) ahead of relu,
  /// sqrt(3/fan_in) otherwise. Biases start at zero.
  static DenseNet kaiming(const std::vector<int>& sizes, const std::vector<Activation>& activations, Rng& rng) {
    DenseNet net = zeros(sizes, activations);
    for (auto& layer : net.layers_) {
      const double gain = layer.activation == Activation::relu ? 6.0 : 3.0;
      const double bound = std::sqrt(gain / static_cast<double>(layer.in_dim()));
      // Column-major fill order is part of the determinism contract.
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    return net;
  }

  bool empty() const noexcept { return layers_.empty(); }
  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
  std::size_t depth() const noexcept { return layers_.size(); }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    return std::all_of(layers_.begin(), layers_.end(),
                       [](const Layer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
  }

  /// Exact equality of every parameter and activation.
  friend bool operator==(const DenseNet& a, const DenseNet& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.activation != y.activation || x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.weight != y.weight || x.bias != y.bias)
        return false;
    }
    return true;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.weight.rows() == 0 || l.weight.cols() == 0) throw DataError("layer " + std::to_string(i) + " is empty");
      if (l.bias.size() != l.weight.rows())
        throw DataError("layer " + std::to_string(i) + " bias length does not match weight rows");
      if (i + 1 < layers_.size() && layers_[i + 1].weight.cols() != l.weight.rows())
        throw DataError("layer " + std::to_string(i + 1) + " input does not chain with previous output");
    }
  }

private:
  static void check_shape_args(const std::vector<int>& sizes, const std::vector<Activation>& activations) {
    if (sizes.size() != activations.size() + 1 || activations.empty())
      throw ConfigError("network needs one more size than activations");
    for (int s : sizes)
      if (s <= 0) throw ConfigError("layer sizes must be positive");
  }

  std::vector<Layer> layers_;
};

/// Per-layer inputs and post-activation outputs of a batched forward pass.
/// Columns are samples.
struct Tape {
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;

  Eigen::Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

inline void activate(Activation a, Matrix& z) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }); break;
    case Activation::identity: break;
  }
}

struct BatchOutput {
  Matrix output;
  Tape tape;
};

/// Batched forward pass over columns of `x`.
inline BatchOutput forward_batch(const DenseNet& net, const Matrix& x) {
  if (net.empty()) throw DataError("forward through an empty network");
  if (x.rows() != net.input_dim())
    throw DataError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                    std::to_string(net.input_dim()));
  if (!x.allFinite()) throw NumericError("non-finite network input");
  BatchOutput out;
  out.tape.inputs.reserve(net.depth());
  out.tape.outputs.reserve(net.depth());
  Matrix current = x;
  for (const auto& layer : net.layers()) {
    Matrix z = layer.weight * current;
    z.colwise() += layer.bias;
    activate(layer.activation, z);
    out.tape.inputs.push_back(std::move(current));
    current = z;
    out.tape.outputs.push_back(z);
  }
  out.output = std::move(current);
  return out;
}

/// Forward pass without recording a tape.
inline Matrix apply(const DenseNet& net, const Matrix& x) {
  if (net.empty()) throw DataError("forward through an empty network");
  if (x.rows() != net.input_dim())
    throw DataError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                    std::to_string(net.input_dim()));
  Matrix current = x;
  for (const auto& layer : net.layers()) {
    Matrix z = layer.weight * current;
    z.colwise() += layer.bias;
    activate(layer.activation, z);
    current = std::move(z);
  }
  return current;
}

struct ForwardResult {
  Vector output;
  Tape tape;
};

inline ForwardResult forward(const DenseNet& net, const Vector& x) {
  auto r = forward_batch(net, Matrix(x));
  return {r.output.col(0), std::move(r.tape)};
}

struct GradientSet {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static GradientSet zeros_like(const DenseNet& net) {
    GradientSet g;
    for (const auto& l : net.layers()) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < weight.size(); ++i)
      if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
    return true;
  }

  bool mirrors(const DenseNet& net) const {
    if (weight.size() != net.depth() || bias.size() != net.depth()) return false;
    for (std::size_t i = 0; i < net.depth(); ++i) {
      const auto& l = net.layers()[i];
      if (weight[i].rows() != l.weight.rows() || weight[i].cols() != l.weight.cols() ||
          bias[i].size() != l.bias.size())
        return false;
    }
    return true;
  }
};

struct BackwardResult {
  GradientSet grads;
  Matrix input_grad;  // dL/dx, same shape as the forward input
};

/// Reverse pass. `seed` is dL/d(output) with the same shape as the forward
/// output; gradients are summed over the batch columns. The relu derivative
/// at exactly zero is taken as 0.
inline BackwardResult backward(const DenseNet& net, const Tape& tape, const Matrix& seed) {
  if (tape.inputs.size() != net.depth() || tape.outputs.size() != net.depth())
    throw DataError("tape does not match network depth");
  if (seed.rows() != net.output_dim() || seed.cols() != tape.batch())
    throw DataError("seed gradient shape does not match network output");
  BackwardResult r;
  r.grads.weight.resize(net.depth());
  r.grads.bias.resize(net.depth());
  Matrix delta = seed;
  for (std::size_t k = net.depth(); k-- > 0;) {
    const auto& layer = net.layers()[k];
    const Matrix& out = tape.outputs[k];
    switch (layer.activation) {
      case Activation::relu: delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix()); break;
      case Activation::sigmoid: delta = delta.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix())); break;
      case Activation::identity: break;
    }
    r.grads.weight[k].noalias() = delta * tape.inputs[k].transpose();
    r.grads.bias[k] = delta.rowwise().sum();
    Matrix upstream = layer.weight.transpose() * delta;
    delta = std::move(upstream);
  }
  r.input_grad = std::move(delta);
  return r;
}

inline double clamp_probability(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline void check_mask(const MaskSpec& mask, Eigen::Index d) {
  if (mask.dim != static_cast<std::size_t>(d))
    throw DataError("mask dim " + std::to_string(mask.dim) + " does not match vector length " + std::to_string(d));
  if (mask.empty()) throw DataError("empty mask: masked loss has no positions to score");
  for (auto i : mask.indices)
    if (i >= mask.dim) throw DataError("mask index out of range");
}

/// Mean binary cross-entropy over the masked positions only.
inline double binary_cross_entropy_masked(const Vector& pred, const Vector& target, const MaskSpec& mask) {
  if (pred.size() != target.size()) throw DataError("prediction/target length mismatch");
  check_mask(mask, pred.size());
  double sum = 0.0;
  for (auto i : mask.indices) {
    const double p = clamp_probability(pred[i]);
    const double t = target[i];
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(mask.size());
}

/// d(loss)/d(pred) for binary_cross_entropy_masked, scaled by `scale`
/// (callers averaging over a batch pass 1/batch). The clamp is treated as
/// pass-through so saturated outputs still receive a gradient.
inline Vector binary_cross_entropy_masked_grad(const Vector& pred, const Vector& target, const MaskSpec& mask,
                                               double scale = 1.0) {
  check_mask(mask, pred.size());
  Vector g = Vector::Zero(pred.size());
  const double w = scale / static_cast<double>(mask.size());
  for (auto i : mask.indices) {
    const double p = clamp_probability(pred[i]);
    g[i] = w * (p - target[i]) / (p * (1.0 - p));
  }
  return g;
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

/// -ln softmax(logits)[label], computed with max subtraction.
inline double softmax_cross_entropy(const Vector& logits, int label) {
  if (!logits.allFinite()) throw NumericError("non-finite logits");
  if (label < 0 || label >= logits.size()) throw DataError("label out of range");
  Eigen::Index arg = 0;
  const double m = logits.maxCoeff(&arg);
  // The argmax term contributes exactly 1; log1p keeps tiny remainders.
  double rest = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (i != arg) rest += std::exp(logits[i] - m);
  return (m - logits[label]) + std::log1p(rest);
}

inline Vector softmax_cross_entropy_grad(const Vector& logits, int label, double scale = 1.0) {
  Vector g = softmax(logits);
  g[label] -= 1.0;
  return g * scale;
}

enum class OptimizerMethod { sgd, adam };

inline const char* to_string(OptimizerMethod m) { return m == OptimizerMethod::sgd ? "sgd" : "adam"; }

inline OptimizerMethod optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerMethod::sgd;
  if (s == "adam") return OptimizerMethod::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::adam;
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<Matrix> m_weight, v_weight;
  std::vector<Vector> m_bias, v_bias;
  std::uint64_t step = 0;

  static OptimizerState for_net(const DenseNet& net, const OptimizerConfig& config) {
    if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
      throw ConfigError("learning_rate must be a positive finite number");
    OptimizerState s;
    s.config = config;
    if (config.method == OptimizerMethod::adam) {
      for (const auto& l : net.layers()) {
        s.m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        s.v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        s.m_bias.push_back(Vector::Zero(l.bias.size()));
        s.v_bias.push_back(Vector::Zero(l.bias.size()));
      }
    }
    return s;
  }

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    if (!(a.config == b.config) || a.step != b.step || a.m_weight.size() != b.m_weight.size()) return false;
    for (std::size_t i = 0; i < a.m_weight.size(); ++i) {
      if (a.m_weight[i] != b.m_weight[i] || a.v_weight[i] != b.v_weight[i] || a.m_bias[i] != b.m_bias[i] ||
          a.v_bias[i] != b.v_bias[i])
        return false;
    }
    return true;
  }
};

/// One SGD or Adam (bias-corrected) update. Refuses non-finite gradients
/// without touching the network or the state.
inline void optimizer_step(DenseNet& net, const GradientSet& grads, OptimizerState& state) {
  if (!grads.mirrors(net)) throw DataError("gradient shapes do not mirror the network");
  if (!grads.all_finite()) throw NumericError("optimizer step refused: non-finite gradient");
  const auto& cfg = state.config;
  if (cfg.method == OptimizerMethod::adam && state.m_weight.size() != net.depth())
    throw DataError("optimizer state does not mirror the network");

  const std::uint64_t t = state.step + 1;
  if (cfg.method == OptimizerMethod::sgd) {
    for (std::size_t k = 0; k < net.depth(); ++k) {
      auto& l = net.layers()[k];
      l.weight -= cfg.learning_rate * grads.weight[k];
      l.bias -= cfg.learning_rate * grads.bias[k];
    }
  } else {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double step_size = cfg.learning_rate / c1;
    const double root_c2 = std::sqrt(c2);
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      param.array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + cfg.epsilon);
    };
    for (std::size_t k = 0; k < net.depth(); ++k) {
      auto& l = net.layers()[k];
      update(l.weight, state.m_weight[k], state.v_weight[k], grads.weight[k]);
      update(l.bias, state.m_bias[k], state.v_bias[k], grads.bias[k]);
    }
  }
  state.step = t;
  if (!net.all_finite()) throw NumericError("optimizer step produced non-finite parameters");
}

}  // namespace madcat::nn
