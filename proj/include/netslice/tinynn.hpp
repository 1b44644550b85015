#pragma once

// Minimal dense network kernel: multilayer perceptrons with exact batch
// backprop, Adam, reparameterized Gaussian draws and bit-exact text
// checkpoints. Everything is templated on the scalar type; the rest of the
// library instantiates it with double.

#include <Eigen/Dense>

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "netslice/errors.hpp"

namespace netslice::nn {

using Rng = std::mt19937_64;

enum class Activation { Identity, Relu, Tanh, Softmax };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "softmax") return Activation::Softmax;
  throw ConfigError("unknown activation '" + s + "'");
}

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Column-wise softmax; each column of `z` is one sample.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& z) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const S m = z.col(j).maxCoeff();
    out.col(j) = (z.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out
  Activation activation = Activation::Identity;
  bool trainable = true;

  Eigen::Index inputs() const { return weight.cols(); }
  Eigen::Index outputs() const { return weight.rows(); }
};

namespace detail {
inline std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

// Identity of a parameter set for cache validation. Copies get a fresh id so a
// cache taken from one network is never accepted by another.
class Stamp {
 public:
  Stamp() : id_(next_network_id()) {}
  Stamp(const Stamp&) : id_(next_network_id()) {}
  Stamp(Stamp&& o) noexcept : id_(o.id_), revision_(o.revision_) { o.id_ = 0; }
  Stamp& operator=(const Stamp&) {
    id_ = next_network_id();
    revision_ = 0;
    return *this;
  }
  Stamp& operator=(Stamp&& o) noexcept {
    id_ = o.id_;
    revision_ = o.revision_;
    o.id_ = 0;
    return *this;
  }
  void bump() { ++revision_; }
  std::uint64_t id() const { return id_; }
  std::uint64_t revision() const { return revision_; }

 private:
  std::uint64_t id_;
  std::uint64_t revision_ = 0;
};
}  // namespace detail

template <typename Scalar>
struct ForwardCache {
  std::vector<MatrixX<Scalar>> inputs;       // input to each layer
  std::vector<MatrixX<Scalar>> activations;  // post-activation output of each layer
  std::vector<MatrixX<Scalar>> pre_activations;
  std::uint64_t network_id = 0;
  std::uint64_t revision = 0;

  const MatrixX<Scalar>& output() const { return activations.back(); }
  /// Pre-activation of the head, i.e. logits for a softmax head.
  const MatrixX<Scalar>& head_pre_activation() const { return pre_activations.back(); }
};

template <typename Scalar>
struct LayerGradient {
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;
};

template <typename Scalar>
struct MlpGradients {
  std::vector<LayerGradient<Scalar>> layers;
  MatrixX<Scalar> input;  // d(loss)/d(input), one column per sample
};

template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    validate();
  }

  /// Builds a network with the given layer widths. `sizes` includes the input
  /// width, so {16, 48, 24, 4} has three dense layers. Hidden layers use
  /// `hidden`, the last layer uses `head`. Weights are drawn uniformly in
  /// +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
  Mlp(const std::vector<int>& sizes, Activation hidden, Activation head, Rng& rng) {
    if (sizes.size() < 2) throw DimensionError("an MLP needs at least an input and an output width");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      if (sizes[i] <= 0 || sizes[i + 1] <= 0) throw DimensionError("layer widths must be positive");
      DenseLayer<Scalar> layer;
      layer.activation = (i + 2 == sizes.size()) ? head : hidden;
      layer.weight.resize(sizes[i + 1], sizes[i]);
      layer.bias = VectorX<Scalar>::Zero(sizes[i + 1]);
      init_layer(layer, rng);
      layers_.push_back(std::move(layer));
    }
  }

  static void init_layer(DenseLayer<Scalar>& layer, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs() + layer.outputs()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        layer.weight(r, c) = static_cast<Scalar>(dist(rng));
    layer.bias.setZero();
  }

  std::size_t depth() const { return layers_.size(); }
  Eigen::Index input_size() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
  Eigen::Index output_size() const { return layers_.empty() ? 0 : layers_.back().outputs(); }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  const DenseLayer<Scalar>& layer(std::size_t i) const { return layers_.at(i); }

  /// Mutable access invalidates outstanding forward caches.
  DenseLayer<Scalar>& mutable_layer(std::size_t i) {
    stamp_.bump();
    return layers_.at(i);
  }
  std::vector<DenseLayer<Scalar>>& mutable_layers() {
    stamp_.bump();
    return layers_;
  }

  std::uint64_t id() const { return stamp_.id(); }
  std::uint64_t revision() const { return stamp_.revision(); }
  void touch() { stamp_.bump(); }

  std::vector<int> sizes() const {
    std::vector<int> s;
    if (layers_.empty()) return s;
    s.push_back(static_cast<int>(input_size()));
    for (const auto& l : layers_) s.push_back(static_cast<int>(l.outputs()));
    return s;
  }

  bool same_shape(const Mlp& other) const {
    if (depth() != other.depth()) return false;
    for (std::size_t i = 0; i < depth(); ++i) {
      const auto& a = layers_[i];
      const auto& b = other.layers_[i];
      if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
          a.activation != b.activation)
        return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  /// Batch forward pass; each column of `input` is one sample.
  template <typename Derived>
  ForwardCache<Scalar> forward(const Eigen::MatrixBase<Derived>& input) const {
    if (layers_.empty()) throw DimensionError("forward on an empty network");
    if (input.rows() != input_size())
      throw DimensionError("input has " + std::to_string(input.rows()) + " rows, network expects " +
                           std::to_string(input_size()));
    ForwardCache<Scalar> cache;
    cache.network_id = stamp_.id();
    cache.revision = stamp_.revision();
    cache.inputs.reserve(depth());
    cache.pre_activations.reserve(depth());
    cache.activations.reserve(depth());
    MatrixX<Scalar> x = input;
    for (const auto& layer : layers_) {
      MatrixX<Scalar> z = layer.weight * x;
      z.colwise() += layer.bias;
      cache.inputs.push_back(std::move(x));
      x = activate(layer.activation, z);
      cache.pre_activations.push_back(std::move(z));
      cache.activations.push_back(x);
    }
    return cache;
  }

  /// Single-sample convenience.
  template <typename Derived>
  VectorX<Scalar> predict(const Eigen::MatrixBase<Derived>& input) const {
    return forward(input).output().col(0);
  }

  /// Exact gradients of sum_j <output_gradient_j, f(input_j)> with respect to
  /// every parameter and the input. Loss normalization (e.g. 1/B) belongs in
  /// `output_gradient`.
  template <typename Derived>
  MlpGradients<Scalar> backward(const ForwardCache<Scalar>& cache,
                                const Eigen::MatrixBase<Derived>& output_gradient) const {
    return backward(cache, output_gradient, MatrixX<Scalar>());
  }

  /// As above, plus `head_gradient` applied directly to the last layer's
  /// pre-activation (empty to skip).
  template <typename Derived>
  MlpGradients<Scalar> backward(const ForwardCache<Scalar>& cache, const Eigen::MatrixBase<Derived>& output_gradient,
                                const MatrixX<Scalar>& head_gradient) const {
    if (cache.network_id != stamp_.id() || cache.revision != stamp_.revision() ||
        cache.inputs.size() != depth())
      throw ContractError("stale forward cache: network changed since the forward pass");
    if (output_gradient.rows() != output_size() || output_gradient.cols() != cache.output().cols())
      throw DimensionError("output gradient shape does not match the cached forward pass");
    if (head_gradient.size() != 0 &&
        (head_gradient.rows() != output_size() || head_gradient.cols() != cache.output().cols()))
      throw DimensionError("head gradient shape does not match the cached forward pass");

    MlpGradients<Scalar> grads;
    grads.layers.resize(depth());
    MatrixX<Scalar> g = output_gradient;
    for (std::size_t k = depth(); k-- > 0;) {
      const auto& layer = layers_[k];
      MatrixX<Scalar> dz = activation_backward(layer.activation, cache.pre_activations[k],
                                               cache.activations[k], g);
      if (k + 1 == depth() && head_gradient.size() != 0) dz += head_gradient;
      grads.layers[k].weight = dz * cache.inputs[k].transpose();
      grads.layers[k].bias = dz.rowwise().sum();
      g = layer.weight.transpose() * dz;
    }
    grads.input = std::move(g);
    return grads;
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.depth(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.trainable != y.trainable || x.weight != y.weight || x.bias != y.bias) return false;
    }
    return true;
  }

 private:
  static MatrixX<Scalar> activate(Activation a, const MatrixX<Scalar>& z) {
    switch (a) {
      case Activation::Identity: return z;
      case Activation::Relu: return z.cwiseMax(Scalar(0));
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::Softmax: return softmax_columns(z);
    }
    return z;
  }

  static MatrixX<Scalar> activation_backward(Activation a, const MatrixX<Scalar>& z,
                                             const MatrixX<Scalar>& y, const MatrixX<Scalar>& g) {
    switch (a) {
      case Activation::Identity: return g;
      case Activation::Relu: return (z.array() > Scalar(0)).select(g, Scalar(0));
      case Activation::Tanh: return (g.array() * (Scalar(1) - y.array().square())).matrix();
      case Activation::Softmax: {
        // dz = y * (g - <y, g>) per column.
        MatrixX<Scalar> dz(g.rows(), g.cols());
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
          const Scalar dot = y.col(j).dot(g.col(j));
          dz.col(j) = (y.col(j).array() * (g.col(j).array() - dot)).matrix();
        }
        return dz;
      }
    }
    return g;
  }

  void validate() const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.weight.rows())
        throw DimensionError("layer " + std::to_string(i) + ": bias length differs from output width");
      if (i > 0 && l.inputs() != layers_[i - 1].outputs())
        throw DimensionError("layer " + std::to_string(i) + ": input width does not chain");
    }
  }

  std::vector<DenseLayer<Scalar>> layers_;
  detail::Stamp stamp_;
};

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
  std::vector<LayerGradient<Scalar>> first;
  std::vector<LayerGradient<Scalar>> second;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const Mlp<Scalar>& params, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : beta1(b1), beta2(b2), epsilon(eps) {
    reset(params);
  }

  void reset(const Mlp<Scalar>& params) {
    first.clear();
    second.clear();
    for (const auto& l : params.layers()) {
      LayerGradient<Scalar> z{MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                              VectorX<Scalar>::Zero(l.bias.size())};
      first.push_back(z);
      second.push_back(z);
    }
    step = 0;
  }

  bool mirrors(const Mlp<Scalar>& params) const {
    if (first.size() != params.depth() || second.size() != params.depth()) return false;
    for (std::size_t i = 0; i < params.depth(); ++i) {
      const auto& l = params.layer(i);
      for (const auto* m : {&first[i], &second[i]})
        if (m->weight.rows() != l.weight.rows() || m->weight.cols() != l.weight.cols() ||
            m->bias.size() != l.bias.size())
          return false;
    }
    return true;
  }

  friend bool operator==(const AdamState& a, const AdamState& b) {
    if (a.step != b.step || a.beta1 != b.beta1 || a.beta2 != b.beta2 || a.epsilon != b.epsilon ||
        a.first.size() != b.first.size())
      return false;
    for (std::size_t i = 0; i < a.first.size(); ++i)
      if (a.first[i].weight != b.first[i].weight || a.first[i].bias != b.first[i].bias ||
          a.second[i].weight != b.second[i].weight || a.second[i].bias != b.second[i].bias)
        return false;
    return true;
  }
};

/// One bias-corrected Adam update. Frozen layers (trainable == false) are
/// skipped entirely. Throws NumericError naming the first layer whose gradient
/// is non-finite; in that case nothing is modified.
template <typename Scalar>
void adam_step(AdamState<Scalar>& adam, Mlp<Scalar>& params, const MlpGradients<Scalar>& grads,
               double lr) {
  if (!adam.mirrors(params) || grads.layers.size() != params.depth())
    throw DimensionError("Adam state / gradients do not mirror the parameter shapes");
  for (std::size_t i = 0; i < params.depth(); ++i) {
    const auto& g = grads.layers[i];
    const auto& l = params.layer(i);
    if (g.weight.rows() != l.weight.rows() || g.weight.cols() != l.weight.cols() ||
        g.bias.size() != l.bias.size())
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(i));
    if (l.trainable && (!g.weight.allFinite() || !g.bias.allFinite()))
      throw NumericError("non-finite gradient in layer " + std::to_string(i), static_cast<int>(i));
  }

  ++adam.step;
  const Scalar b1 = static_cast<Scalar>(adam.beta1);
  const Scalar b2 = static_cast<Scalar>(adam.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(adam.beta1, static_cast<double>(adam.step)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(adam.beta2, static_cast<double>(adam.step)));
  const Scalar eps = static_cast<Scalar>(adam.epsilon);
  const Scalar rate = static_cast<Scalar>(lr);

  auto update = [&](auto& theta, auto& m, auto& v, const auto& g) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    theta.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };

  auto& layers = params.mutable_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].trainable) continue;
    update(layers[i].weight, adam.first[i].weight, adam.second[i].weight, grads.layers[i].weight);
    update(layers[i].bias, adam.first[i].bias, adam.second[i].bias, grads.layers[i].bias);
  }
}

// ---------------------------------------------------------------------------
// Reparameterized sampling

/// z = mu + sigma * eps with eps ~ N(0, I) drawn from `rng`.
template <typename DerivedMu, typename DerivedSigma>
VectorX<typename DerivedMu::Scalar> gaussian_sample(const Eigen::MatrixBase<DerivedMu>& mu,
                                                    const Eigen::MatrixBase<DerivedSigma>& sigma,
                                                    Rng& rng) {
  using S = typename DerivedMu::Scalar;
  if (mu.size() != sigma.size()) throw DimensionError("gaussian_sample: mu and sigma differ in length");
  if ((sigma.array() < S(0)).any()) throw DomainError("gaussian_sample: negative sigma");
  std::normal_distribution<double> unit(0.0, 1.0);
  VectorX<S> z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) z(i) = mu(i) + sigma(i) * static_cast<S>(unit(rng));
  return z;
}

// ---------------------------------------------------------------------------
// Checkpoints: plain text, weights as hex floats so load(save(p)) is bit-exact.

namespace detail {
template <typename Scalar>
void write_scalar(std::ostream& os, Scalar x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::hex);
  os.write(buf, res.ptr - buf);
}

template <typename Scalar>
Scalar read_scalar(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw IoError("checkpoint truncated while reading a value");
  Scalar x{};
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw IoError("checkpoint: malformed value '" + tok + "'");
  return x;
}

inline void expect(std::istream& is, const std::string& word) {
  std::string tok;
  if (!(is >> tok) || tok != word) throw IoError("checkpoint: expected '" + word + "', got '" + tok + "'");
}

template <typename Derived>
void write_matrix(std::ostream& os, const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ' ';
      write_scalar(os, m(r, c));
    }
    os << '\n';
  }
}

template <typename Derived>
void read_matrix(std::istream& is, Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_scalar<S>(is);
}
}  // namespace detail

template <typename Scalar>
void save(std::ostream& os, const Mlp<Scalar>& net) {
  os << "tinynn.mlp 1\nlayers " << net.depth() << '\n';
  for (const auto& l : net.layers()) {
    os << "dense " << l.outputs() << ' ' << l.inputs() << ' ' << activation_name(l.activation) << ' '
       << (l.trainable ? 1 : 0) << '\n';
    detail::write_matrix(os, l.weight);
    detail::write_matrix(os, l.bias.transpose());
  }
}

template <typename Scalar>
Mlp<Scalar> load_mlp(std::istream& is) {
  detail::expect(is, "tinynn.mlp");
  int version = 0;
  is >> version;
  if (version != 1) throw IoError("unsupported MLP checkpoint version " + std::to_string(version));
  detail::expect(is, "layers");
  std::size_t n = 0;
  is >> n;
  std::vector<DenseLayer<Scalar>> layers(n);
  for (auto& l : layers) {
    detail::expect(is, "dense");
    Eigen::Index out = 0, in = 0;
    std::string act;
    int trainable = 1;
    if (!(is >> out >> in >> act >> trainable)) throw IoError("checkpoint: malformed layer header");
    l.activation = parse_activation(act);
    l.trainable = trainable != 0;
    l.weight.resize(out, in);
    l.bias.resize(out);
    detail::read_matrix(is, l.weight);
    for (Eigen::Index i = 0; i < out; ++i) l.bias(i) = detail::read_scalar<Scalar>(is);
  }
  return Mlp<Scalar>(std::move(layers));
}

template <typename Scalar>
void save(std::ostream& os, const AdamState<Scalar>& adam) {
  os << "tinynn.adam 1\nstep " << adam.step << "\nhyper ";
  detail::write_scalar(os, adam.beta1);
  os << ' ';
  detail::write_scalar(os, adam.beta2);
  os << ' ';
  detail::write_scalar(os, adam.epsilon);
  os << "\nlayers " << adam.first.size() << '\n';
  for (std::size_t i = 0; i < adam.first.size(); ++i) {
    os << "moments " << adam.first[i].weight.rows() << ' ' << adam.first[i].weight.cols() << '\n';
    detail::write_matrix(os, adam.first[i].weight);
    detail::write_matrix(os, adam.first[i].bias.transpose());
    detail::write_matrix(os, adam.second[i].weight);
    detail::write_matrix(os, adam.second[i].bias.transpose());
  }
}

template <typename Scalar>
AdamState<Scalar> load_adam(std::istream& is) {
  detail::expect(is, "tinynn.adam");
  int version = 0;
  is >> version;
  if (version != 1) throw IoError("unsupported Adam checkpoint version " + std::to_string(version));
  AdamState<Scalar> adam;
  detail::expect(is, "step");
  is >> adam.step;
  detail::expect(is, "hyper");
  adam.beta1 = detail::read_scalar<double>(is);
  adam.beta2 = detail::read_scalar<double>(is);
  adam.epsilon = detail::read_scalar<double>(is);
  detail::expect(is, "layers");
  std::size_t n = 0;
  is >> n;
  adam.first.resize(n);
  adam.second.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    detail::expect(is, "moments");
    Eigen::Index rows = 0, cols = 0;
    is >> rows >> cols;
    for (auto* m : {&adam.first[i], &adam.second[i]}) {
      m->weight.resize(rows, cols);
      m->bias.resize(rows);
    }
    detail::read_matrix(is, adam.first[i].weight);
    for (Eigen::Index r = 0; r < rows; ++r) adam.first[i].bias(r) = detail::read_scalar<Scalar>(is);
    detail::read_matrix(is, adam.second[i].weight);
    for (Eigen::Index r = 0; r < rows; ++r) adam.second[i].bias(r) = detail::read_scalar<Scalar>(is);
  }
  return adam;
}

}  // namespace netslice::nn
