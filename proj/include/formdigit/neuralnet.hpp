#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace formdigit {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

// Dense row-major array. Batched activations are laid out N,C,H,W (or N,D);
// parameters carry a gradient buffer of the same length.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> v);

  std::size_t size() const { return values.size(); }
  int batch() const { return shape.empty() ? 0 : shape.front(); }
  // Elements per batch item.
  std::size_t stride() const { return shape.empty() || shape.front() == 0 ? 0 : size() / shape.front(); }
  T* item(int n) { return values.data() + static_cast<std::size_t>(n) * stride(); }
  const T* item(int n) const { return values.data() + static_cast<std::size_t>(n) * stride(); }
  void ensure_grad() { grad.assign(values.size(), T(0)); }
};

enum class LayerKind : std::uint32_t {
  Conv3x3 = 1,
  MaxPool2 = 2,
  BatchNorm = 3,
  Dense = 4,
  Relu = 5,
  Dropout = 6,
  Softmax = 7,
  L2Normalize = 8,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int units = 0;      // conv output channels or dense units
  double rate = 0.0;  // dropout only

  static LayerSpec conv3x3(int channels) { return {LayerKind::Conv3x3, channels, 0.0}; }
  static LayerSpec maxpool2() { return {LayerKind::MaxPool2, 0, 0.0}; }
  static LayerSpec batchnorm() { return {LayerKind::BatchNorm, 0, 0.0}; }
  static LayerSpec dense(int units) { return {LayerKind::Dense, units, 0.0}; }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0.0}; }
  static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, rate}; }
  static LayerSpec softmax() { return {LayerKind::Softmax, 0, 0.0}; }
  static LayerSpec l2normalize() { return {LayerKind::L2Normalize, 0, 0.0}; }

  bool operator==(const LayerSpec&) const = default;
};

enum class Mode { Train, Eval };

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerSpec spec() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  // Per-sample input and output shapes (no batch dimension).
  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) = 0;
  // Gradient w.r.t. the input; parameter gradients are overwritten.
  virtual Tensor<T> backward(const Tensor<T>& upstream) = 0;
  virtual std::vector<Tensor<T>*> parameters() { return {}; }
  // Saved with the model but not trained (batchnorm running statistics).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }

  bool frozen = false;

 protected:
  Shape in_, out_;
};

template <typename T>
class Network {
 public:
  Network() = default;
  // He-uniform weights drawn from a generator seeded with `seed`.
  Network(Shape input, const std::vector<LayerSpec>& specs, std::uint64_t seed);
  Network(const Network& o);
  Network& operator=(const Network& o);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const Shape& input_shape() const { return input_; }
  Shape output_shape() const;
  std::vector<LayerSpec> specs() const;
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  // x is N x input_shape. Throws ShapeMismatch otherwise.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng);
  Tensor<T> predict(const Tensor<T>& x);  // eval mode, no randomness needed
  // Requires a preceding train-mode forward (StaleCache otherwise); the cache
  // is consumed. With from_logits the final softmax layer is skipped and
  // `upstream` is the gradient w.r.t. its input.
  Tensor<T> backward(const Tensor<T>& upstream, bool from_logits = false);

  std::vector<Tensor<T>*> parameters(bool trainable_only = false);
  std::vector<Tensor<T>*> buffers();
  std::size_t parameter_count() const;
  void freeze(bool f = true);

  // Layers of `head` appended after this network's; input shapes must chain.
  Network then(const Network& head) const;
  template <typename U>
  Network<U> cast() const;

  // Append a layer initialised from `rng`.
  void add(const LayerSpec& spec, std::mt19937_64& rng);

 private:
  template <typename U>
  friend class Network;
  Shape input_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool cache_valid_ = false;
};

extern template class Network<float>;
extern template class Network<double>;
extern template Network<double> Network<float>::cast<double>() const;
extern template Network<float> Network<double>::cast<float>() const;

template <typename T>
struct LossResult {
  T value = T(0);
  Tensor<T> grad;  // w.r.t. the tensor the loss was evaluated on
};

// Mean -log p[label] over the batch, evaluated on softmax outputs. The
// gradient returned is w.r.t. the logits (p - onehot)/N, for use with
// Network::backward(..., from_logits = true).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels);

struct Triplet {
  int anchor, positive, negative;
  bool operator==(const Triplet&) const = default;
};

// Mean over triplets of max(|a-p|^2 - |a-n|^2 + margin, 0) on rows of an
// N x D embedding tensor; gradient w.r.t. the embeddings.
template <typename T>
LossResult<T> triplet_loss(const Tensor<T>& embeddings, const std::vector<Triplet>& triplets, T margin);

// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

template <typename T>
void adam_step(OptimizerState& state, const std::vector<Tensor<T>*>& params);

// Central differences with step h on every parameter (and the input), in
// train mode with the same random stream for every evaluation so dropout
// masks stay fixed. Relative error is |a - n| / max(|a| + |n|, floor).
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // where the max occurred, for diagnostics
};

struct GradCheckLoss {
  std::function<LossResult<double>(const Tensor<double>&)> fn;
  bool from_logits = false;
};

GradCheckResult gradient_check(Network<double>& net, const Tensor<double>& x, const GradCheckLoss& loss,
                               double h = 1e-5, double floor = 1e-6, std::uint64_t seed = 42);

// Small double-precision networks that together exercise every layer kind,
// cross-entropy and the triplet loss.
struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};
std::vector<NamedGradCheck> gradient_check_suite(std::uint64_t seed = 42);

// Checkpoint container: "FSNN", version, layer count, then per layer a kind
// tag, its configuration and its tensors as little-endian float32. A sidecar
// `<path>.json` carries the input shape and training metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata);
Network<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace formdigit
