#include <numeric>
#include <sstream>

#include "formdigit/errors.hpp"
#include "layers.hpp"

namespace formdigit {

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(std::max(d, 0)); });
}

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_size(shape))
    throw ShapeMismatch(std::to_string(values.size()) + " values for shape " + shape_string(shape));
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::L2Normalize: return "l2normalize";
  }
  return "unknown";
}

template <typename T>
Network<T>::Network(Shape input, const std::vector<LayerSpec>& specs, std::uint64_t seed) : input_(std::move(input)) {
  std::mt19937_64 rng(seed);
  for (const LayerSpec& s : specs) add(s, rng);
}

template <typename T>
Network<T>::Network(const Network& o) : input_(o.input_), cache_valid_(false) {
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& o) {
  if (this != &o) {
    Network copy(o);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
void Network<T>::add(const LayerSpec& spec, std::mt19937_64& rng) {
  const Shape in = layers_.empty() ? input_ : layers_.back()->output_shape();
  layers_.push_back(make_layer<T>(spec, in, rng));
  cache_valid_ = false;
}

template <typename T>
Shape Network<T>::output_shape() const {
  return layers_.empty() ? input_ : layers_.back()->output_shape();
}

template <typename T>
std::vector<LayerSpec> Network<T>::specs() const {
  std::vector<LayerSpec> out;
  for (const auto& l : layers_) out.push_back(l->spec());
  return out;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) {
  if (x.shape.size() != input_.size() + 1 || !std::equal(input_.begin(), input_.end(), x.shape.begin() + 1))
    throw ShapeMismatch("network expects N x " + shape_string(input_) + ", got " + shape_string(x.shape));
  if (x.values.size() != shape_size(x.shape)) throw ShapeMismatch("tensor size disagrees with its shape");
  cache_valid_ = false;
  Tensor<T> a = x;
  for (auto& l : layers_) a = l->forward(a, mode, rng);
  cache_valid_ = mode == Mode::Train;
  return a;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& x) {
  std::mt19937_64 unused(0);
  return forward(x, Mode::Eval, unused);
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& upstream, bool from_logits) {
  if (!cache_valid_) throw StaleCache("backward() needs a preceding train-mode forward()");
  std::size_t end = layers_.size();
  if (from_logits) {
    if (layers_.empty() || layers_.back()->spec().kind != LayerKind::Softmax)
      throw std::logic_error("from_logits requires a final softmax layer");
    --end;
  }
  const Shape expected = end == 0 ? input_ : layers_[end - 1]->output_shape();
  if (upstream.shape.size() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), upstream.shape.begin() + 1))
    throw ShapeMismatch("upstream gradient " + shape_string(upstream.shape) + " does not match " + shape_string(expected));
  cache_valid_ = false;
  Tensor<T> g = upstream;
  for (std::size_t i = end; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::parameters(bool trainable_only) {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_) {
    if (trainable_only && l->frozen) continue;
    for (Tensor<T>* p : l->parameters()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Network<T>::buffers() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers_)
    for (Tensor<T>* b : l->buffers()) out.push_back(b);
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (Tensor<T>* p : const_cast<Network*>(this)->parameters()) n += p->size();
  return n;
}

template <typename T>
void Network<T>::freeze(bool f) {
  for (auto& l : layers_) l->frozen = f;
}

template <typename T>
Network<T> Network<T>::then(const Network& head) const {
  if (head.input_ != output_shape() && shape_size(head.input_) != shape_size(output_shape()))
    throw ShapeMismatch("head input " + shape_string(head.input_) + " does not follow " + shape_string(output_shape()));
  Network out(*this);
  for (const auto& l : head.layers_) out.layers_.push_back(l->clone());
  return out;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(input_, specs(), 0);
  auto& self = const_cast<Network&>(*this);
  auto copy = [](const std::vector<Tensor<T>*>& from, const std::vector<Tensor<U>*>& to) {
    for (std::size_t i = 0; i < from.size(); ++i)
      for (std::size_t k = 0; k < from[i]->size(); ++k) to[i]->values[k] = static_cast<U>(from[i]->values[k]);
  };
  copy(self.parameters(), out.parameters());
  copy(self.buffers(), out.buffers());
  for (std::size_t i = 0; i < layers_.size(); ++i) out.layers_[i]->frozen = layers_[i]->frozen;
  return out;
}

template struct Tensor<float>;
template struct Tensor<double>;
template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;

}  // namespace formdigit
