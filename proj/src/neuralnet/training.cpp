#include <algorithm>
#include <cmath>
#include <limits>

#include "formdigit/errors.hpp"
#include "formdigit/neuralnet.hpp"

namespace formdigit {

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
  const int n = probs.batch();
  if (static_cast<std::size_t>(n) != labels.size())
    throw ShapeMismatch(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(n));
  const std::size_t d = probs.stride();
  LossResult<T> out;
  out.grad = Tensor<T>(probs.shape);
  double total = 0;
  for (int s = 0; s < n; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= d) throw std::out_of_range("label outside the class range");
    const T* p = probs.item(s);
    total -= std::log(std::max(static_cast<double>(p[y]), 1e-30));
    T* g = out.grad.item(s);
    for (std::size_t i = 0; i < d; ++i) g[i] = p[i] / static_cast<T>(n);
    g[y] -= T(1) / static_cast<T>(n);
  }
  out.value = static_cast<T>(total / n);
  return out;
}

template <typename T>
LossResult<T> triplet_loss(const Tensor<T>& e, const std::vector<Triplet>& triplets, T margin) {
  LossResult<T> out;
  out.grad = Tensor<T>(e.shape);
  if (triplets.empty()) return out;
  const std::size_t d = e.stride();
  const T scale = T(1) / static_cast<T>(triplets.size());
  double total = 0;
  for (const Triplet& t : triplets) {
    const T* a = e.item(t.anchor);
    const T* p = e.item(t.positive);
    const T* n = e.item(t.negative);
    T dap = 0, dan = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dap += (a[i] - p[i]) * (a[i] - p[i]);
      dan += (a[i] - n[i]) * (a[i] - n[i]);
    }
    const T l = dap - dan + margin;
    if (!(l > T(0))) continue;
    total += l;
    T* ga = out.grad.item(t.anchor);
    T* gp = out.grad.item(t.positive);
    T* gn = out.grad.item(t.negative);
    for (std::size_t i = 0; i < d; ++i) {
      ga[i] += scale * T(2) * (n[i] - p[i]);
      gp[i] += scale * T(2) * (p[i] - a[i]);
      gn[i] += scale * T(2) * (a[i] - n[i]);
    }
  }
  out.value = static_cast<T>(total / triplets.size());
  return out;
}

template <typename T>
void adam_step(OptimizerState& st, const std::vector<Tensor<T>*>& params) {
  if (!(st.learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (st.m.empty()) {
    for (const Tensor<T>* p : params) {
      st.m.emplace_back(p->size(), 0.0);
      st.v.emplace_back(p->size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeMismatch("optimizer state tracks a different parameter list");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    if (p.grad.size() != p.size() || st.m[k].size() != p.size())
      throw ShapeMismatch("parameter and gradient sizes disagree");
    std::vector<double>& m = st.m[k];
    std::vector<double>& v = st.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      m[i] = st.beta1 * m[i] + (1 - st.beta1) * g;
      v[i] = st.beta2 * v[i] + (1 - st.beta2) * g * g;
      p.values[i] -= static_cast<T>(st.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.epsilon));
    }
  }
}

GradCheckResult gradient_check(Network<double>& net, const Tensor<double>& x, const GradCheckLoss& loss,
                               double h, double floor, std::uint64_t seed) {
  auto evaluate = [&](const Tensor<double>& input) {
    std::mt19937_64 rng(seed);
    return loss.fn(net.forward(input, Mode::Train, rng));
  };
  // Batchnorm running statistics move on every train-mode pass but never
  // enter the train-mode output, so they can be left alone.
  LossResult<double> base = evaluate(x);
  const Tensor<double> dx = net.backward(base.grad, loss.from_logits);

  GradCheckResult out;
  auto compare = [&](double analytic, double numeric, const std::string& where) {
    const double err = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
    ++out.checked;
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst = where;
    }
  };

  std::vector<Tensor<double>*> params = net.parameters();
  std::vector<std::vector<double>> analytic;
  for (Tensor<double>* p : params) analytic.push_back(p->grad);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<double>& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p.values[i];
      p.values[i] = keep + h;
      const double up = evaluate(x).value;
      p.values[i] = keep - h;
      const double down = evaluate(x).value;
      p.values[i] = keep;
      compare(analytic[k][i], (up - down) / (2 * h), "parameter " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe.values[i];
    probe.values[i] = keep + h;
    const double up = evaluate(probe).value;
    probe.values[i] = keep - h;
    const double down = evaluate(probe).value;
    probe.values[i] = keep;
    compare(dx.values[i], (up - down) / (2 * h), "input[" + std::to_string(i) + "]");
  }
  return out;
}

std::vector<NamedGradCheck> gradient_check_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_tensor = [&](Shape s) {
    Tensor<double> t(std::move(s));
    for (double& v : t.values) v = normal(rng);
    return t;
  };
  std::vector<NamedGradCheck> out;

  {
    Network<double> net({2, 8, 8},
                        {LayerSpec::conv3x3(3), LayerSpec::relu(), LayerSpec::maxpool2(), LayerSpec::batchnorm(),
                         LayerSpec::conv3x3(4), LayerSpec::relu(), LayerSpec::maxpool2(), LayerSpec::batchnorm(),
                         LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dropout(0.5), LayerSpec::dense(5),
                         LayerSpec::softmax()},
                        seed);
    const Tensor<double> x = random_tensor({4, 2, 8, 8});
    const std::vector<int> y = {0, 3, 1, 4};
    out.push_back({"conv-relu-pool-bn-dense-dropout-softmax + cross-entropy",
                   gradient_check(net, x, {[&](const Tensor<double>& p) { return softmax_cross_entropy(p, y); }, true})});
  }
  {
    // Softmax on its own Jacobian path, without the fused cross-entropy.
    Network<double> net({7}, {LayerSpec::dense(5), LayerSpec::softmax()}, seed + 1);
    const Tensor<double> x = random_tensor({3, 7});
    auto weighted = [](const Tensor<double>& p) {
      LossResult<double> l;
      l.grad = Tensor<double>(p.shape);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double w = static_cast<double>(i % 3) + 1.0;
        l.value += w * p.values[i] * p.values[i];
        l.grad.values[i] = 2 * w * p.values[i];
      }
      return l;
    };
    out.push_back({"dense-softmax + quadratic", gradient_check(net, x, {weighted, false})});
  }
  {
    Network<double> net({1, 6, 6},
                        {LayerSpec::conv3x3(3), LayerSpec::relu(), LayerSpec::maxpool2(), LayerSpec::dense(8),
                         LayerSpec::batchnorm(), LayerSpec::dropout(0.3), LayerSpec::l2normalize()},
                        seed + 2);
    const Tensor<double> x = random_tensor({6, 1, 6, 6});
    const std::vector<Triplet> t = {{0, 1, 2}, {1, 0, 3}, {4, 5, 0}, {2, 3, 5}, {5, 4, 1}};
    // A wide margin keeps every hinge active, away from its kink.
    out.push_back({"conv-pool-dense-bn-dropout-l2normalize + triplet",
                   gradient_check(net, x, {[&](const Tensor<double>& e) { return triplet_loss(e, t, 4.0); }, false})});
  }
  return out;
}

template LossResult<float> softmax_cross_entropy(const Tensor<float>&, const std::vector<int>&);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, const std::vector<int>&);
template LossResult<float> triplet_loss(const Tensor<float>&, const std::vector<Triplet>&, float);
template LossResult<double> triplet_loss(const Tensor<double>&, const std::vector<Triplet>&, double);
template void adam_step(OptimizerState&, const std::vector<Tensor<float>*>&);
template void adam_step(OptimizerState&, const std::vector<Tensor<double>*>&);

}  // namespace formdigit
