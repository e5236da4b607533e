#include "layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "formdigit/errors.hpp"

namespace formdigit {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void he_uniform(Tensor<T>& w, int fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (T& v : w.values) v = static_cast<T>(dist(rng));
}

// Uniform in [0,1) from the top 53 bits, identical on every platform.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
Shape batch_shape(int n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <typename T>
class Conv3x3 final : public Layer<T> {
 public:
  Conv3x3(const Shape& in, int out_channels, std::mt19937_64& rng) {
    if (in.size() != 3) throw ShapeMismatch("conv3x3 expects C,H,W input, got " + shape_string(in));
    this->in_ = in;
    this->out_ = {out_channels, in[1], in[2]};
    weight_ = Tensor<T>({out_channels, in[0], 3, 3});
    bias_ = Tensor<T>({out_channels});
    he_uniform(weight_, in[0] * 9, rng);
    weight_.ensure_grad();
    bias_.ensure_grad();
  }
  LayerSpec spec() const override { return LayerSpec::conv3x3(this->out_[0]); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv3x3>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const int n = x.batch(), c = this->in_[0], h = this->in_[1], w = this->in_[2];
    const int o = this->out_[0];
    const long p = static_cast<long>(h) * w, np = n * p;
    col_.assign(static_cast<std::size_t>(c) * 9 * np, T(0));
    for (int ci = 0; ci < c; ++ci)
      for (int k = 0; k < 9; ++k) {
        const int ky = k / 3 - 1, kx = k % 3 - 1;
        T* row = col_.data() + (static_cast<long>(ci) * 9 + k) * np;
        for (int s = 0; s < n; ++s) {
          const T* src = x.item(s) + static_cast<long>(ci) * p;
          T* dst = row + s * p;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -kx), x1 = std::min(w, w - kx);
            for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[sy * w + xx + kx];
          }
        }
      }
    RowMat<T> out2 = ConstMatMap<T>(weight_.values.data(), o, c * 9) * ConstMatMap<T>(col_.data(), c * 9, np);
    Tensor<T> y(batch_shape<T>(n, this->out_));
    for (int s = 0; s < n; ++s)
      for (int oc = 0; oc < o; ++oc) {
        const T* src = out2.data() + oc * np + s * p;
        T* dst = y.item(s) + oc * p;
        const T b = bias_.values[oc];
        for (long i = 0; i < p; ++i) dst[i] = src[i] + b;
      }
    batch_ = n;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int n = batch_, c = this->in_[0], h = this->in_[1], w = this->in_[2];
    const int o = this->out_[0];
    const long p = static_cast<long>(h) * w, np = n * p;
    RowMat<T> g2(o, np);
    for (int s = 0; s < n; ++s)
      for (int oc = 0; oc < o; ++oc) std::copy_n(g.item(s) + oc * p, p, g2.data() + oc * np + s * p);
    const ConstMatMap<T> col(col_.data(), c * 9, np);
    MatMap<T>(weight_.grad.data(), o, c * 9).noalias() = g2 * col.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.grad.data(), o) = g2.rowwise().sum();
    const RowMat<T> dcol = ConstMatMap<T>(weight_.values.data(), o, c * 9).transpose() * g2;

    Tensor<T> dx(batch_shape<T>(n, this->in_));
    for (int ci = 0; ci < c; ++ci)
      for (int k = 0; k < 9; ++k) {
        const int ky = k / 3 - 1, kx = k % 3 - 1;
        const T* row = dcol.data() + (static_cast<long>(ci) * 9 + k) * np;
        for (int s = 0; s < n; ++s) {
          const T* src = row + s * p;
          T* dst = dx.item(s) + static_cast<long>(ci) * p;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, -kx), x1 = std::min(w, w - kx);
            for (int xx = x0; xx < x1; ++xx) dst[sy * w + xx + kx] += src[y * w + xx];
          }
        }
      }
    return dx;
  }

  std::vector<Tensor<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  Tensor<T> weight_, bias_;
  std::vector<T> col_;
  int batch_ = 0;
};

template <typename T>
class MaxPool2 final : public Layer<T> {
 public:
  explicit MaxPool2(const Shape& in) {
    if (in.size() != 3 || in[1] < 2 || in[2] < 2)
      throw ShapeMismatch("maxpool2 expects C,H,W input of at least 2x2, got " + shape_string(in));
    this->in_ = in;
    this->out_ = {in[0], in[1] / 2, in[2] / 2};
  }
  LayerSpec spec() const override { return LayerSpec::maxpool2(); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const int n = x.batch(), c = this->in_[0], h = this->in_[1], w = this->in_[2];
    const int oh = this->out_[1], ow = this->out_[2];
    Tensor<T> y(batch_shape<T>(n, this->out_));
    argmax_.resize(y.size());
    std::size_t k = 0;
    for (int s = 0; s < n; ++s)
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t base = static_cast<std::size_t>(s) * x.stride() + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox, ++k) {
            std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
            for (int d = 1; d < 4; ++d) {
              const std::size_t idx = base + static_cast<std::size_t>(2 * oy + d / 2) * w + 2 * ox + d % 2;
              if (x.values[idx] > x.values[best]) best = idx;
            }
            argmax_[k] = best;
            y.values[k] = x.values[best];
          }
      }
    batch_ = n;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(batch_shape<T>(batch_, this->in_));
    for (std::size_t k = 0; k < g.size(); ++k) dx.values[argmax_[k]] += g.values[k];
    return dx;
  }

 private:
  std::vector<std::size_t> argmax_;
  int batch_ = 0;
};

// Normalises each channel (first per-sample dimension) over batch and space.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEpsilon = 1e-5;

  explicit BatchNorm(const Shape& in) {
    if (in.empty()) throw ShapeMismatch("batchnorm needs a non-empty input shape");
    this->in_ = this->out_ = in;
    const int c = in[0];
    gamma_ = Tensor<T>({c}, T(1));
    beta_ = Tensor<T>({c});
    gamma_.ensure_grad();
    beta_.ensure_grad();
    running_mean_ = Tensor<T>({c});
    running_var_ = Tensor<T>({c}, T(1));
  }
  LayerSpec spec() const override { return LayerSpec::batchnorm(); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64&) override {
    const int n = x.batch(), c = this->in_[0];
    const std::size_t sp = shape_size(this->in_) / c;
    Tensor<T> y(x.shape);
    if (mode == Mode::Eval) {
      for (int ci = 0; ci < c; ++ci) {
        const T inv = T(1) / std::sqrt(running_var_.values[ci] + T(kEpsilon));
        const T scale = gamma_.values[ci] * inv;
        const T shift = beta_.values[ci] - running_mean_.values[ci] * scale;
        for (int s = 0; s < n; ++s) {
          const T* src = x.item(s) + ci * sp;
          T* dst = y.item(s) + ci * sp;
          for (std::size_t i = 0; i < sp; ++i) dst[i] = src[i] * scale + shift;
        }
      }
      return y;
    }
    const double m = static_cast<double>(n) * sp;
    xhat_ = Tensor<T>(x.shape);
    inv_std_.assign(c, T(0));
    for (int ci = 0; ci < c; ++ci) {
      double sum = 0;
      for (int s = 0; s < n; ++s) {
        const T* src = x.item(s) + ci * sp;
        for (std::size_t i = 0; i < sp; ++i) sum += src[i];
      }
      const double mean = sum / m;
      double sq = 0;
      for (int s = 0; s < n; ++s) {
        const T* src = x.item(s) + ci * sp;
        for (std::size_t i = 0; i < sp; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      const double var = sq / m;
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEpsilon));
      inv_std_[ci] = inv;
      for (int s = 0; s < n; ++s) {
        const T* src = x.item(s) + ci * sp;
        T* xh = xhat_.item(s) + ci * sp;
        T* dst = y.item(s) + ci * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          xh[i] = (src[i] - static_cast<T>(mean)) * inv;
          dst[i] = gamma_.values[ci] * xh[i] + beta_.values[ci];
        }
      }
      running_mean_.values[ci] = static_cast<T>(kMomentum * running_mean_.values[ci] + (1 - kMomentum) * mean);
      running_var_.values[ci] = static_cast<T>(kMomentum * running_var_.values[ci] + (1 - kMomentum) * var);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int n = g.batch(), c = this->in_[0];
    const std::size_t sp = shape_size(this->in_) / c;
    const T m = static_cast<T>(static_cast<double>(n) * sp);
    Tensor<T> dx(g.shape);
    for (int ci = 0; ci < c; ++ci) {
      T sum_g = 0, sum_gx = 0;
      for (int s = 0; s < n; ++s) {
        const T* gs = g.item(s) + ci * sp;
        const T* xh = xhat_.item(s) + ci * sp;
        for (std::size_t i = 0; i < sp; ++i) {
          sum_g += gs[i];
          sum_gx += gs[i] * xh[i];
        }
      }
      beta_.grad[ci] = sum_g;
      gamma_.grad[ci] = sum_gx;
      const T k = gamma_.values[ci] * inv_std_[ci] / m;
      for (int s = 0; s < n; ++s) {
        const T* gs = g.item(s) + ci * sp;
        const T* xh = xhat_.item(s) + ci * sp;
        T* d = dx.item(s) + ci * sp;
        for (std::size_t i = 0; i < sp; ++i) d[i] = k * (m * gs[i] - sum_g - xh[i] * sum_gx);
      }
    }
    return dx;
  }

  std::vector<Tensor<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&running_mean_, &running_var_}; }

 private:
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// Flattens whatever it receives.
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(const Shape& in, int units, std::mt19937_64& rng) {
    if (in.empty() || units <= 0) throw ShapeMismatch("dense needs an input shape and positive units");
    this->in_ = in;
    this->out_ = {units};
    const int k = static_cast<int>(shape_size(in));
    weight_ = Tensor<T>({units, k});
    bias_ = Tensor<T>({units});
    he_uniform(weight_, k, rng);
    weight_.ensure_grad();
    bias_.ensure_grad();
  }
  LayerSpec spec() const override { return LayerSpec::dense(this->out_[0]); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const int n = x.batch(), u = this->out_[0], k = static_cast<int>(shape_size(this->in_));
    x_ = x;
    Tensor<T> y({n, u});
    MatMap<T> ym(y.values.data(), n, u);
    ym.noalias() = ConstMatMap<T>(x.values.data(), n, k) * ConstMatMap<T>(weight_.values.data(), u, k).transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.values.data(), u);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int n = g.batch(), u = this->out_[0], k = static_cast<int>(shape_size(this->in_));
    const ConstMatMap<T> gm(g.values.data(), n, u);
    const ConstMatMap<T> xm(x_.values.data(), n, k);
    MatMap<T>(weight_.grad.data(), u, k).noalias() = gm.transpose() * xm;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), u) = gm.colwise().sum();
    Tensor<T> dx(x_.shape);
    MatMap<T>(dx.values.data(), n, k).noalias() = gm * ConstMatMap<T>(weight_.values.data(), u, k);
    return dx;
  }

  std::vector<Tensor<T>*> parameters() override { return {&weight_, &bias_}; }

 private:
  Tensor<T> weight_, bias_, x_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  explicit Relu(const Shape& in) { this->in_ = this->out_ = in; }
  LayerSpec spec() const override { return LayerSpec::relu(); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    Tensor<T> y = x;
    for (T& v : y.values) v = v > T(0) ? v : T(0);
    y_ = y.values;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y_[i] > T(0))) dx.values[i] = T(0);
    return dx;
  }

 private:
  std::vector<T> y_;
};

template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(const Shape& in, double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0,1)");
    this->in_ = this->out_ = in;
  }
  LayerSpec spec() const override { return LayerSpec::dropout(rate_); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) override {
    if (mode == Mode::Eval || rate_ == 0.0) {
      mask_.assign(x.size(), T(1));
      return x;
    }
    const T keep = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(x.size());
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = unit_draw(rng) < rate_ ? T(0) : keep;
      y.values[i] *= mask_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.values[i] *= mask_[i];
    return dx;
  }

 private:
  double rate_;
  std::vector<T> mask_;
};

template <typename T>
class Softmax final : public Layer<T> {
 public:
  explicit Softmax(const Shape& in) {
    this->in_ = in;
    this->out_ = {static_cast<int>(shape_size(in))};
  }
  LayerSpec spec() const override { return LayerSpec::softmax(); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const int n = x.batch();
    const std::size_t d = x.stride();
    Tensor<T> y({n, static_cast<int>(d)});
    for (int s = 0; s < n; ++s) {
      const T* in = x.item(s);
      T* out = y.item(s);
      const T top = *std::max_element(in, in + d);
      T sum = 0;
      for (std::size_t i = 0; i < d; ++i) sum += out[i] = std::exp(in[i] - top);
      for (std::size_t i = 0; i < d; ++i) out[i] /= sum;
    }
    y_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(batch_shape<T>(g.batch(), this->in_));
    const std::size_t d = y_.stride();
    for (int s = 0; s < g.batch(); ++s) {
      const T* p = y_.item(s);
      const T* gs = g.item(s);
      T dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += gs[i] * p[i];
      for (std::size_t i = 0; i < d; ++i) dx.item(s)[i] = p[i] * (gs[i] - dot);
    }
    return dx;
  }

 private:
  Tensor<T> y_;
};

template <typename T>
class L2Normalize final : public Layer<T> {
 public:
  explicit L2Normalize(const Shape& in) {
    this->in_ = in;
    this->out_ = {static_cast<int>(shape_size(in))};
  }
  LayerSpec spec() const override { return LayerSpec::l2normalize(); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<L2Normalize>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const int n = x.batch();
    const std::size_t d = x.stride();
    Tensor<T> y({n, static_cast<int>(d)});
    norms_.assign(n, T(0));
    for (int s = 0; s < n; ++s) {
      T sq = 0;
      for (std::size_t i = 0; i < d; ++i) sq += x.item(s)[i] * x.item(s)[i];
      // An all-zero row stays zero rather than producing NaNs.
      const T norm = std::max(std::sqrt(sq), std::numeric_limits<T>::min());
      norms_[s] = norm;
      for (std::size_t i = 0; i < d; ++i) y.item(s)[i] = x.item(s)[i] / norm;
    }
    y_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(batch_shape<T>(g.batch(), this->in_));
    const std::size_t d = y_.stride();
    for (int s = 0; s < g.batch(); ++s) {
      const T* y = y_.item(s);
      const T* gs = g.item(s);
      T dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += gs[i] * y[i];
      for (std::size_t i = 0; i < d; ++i) dx.item(s)[i] = (gs[i] - y[i] * dot) / norms_[s];
    }
    return dx;
  }

 private:
  Tensor<T> y_;
  std::vector<T> norms_;
};

}  // namespace

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, const Shape& in, std::mt19937_64& rng) {
  switch (spec.kind) {
    case LayerKind::Conv3x3:
      return std::make_unique<Conv3x3<T>>(in, spec.units, rng);
    case LayerKind::MaxPool2:
      return std::make_unique<MaxPool2<T>>(in);
    case LayerKind::BatchNorm:
      return std::make_unique<BatchNorm<T>>(in);
    case LayerKind::Dense:
      return std::make_unique<Dense<T>>(in, spec.units, rng);
    case LayerKind::Relu:
      return std::make_unique<Relu<T>>(in);
    case LayerKind::Dropout:
      return std::make_unique<Dropout<T>>(in, spec.rate);
    case LayerKind::Softmax:
      return std::make_unique<Softmax<T>>(in);
    case LayerKind::L2Normalize:
      return std::make_unique<L2Normalize<T>>(in);
  }
  throw std::invalid_argument("unknown layer kind");
}

template std::unique_ptr<Layer<float>> make_layer<float>(const LayerSpec&, const Shape&, std::mt19937_64&);
template std::unique_ptr<Layer<double>> make_layer<double>(const LayerSpec&, const Shape&, std::mt19937_64&);

}  // namespace formdigit
