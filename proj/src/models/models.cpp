#include "formdigit/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <json.hpp>
#include <numeric>

#include "formdigit/errors.hpp"

namespace formdigit {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Independent stream per (epoch, batch) so results never depend on how the
// work was scheduled.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
  return std::mt19937_64(splitmix(seed ^ splitmix((epoch << 32) | batch)));
}

const Shape kInput = {1, 32, 32};

void conv_stack(std::vector<LayerSpec>& out, bool batchnorm) {
  for (int c : {16, 32, 64, 128, 128}) {
    out.push_back(LayerSpec::conv3x3(c));
    out.push_back(LayerSpec::relu());
    out.push_back(LayerSpec::maxpool2());
    if (batchnorm) out.push_back(LayerSpec::batchnorm());
  }
}

struct Eval {
  double loss = 0, acc = 0;
};

Eval evaluate_ce(Network<float>& net, const std::vector<GrayImage>& images, const std::vector<int>& labels) {
  Eval e;
  const std::size_t n = images.size();
  if (n == 0) return e;
  std::size_t correct = 0;
  double total = 0;
  for (std::size_t b = 0; b < n; b += 500) {
    std::vector<std::size_t> idx(std::min<std::size_t>(500, n - b));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor<float> p = net.predict(make_batch(images, idx));
    std::vector<int> y;
    for (std::size_t i : idx) y.push_back(labels[i]);
    total += softmax_cross_entropy(p, y).value * static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (prediction_from_probs(p.item(static_cast<int>(k)), static_cast<int>(p.stride())).digit == y[k]) ++correct;
  }
  e.loss = total / n;
  e.acc = static_cast<double>(correct) / n;
  return e;
}

// Batch-all loss over consecutive chunks, and nearest-class-mean accuracy.
Eval evaluate_triplet(Network<float>& net, const LabeledDigitSet& set, int batch, double margin) {
  Eval e;
  const Tensor<float> emb = predict_all(net, set.images);
  const std::size_t d = emb.stride();
  double total = 0;
  int chunks = 0;
  for (std::size_t b = 0; b < set.size(); b += static_cast<std::size_t>(batch)) {
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(batch), set.size() - b);
    Tensor<float> part({static_cast<int>(m), static_cast<int>(d)});
    std::copy_n(emb.item(static_cast<int>(b)), m * d, part.values.begin());
    std::vector<int> y(set.labels.begin() + static_cast<std::ptrdiff_t>(b), set.labels.begin() + static_cast<std::ptrdiff_t>(b + m));
    total += batch_all_triplet_loss(part, y, margin);
    ++chunks;
  }
  e.loss = chunks ? total / chunks : 0.0;
  std::vector<std::vector<double>> mean(static_cast<std::size_t>(set.num_classes), std::vector<double>(d, 0.0));
  std::vector<int> count(static_cast<std::size_t>(set.num_classes), 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    ++count[set.labels[i]];
    for (std::size_t k = 0; k < d; ++k) mean[set.labels[i]][k] += emb.item(static_cast<int>(i))[k];
  }
  for (std::size_t c = 0; c < mean.size(); ++c)
    for (double& v : mean[c]) v /= std::max(count[c], 1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < mean.size(); ++c) {
      if (!count[c]) continue;
      double dist = 0;
      for (std::size_t k = 0; k < d; ++k) dist += std::pow(emb.item(static_cast<int>(i))[k] - mean[c][k], 2);
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<int>(c);
      }
    }
    if (best == set.labels[i]) ++correct;
  }
  e.acc = set.size() ? static_cast<double>(correct) / set.size() : 0.0;
  return e;
}

void report(const EpochStats& s, const char* what) {
  std::cerr << what << " epoch " << s.epoch << std::fixed << std::setprecision(4) << " train_loss " << s.train_loss
            << " val_loss " << s.val_loss << " val_acc " << s.val_acc << std::setprecision(6) << " lr " << s.lr
            << std::defaultfloat << '\n';
}

// Bookkeeping shared by the image trainer and the head trainer: keeps the
// best-validation weights, lowers the learning rate on plateaus and decides
// when to stop.
struct Plateau {
  const TrainConfig& cfg;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0, since_lr = 0;

  // Returns true when training should stop.
  bool update(double val_loss, int epoch, OptimizerState& opt, Network<float>& net, Network<float>& best_net,
              TrainResult& r) {
    if (val_loss < best) {
      best = val_loss;
      best_net = net;
      r.best_epoch = epoch;
      since_best = since_lr = 0;
    } else {
      ++since_best;
      if (++since_lr >= cfg.lr_patience) {
        opt.learning_rate = std::max(opt.learning_rate * cfg.lr_decay, cfg.lr_floor);
        since_lr = 0;
      }
    }
    if (since_best >= cfg.early_stop_patience) {
      r.stopped_early = true;
      return true;
    }
    return false;
  }
};

}  // namespace

std::vector<LayerSpec> direct_classifier_specs() {
  std::vector<LayerSpec> s;
  conv_stack(s, true);
  s.push_back(LayerSpec::dense(256));
  s.push_back(LayerSpec::relu());
  s.push_back(LayerSpec::dropout(0.5));
  s.push_back(LayerSpec::dense(10));
  s.push_back(LayerSpec::softmax());
  return s;
}

std::vector<LayerSpec> triplet_embedder_specs(int embedding_dim) {
  if (embedding_dim < 2) throw std::invalid_argument("embedding_dim must be at least 2");
  std::vector<LayerSpec> s;
  conv_stack(s, false);
  s.push_back(LayerSpec::dense(embedding_dim));
  s.push_back(LayerSpec::dropout(0.5));
  s.push_back(LayerSpec::l2normalize());
  return s;
}

std::vector<LayerSpec> blank_classifier_specs() {
  return {LayerSpec::conv3x3(16), LayerSpec::relu(),     LayerSpec::maxpool2(),
          LayerSpec::conv3x3(32), LayerSpec::relu(),     LayerSpec::maxpool2(),
          LayerSpec::dense(64),   LayerSpec::relu(),     LayerSpec::dense(2),
          LayerSpec::softmax()};
}

Network<float> build_direct_classifier(std::uint64_t seed) { return {kInput, direct_classifier_specs(), seed}; }

Network<float> build_triplet_embedder(std::uint64_t seed, int embedding_dim) {
  return {kInput, triplet_embedder_specs(embedding_dim), seed};
}

Network<float> build_blank_classifier(std::uint64_t seed) { return {kInput, blank_classifier_specs(), seed}; }

std::vector<double> pairwise_sq_distances(const Tensor<float>& e) {
  const int n = e.batch();
  const std::size_t d = e.stride();
  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0;
      const float* a = e.item(i);
      const float* b = e.item(j);
      for (std::size_t k = 0; k < d; ++k) {
        const double t = static_cast<double>(a[k]) - b[k];
        s += t * t;
      }
      dist[static_cast<std::size_t>(i) * n + j] = dist[static_cast<std::size_t>(j) * n + i] = s;
    }
  return dist;
}

MinedTriplets mine_triplets(const Tensor<float>& e, const std::vector<int>& labels, double margin, Mining mining) {
  const int n = e.batch();
  if (static_cast<std::size_t>(n) != labels.size()) throw ShapeMismatch("labels and embeddings differ in count");
  if (!(margin > 0)) throw std::invalid_argument("margin must be positive");
  const std::vector<double> dist = pairwise_sq_distances(e);
  auto d = [&](int i, int j) { return dist[static_cast<std::size_t>(i) * n + j]; };
  MinedTriplets out;
  for (int a = 0; a < n; ++a)
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double dap = d(a, p);
      bool found = false;
      int fallback = -1;
      for (int q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        const double dan = d(a, q);
        if (dan >= dap + margin) continue;
        if (dan > dap) {
          out.triplets.push_back({a, p, q});
          out.semi_hard.push_back(true);
          found = true;
        } else if (dan > dap - margin && (fallback < 0 || dan < d(a, fallback))) {
          // Hard, but still inside the margin band around d(a,p).
          fallback = q;
        }
      }
      if (!found && fallback >= 0 && mining == Mining::HardestInMarginFallback) {
        out.triplets.push_back({a, p, fallback});
        out.semi_hard.push_back(false);
      }
    }
  if (out.triplets.empty()) throw NoValidTriplets("batch of " + std::to_string(n) + " produced no triplets");
  return out;
}

double batch_all_triplet_loss(const Tensor<float>& e, const std::vector<int>& labels, double margin) {
  const int n = e.batch();
  const std::vector<double> dist = pairwise_sq_distances(e);
  double total = 0;
  std::size_t count = 0;
  for (int a = 0; a < n; ++a)
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      const double dap = dist[static_cast<std::size_t>(a) * n + p];
      for (int q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        total += std::max(dap - dist[static_cast<std::size_t>(a) * n + q] + margin, 0.0);
        ++count;
      }
    }
  return count ? total / static_cast<double>(count) : 0.0;
}

Tensor<float> make_batch(const std::vector<GrayImage>& images, const std::vector<std::size_t>& indices) {
  Tensor<float> t({static_cast<int>(indices.size()), 1, 32, 32});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const GrayImage& src = images.at(indices[k]);
    const GrayImage img = src.width() == 32 && src.height() == 32 ? src : pad_to_32(src);
    if (img.width() != 32 || img.height() != 32)
      throw ShapeMismatch("network inputs must be 28x28 or 32x32, got " + std::to_string(src.width()) + "x" +
                          std::to_string(src.height()));
    std::copy(img.pixels().begin(), img.pixels().end(), t.item(static_cast<int>(k)));
  }
  return t;
}

Tensor<float> make_batch(const std::vector<GrayImage>& images) {
  std::vector<std::size_t> idx(images.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(images, idx);
}

GrayImage augment_digit(const GrayImage& src, int pad, double border_line_prob, std::mt19937_64& rng) {
  const GrayImage img = src.width() == 32 && src.height() == 32 ? src : pad_to_32(src);
  std::uniform_int_distribution<int> shift(-pad, pad);
  const int dx = shift(rng), dy = shift(rng);
  GrayImage out(32, 32, 0.0f);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const int sx = x + dx, sy = y + dy;
      if (sx >= 0 && sx < 32 && sy >= 0 && sy < 32) out.at(x, y) = img.at(sx, sy);
    }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (border_line_prob > 0 && unit(rng) < border_line_prob) {
    // Remnants of the cell's grid lines: one or two edges, partial or whole.
    const int edges = unit(rng) < 0.6 ? 1 : 2;
    for (int e = 0; e < edges; ++e) {
      const int side = static_cast<int>(unit(rng) * 4) % 4;
      const int offset = static_cast<int>(unit(rng) * 3) % 3;
      const int thick = unit(rng) < 0.6 ? 1 : 2;
      const float ink = static_cast<float>(0.4 + 0.6 * unit(rng));
      const int from = unit(rng) < 0.5 ? 0 : static_cast<int>(unit(rng) * 16);
      const int to = unit(rng) < 0.5 ? 32 : 16 + static_cast<int>(unit(rng) * 16);
      for (int t = 0; t < thick; ++t) {
        const int line = side % 2 == 0 ? offset + t : 31 - offset - t;
        for (int k = from; k < to; ++k) {
          float& v = side < 2 ? out.at(k, line) : out.at(line, k);
          v = std::max(v, ink);
        }
      }
    }
  }
  return out;
}

Tensor<float> predict_all(Network<float>& net, const std::vector<GrayImage>& images, int batch_size) {
  Shape shape = net.output_shape();
  shape.insert(shape.begin(), static_cast<int>(images.size()));
  Tensor<float> out(shape);
  const std::size_t stride = out.stride();
  for (std::size_t b = 0; b < images.size(); b += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx(std::min<std::size_t>(static_cast<std::size_t>(batch_size), images.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const Tensor<float> y = net.predict(make_batch(images, idx));
    std::copy(y.values.begin(), y.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(b * stride));
  }
  return out;
}

double accuracy(Network<float>& net, const LabeledDigitSet& set) {
  if (set.size() == 0) return 0.0;
  const Tensor<float> p = predict_all(net, set.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (prediction_from_probs(p.item(static_cast<int>(i)), static_cast<int>(p.stride())).digit == set.labels[i])
      ++correct;
  return static_cast<double>(correct) / set.size();
}

TrainResult train_model(Network<float>& net, const LabeledDigitSet& train, const LabeledDigitSet& val,
                        const TrainConfig& cfg, LossKind loss, const TripletConfig& tc,
                        const MiningObserver& observer) {
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be at least 1");
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  train.check();
  val.check();
  const int batch = loss == LossKind::Triplet ? tc.batch_size : cfg.batch_size;
  TrainResult r;
  OptimizerState opt;
  opt.learning_rate = cfg.lr;
  Network<float> best = net;
  Plateau plateau{cfg};
  std::mt19937_64 order_rng(cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0;
    int steps = 0;
    std::vector<std::size_t> carry;  // a batch that yielded no triplets joins the next one
    std::uint64_t b = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch), ++b) {
      std::vector<std::size_t> idx = std::move(carry);
      carry.clear();
      idx.insert(idx.end(), order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(batch))));
      std::mt19937_64 rng = substream(cfg.seed, static_cast<std::uint64_t>(epoch), b);
      Tensor<float> x({static_cast<int>(idx.size()), 1, 32, 32});
      std::vector<int> y;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const GrayImage a = augment_digit(train.images[idx[k]], cfg.crop_pad, cfg.border_line_prob, rng);
        std::copy(a.pixels().begin(), a.pixels().end(), x.item(static_cast<int>(k)));
        y.push_back(train.labels[idx[k]]);
      }
      const Tensor<float> out = net.forward(x, Mode::Train, rng);
      if (loss == LossKind::CrossEntropy) {
        const LossResult<float> l = softmax_cross_entropy(out, y);
        net.backward(l.grad, true);
        total += l.value;
      } else {
        MinedTriplets mined;
        try {
          mined = mine_triplets(out, y, tc.margin, tc.mining);
        } catch (const NoValidTriplets&) {
          carry = std::move(idx);
          continue;
        }
        if (observer) observer(out, y, mined);
        const LossResult<float> l = triplet_loss(out, mined.triplets, static_cast<float>(tc.margin));
        net.backward(l.grad);
        total += l.value;
      }
      adam_step(opt, net.parameters(true));
      ++steps;
    }

    EpochStats s;
    s.epoch = epoch;
    s.train_loss = steps ? total / steps : 0.0;
    s.lr = opt.learning_rate;
    const Eval e = loss == LossKind::CrossEntropy ? evaluate_ce(net, val.images, val.labels)
                                                  : evaluate_triplet(net, val, batch, tc.margin);
    s.val_loss = e.loss;
    s.val_acc = e.acc;
    r.history.push_back(s);
    if (cfg.verbose) report(s, loss == LossKind::CrossEntropy ? "ce" : "triplet");
    if (cfg.on_epoch) cfg.on_epoch(s, net);
    if (plateau.update(e.loss, epoch, opt, net, best, r)) break;
  }
  net = std::move(best);
  return r;
}

void write_history_csv(const TrainResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc,lr\n";
  out << std::setprecision(9);
  for (const EpochStats& s : r.history)
    out << s.epoch << ',' << s.train_loss << ',' << s.val_loss << ',' << s.val_acc << ',' << s.lr << '\n';
}

Network<float> attach_classifier_head(const Network<float>& embedder_in, const LabeledDigitSet& train,
                                      const LabeledDigitSet& val, const TrainConfig& cfg,
                                      TrainResult* head_history) {
  Network<float> embedder = embedder_in;
  embedder.freeze();
  const Tensor<float> train_emb = predict_all(embedder, train.images);
  const Tensor<float> val_emb = predict_all(embedder, val.images);
  const Shape feat = embedder.output_shape();
  const int d = static_cast<int>(shape_size(feat));

  Network<float> head(feat, {LayerSpec::dense(10), LayerSpec::softmax()}, splitmix(cfg.seed + 1));
  Network<float> best = head;
  OptimizerState opt;
  opt.learning_rate = cfg.lr;
  TrainResult r;
  Plateau plateau{cfg};
  std::mt19937_64 order_rng(splitmix(cfg.seed + 2));
  auto rows = [&](const Tensor<float>& src, const std::vector<std::size_t>& idx) {
    Tensor<float> t({static_cast<int>(idx.size()), d});
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(src.item(static_cast<int>(idx[k])), d, t.item(static_cast<int>(k)));
    return t;
  };
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size))));
      std::vector<int> y;
      for (std::size_t i : idx) y.push_back(train.labels[i]);
      std::mt19937_64 unused(0);
      const Tensor<float> p = head.forward(rows(train_emb, idx), Mode::Train, unused);
      const LossResult<float> l = softmax_cross_entropy(p, y);
      head.backward(l.grad, true);
      adam_step(opt, head.parameters(true));
      total += l.value;
      ++steps;
    }
    std::vector<std::size_t> all(val.size());
    std::iota(all.begin(), all.end(), 0);
    const Tensor<float> p = head.predict(rows(val_emb, all));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i)
      if (prediction_from_probs(p.item(static_cast<int>(i)), 10).digit == val.labels[i]) ++correct;
    EpochStats s;
    s.epoch = epoch;
    s.train_loss = steps ? total / steps : 0.0;
    s.val_loss = val.size() ? softmax_cross_entropy(p, val.labels).value : 0.0;
    s.val_acc = val.size() ? static_cast<double>(correct) / val.size() : 0.0;
    s.lr = opt.learning_rate;
    r.history.push_back(s);
    if (cfg.verbose) report(s, "head");
    if (plateau.update(s.val_loss, epoch, opt, head, best, r)) break;
  }
  if (head_history) *head_history = r;
  return embedder.then(best);
}

DigitPrediction prediction_from_probs(const float* probs, int classes) {
  DigitPrediction p;
  int best = 0;
  for (int c = 1; c < classes; ++c)
    if (probs[c] > probs[best]) best = c;
  p.digit = best;
  p.confidence = std::clamp(static_cast<double>(probs[best]), 0.0, 1.0);
  return p;
}

std::vector<DigitPrediction> predict_digits(Network<float>& classifier, const std::vector<GrayImage>& crops) {
  std::vector<DigitPrediction> out;
  if (crops.empty()) return out;
  const Tensor<float> p = predict_all(classifier, crops);
  for (int i = 0; i < p.batch(); ++i) out.push_back(prediction_from_probs(p.item(i), static_cast<int>(p.stride())));
  return out;
}

std::vector<bool> apply_row_rule(const std::vector<bool>& is_digit) {
  const auto n = std::count(is_digit.begin(), is_digit.end(), true);
  if (n >= 2) return is_digit;
  return std::vector<bool>(is_digit.size(), false);
}

std::vector<bool> classify_blank(Network<float>& blank_net, const std::vector<GrayImage>& row_crops) {
  std::vector<bool> digit;
  for (const DigitPrediction& p : predict_digits(blank_net, row_crops)) digit.push_back(p.digit == 1);
  return apply_row_rule(digit);
}

void save_models(const ModelSet& m, const std::filesystem::path& dir, const nlohmann::json& metadata) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = metadata;
  meta["role"] = "blank";
  save_checkpoint(m.blank, dir / "blank.fsnn", meta);
  meta["role"] = "digits";
  save_checkpoint(m.digits, dir / "digits.fsnn", meta);
}

ModelSet load_models(const std::filesystem::path& dir) {
  return {load_checkpoint(dir / "blank.fsnn"), load_checkpoint(dir / "digits.fsnn")};
}

}  // namespace formdigit
