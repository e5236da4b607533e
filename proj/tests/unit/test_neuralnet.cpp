#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "formdigit/errors.hpp"
#include "formdigit/models.hpp"
#include "formdigit/neuralnet.hpp"
#include "support.hpp"

using namespace formdigit;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(s));
  for (T& v : t.values) v = static_cast<T>(u(rng));
  return t;
}

// Sum of squared outputs against a target; gradient 2(y - t).
GradCheckLoss quadratic(const Tensor<double>& target) {
  return {[target](const Tensor<double>& y) {
    LossResult<double> r;
    r.grad = Tensor<double>(y.shape);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = y.values[i] - target.values[i];
      r.value += d * d;
      r.grad.values[i] = 2 * d;
    }
    return r;
  }};
}

}  // namespace

TEST_SUITE("neuralnet") {
  TEST_CASE("softmax output is a simplex point for any logits") {
    Network<double> net({5}, {LayerSpec::softmax()}, 1);
    Tensor<double> x({4, 5}, std::vector<double>{0, 0, 0, 0, 0, 1000, -1000, 3, 2, 1, -50, -51, -52, -53, -54,
                                                 1e-9, 2e-9, 7, 7, 7});
    const Tensor<double> p = net.predict(x);
    for (int n = 0; n < 4; ++n) {
      double sum = 0;
      for (int k = 0; k < 5; ++k) {
        CHECK(p.item(n)[k] >= 0);
        sum += p.item(n)[k];
      }
      CHECK(std::abs(sum - 1) < 1e-6);
    }
  }

  TEST_CASE("dropout is the identity in eval mode") {
    Network<float> net({50}, {LayerSpec::dropout(0.5)}, 1);
    const Tensor<float> x = random_tensor<float>({3, 50}, 4);
    std::mt19937_64 rng(1);
    CHECK(net.forward(x, Mode::Eval, rng).values == x.values);
  }

  TEST_CASE("dropout drops about rate and rescales survivors") {
    const double rate = 0.3;
    Network<float> net({20000}, {LayerSpec::dropout(rate)}, 1);
    std::mt19937_64 rng(8);
    const Tensor<float> y = net.forward(Tensor<float>({1, 20000}, 1.0f), Mode::Train, rng);
    const double zeros = static_cast<double>(std::count(y.values.begin(), y.values.end(), 0.0f));
    const double sigma = std::sqrt(20000 * rate * (1 - rate));
    CHECK(std::abs(zeros - 20000 * rate) < 4 * sigma);
    for (float v : y.values)
      if (v != 0.0f) REQUIRE(v == doctest::Approx(1 / (1 - rate)));
  }

  TEST_CASE("2x2 max pooling") {
    Network<float> net({1, 2, 2}, {LayerSpec::maxpool2()}, 1);
    const Tensor<float> y = net.predict(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}));
    CHECK(y.shape == Shape{1, 1, 1, 1});
    CHECK(y.values[0] == 4.0f);
  }

  TEST_CASE("l2normalize gives unit norm") {
    Network<double> net({7}, {LayerSpec::l2normalize()}, 1);
    const Tensor<double> y = net.predict(random_tensor<double>({6, 7}, 12, -100, 100));
    for (int n = 0; n < 6; ++n) {
      double s = 0;
      for (int k = 0; k < 7; ++k) s += y.item(n)[k] * y.item(n)[k];
      CHECK(std::abs(std::sqrt(s) - 1) < 1e-6);
    }
  }

  TEST_CASE("batchnorm standardises each channel in train mode") {
    Network<float> net({3, 4, 4}, {LayerSpec::batchnorm()}, 1);
    Tensor<float> x = random_tensor<float>({8, 3, 4, 4}, 2, -2, 6);
    std::mt19937_64 rng(1);
    const Tensor<float> y = net.forward(x, Mode::Train, rng);
    for (int c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      for (int n = 0; n < 8; ++n)
        for (int i = 0; i < 16; ++i) {
          const double v = y.item(n)[c * 16 + i];
          s += v;
          ss += v * v;
        }
      const double mean = s / 128, var = ss / 128 - mean * mean;
      CHECK(std::abs(mean) < 1e-4);
      CHECK(std::abs(var - 1) < 1e-3);
    }
  }

  TEST_CASE("relu passes no gradient at negative pre-activations") {
    Network<double> net({4}, {LayerSpec::relu()}, 1);
    std::mt19937_64 rng(1);
    net.forward(Tensor<double>({1, 4}, std::vector<double>{-1, 2, -0.5, 3}), Mode::Train, rng);
    const Tensor<double> dx = net.backward(Tensor<double>({1, 4}, 1.0));
    CHECK(dx.values == std::vector<double>{0, 1, 0, 1});
  }

  TEST_CASE("linear net under a quadratic loss matches the closed form") {
    Network<double> net({4}, {LayerSpec::dense(3)}, 5);
    auto params = net.parameters();
    std::fill(params[1]->values.begin(), params[1]->values.end(), 0.0);
    const std::vector<double>& w = params[0]->values;  // 3 x 4
    const Tensor<double> x({1, 4}, std::vector<double>{0.5, -1, 2, 0.25});
    const std::vector<double> target = {1, 0, -1};
    std::mt19937_64 rng(1);
    const Tensor<double> y = net.forward(x, Mode::Train, rng);
    std::vector<double> r(3);
    for (int i = 0; i < 3; ++i) r[i] = y.values[i] - target[i];
    Tensor<double> up({1, 3});
    for (int i = 0; i < 3; ++i) up.values[i] = 2 * r[i];
    const Tensor<double> dx = net.backward(up);
    for (int j = 0; j < 4; ++j) {
      double expect = 0;  // (2 W^T (Wx - y))_j
      for (int i = 0; i < 3; ++i) expect += 2 * w[i * 4 + j] * r[i];
      CHECK(dx.values[j] == doctest::Approx(expect).epsilon(1e-12));
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) CHECK(params[0]->grad[i * 4 + j] == doctest::Approx(2 * r[i] * x.values[j]).epsilon(1e-12));
  }

  TEST_CASE("zero upstream gradient zeroes every parameter gradient") {
    Network<double> net({1, 8, 8}, {LayerSpec::conv3x3(3), LayerSpec::batchnorm(), LayerSpec::relu(),
                                     LayerSpec::maxpool2(), LayerSpec::dense(5)},
                        2);
    std::mt19937_64 rng(1);
    const Tensor<double> y = net.forward(random_tensor<double>({2, 1, 8, 8}, 3), Mode::Train, rng);
    net.backward(Tensor<double>(y.shape, 0.0));
    for (Tensor<double>* p : net.parameters())
      for (double g : p->grad) REQUIRE(g == 0.0);
  }

  TEST_CASE("backward needs a fresh train-mode forward") {
    Network<float> net({3}, {LayerSpec::dense(2)}, 1);
    CHECK_THROWS_AS(net.backward(Tensor<float>({1, 2})), StaleCache);
    std::mt19937_64 rng(1);
    net.forward(Tensor<float>({1, 3}), Mode::Train, rng);
    net.backward(Tensor<float>({1, 2}));
    CHECK_THROWS_AS(net.backward(Tensor<float>({1, 2})), StaleCache);
    net.predict(Tensor<float>({1, 3}));
    CHECK_THROWS_AS(net.backward(Tensor<float>({1, 2})), StaleCache);
  }

  TEST_CASE("input shape is enforced") {
    Network<float> net({1, 32, 32}, {LayerSpec::conv3x3(2)}, 1);
    CHECK_THROWS_AS(net.predict(Tensor<float>({1, 1, 28, 28})), ShapeMismatch);
    CHECK_THROWS(Network<float>({4}, {LayerSpec::dropout(1.0)}, 1));
  }

  TEST_CASE("adam update rules") {
    SUBCASE("one step with unit gradient moves by lr") {
      Tensor<double> p({1}, 3.0);
      p.grad = {1.0};
      OptimizerState st;
      adam_step<double>(st, {&p});
      // m_hat = 1, v_hat = 1: step = lr * 1 / (1 + 1e-8)
      CHECK(p.values[0] - 3.0 == doctest::Approx(-0.001 / (1 + 1e-8)).epsilon(1e-9));
      CHECK(st.step == 1);
    }
    SUBCASE("zero gradient leaves parameters alone") {
      Tensor<double> p({3}, std::vector<double>{1, -2, 0.5});
      p.grad.assign(3, 0.0);
      OptimizerState st;
      for (int i = 0; i < 5; ++i) adam_step<double>(st, {&p});
      CHECK(p.values == std::vector<double>{1, -2, 0.5});
      CHECK(st.step == 5);
    }
    SUBCASE("constant gradient descends") {
      Tensor<float> p({2}, std::vector<float>{0, 0});
      OptimizerState st;
      for (int i = 0; i < 100; ++i) {
        p.grad = {0.3f, -2.0f};
        adam_step<float>(st, {&p});
      }
      CHECK(p.values[0] < -0.05f);
      CHECK(p.values[1] > 0.05f);
    }
  }

  TEST_CASE("cross-entropy and triplet loss values") {
    const Tensor<double> probs({2, 3}, std::vector<double>{0.2, 0.5, 0.3, 0.1, 0.1, 0.8});
    const LossResult<double> ce = softmax_cross_entropy(probs, {1, 2});
    CHECK(ce.value == doctest::Approx(-(std::log(0.5) + std::log(0.8)) / 2));
    CHECK(ce.grad.values[1] == doctest::Approx((0.5 - 1) / 2));

    const Tensor<double> e({4, 2}, std::vector<double>{0, 0, 0, 1, 1, 0, 2, 0});
    CHECK(triplet_loss(e, {{0, 1, 2}}, 0.1).value == doctest::Approx(0.1));
    CHECK(triplet_loss(e, {{0, 1, 3}}, 0.1).value == 0.0);
    // a == p with a distant negative
    CHECK(triplet_loss(e, {{0, 0, 3}}, 0.1).value == 0.0);
  }

  TEST_CASE("triplet loss is zero exactly when the margin is met") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 300; ++i) {
      Tensor<double> e({3, 3});
      for (double& v : e.values) v = u(rng);
      const double margin = 0.05 + 0.5 * (u(rng) + 1);
      auto d2 = [&](int a, int b) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (e.item(a)[k] - e.item(b)[k]) * (e.item(a)[k] - e.item(b)[k]);
        return s;
      };
      const double loss = triplet_loss(e, {{0, 1, 2}}, margin).value;
      CHECK(loss >= 0);
      CHECK((loss == 0) == (d2(0, 1) + margin <= d2(0, 2)));
    }
  }

  TEST_CASE("gradient check: conv, relu, dense, softmax with cross-entropy") {
    Network<double> net({1, 6, 6}, {LayerSpec::conv3x3(2), LayerSpec::relu(), LayerSpec::dense(4), LayerSpec::softmax()}, 3);
    const std::vector<int> labels = {1, 3, 0};
    const GradCheckResult r = gradient_check(
        net, random_tensor<double>({3, 1, 6, 6}, 5),
        {[&](const Tensor<double>& p) { return softmax_cross_entropy(p, labels); }, true});
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.checked > 100);
  }

  TEST_CASE("gradient check: triplet loss on six embeddings") {
    Network<double> net({5}, {LayerSpec::dense(4), LayerSpec::l2normalize()}, 9);
    const std::vector<Triplet> trips = {{0, 1, 2}, {1, 0, 3}, {4, 5, 0}, {5, 4, 2}};
    const GradCheckResult r = gradient_check(net, random_tensor<double>({6, 5}, 6),
                                             {[&](const Tensor<double>& e) { return triplet_loss(e, trips, 4.0); }});
    CHECK(r.max_relative_error < 1e-4);
  }

  TEST_CASE("gradient check: identity dense layer is exact") {
    Network<double> net({4}, {LayerSpec::dense(4)}, 1);
    auto params = net.parameters();
    for (int i = 0; i < 16; ++i) params[0]->values[i] = i % 5 == 0 ? 1.0 : 0.0;
    std::fill(params[1]->values.begin(), params[1]->values.end(), 0.0);
    const GradCheckResult r =
        gradient_check(net, random_tensor<double>({2, 4}, 7), quadratic(random_tensor<double>({2, 4}, 8)));
    CHECK(r.max_relative_error < 1e-7);
  }

  TEST_CASE("gradient check suite covers every layer kind") {
    std::set<LayerKind> seen;
    for (const auto& specs : {direct_classifier_specs(), triplet_embedder_specs()})
      for (const LayerSpec& s : specs) seen.insert(s.kind);
    CHECK(seen.size() == 8);
    for (const NamedGradCheck& c : gradient_check_suite()) {
      INFO(c.name << " worst at " << c.result.worst);
      CHECK(c.result.max_relative_error < 1e-4);
    }
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    TempDir dir;
    Network<float> net = build_direct_classifier(3);
    // Give batchnorm non-trivial running statistics first.
    std::mt19937_64 rng(1);
    net.forward(random_tensor<float>({4, 1, 32, 32}, 2, 0, 1), Mode::Train, rng);
    save_checkpoint(net, dir / "m.fsnn", {{"note", "unit"}});
    CHECK(std::filesystem::exists(dir / "m.fsnn.json"));
    nlohmann::json meta;
    Network<float> back = load_checkpoint(dir / "m.fsnn", &meta);
    CHECK(meta["note"] == "unit");
    CHECK(back.specs() == net.specs());
    const Tensor<float> x = random_tensor<float>({2, 1, 32, 32}, 9, 0, 1);
    CHECK(back.predict(x).values == net.predict(x).values);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir;
    Network<float> net = build_blank_classifier(1);
    save_checkpoint(net, dir / "m.fsnn", {});
    std::ifstream in(dir / "m.fsnn", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    auto write = [&](const std::vector<char>& b) {
      std::ofstream(dir / "m.fsnn", std::ios::binary | std::ios::trunc).write(b.data(), static_cast<std::streamsize>(b.size()));
    };
    std::vector<char> bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.fsnn"), CheckpointError);
    bad = bytes;
    bad[4] = 9;  // version
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.fsnn"), CheckpointError);
    write(std::vector<char>(bytes.begin(), bytes.end() - 7));
    CHECK_THROWS_AS(load_checkpoint(dir / "m.fsnn"), CheckpointError);
    bad = bytes;
    bad.push_back(0);
    write(bad);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.fsnn"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.fsnn"), CheckpointError);
  }
}
