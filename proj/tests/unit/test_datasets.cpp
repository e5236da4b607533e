#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "formdigit/datasets.hpp"
#include "formdigit/errors.hpp"
#include "support.hpp"

using namespace formdigit;

namespace {

LabeledDigitSet tiny_set(int n) {
  LabeledDigitSet s;
  for (int i = 0; i < n; ++i) {
    GrayImage img(28, 28, 0.0f);
    img.at(i % 28, (i * 5) % 28) = static_cast<float>(i % 256) / 255.0f;
    s.images.push_back(img);
    s.labels.push_back(i % 10);
  }
  return s;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("hand-built IDX files parse") {
    TempDir dir;
    // Two 2x3 images written byte by byte: big-endian header then pixels.
    std::vector<unsigned char> images = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3};
    for (int i = 0; i < 12; ++i) images.push_back(static_cast<unsigned char>(i * 20));
    write_bytes(dir / "img", images);
    write_bytes(dir / "lab", {0, 0, 8, 1, 0, 0, 0, 2, 7, 3});
    const LabeledDigitSet s = read_idx(dir / "img", dir / "lab");
    REQUIRE(s.size() == 2);
    CHECK(s.images[0].width() == 3);
    CHECK(s.images[0].height() == 2);
    CHECK(s.images[1].at(2, 1) == doctest::Approx(220.0 / 255.0));
    CHECK(s.labels == std::vector<int>{7, 3});
    // EMNIST stores columns first.
    const LabeledDigitSet t = read_idx(dir / "img", dir / "lab", true);
    CHECK(t.images[0].width() == 2);
    CHECK(t.images[1].at(1, 2) == s.images[1].at(2, 1));
  }

  TEST_CASE("write then read round trip") {
    TempDir dir;
    const LabeledDigitSet s = tiny_set(2);
    write_idx(s, dir / "i", dir / "l");
    const LabeledDigitSet back = read_idx(dir / "i", dir / "l");
    CHECK(back.images == s.images);
    CHECK(back.labels == s.labels);
  }

  TEST_CASE("format errors") {
    TempDir dir;
    write_idx(tiny_set(3), dir / "i", dir / "l");
    CHECK_THROWS_AS(read_idx(dir / "i", dir / "i"), BadMagic);
    write_idx(tiny_set(4), dir / "i4", dir / "l4");
    CHECK_THROWS_AS(read_idx(dir / "i", dir / "l4"), CountMismatch);
    std::filesystem::resize_file(dir / "i4", 16 + 28 * 28 * 2);
    CHECK_THROWS_AS(read_idx(dir / "i4", dir / "l4"), TruncatedFile);
  }

  TEST_CASE("split counts, determinism and exhaustiveness") {
    LabeledDigitSet s = tiny_set(100);
    const Split a = split(s, 0.6, 0.2, 0.2, 42);
    CHECK(a.train.size() == 60);
    CHECK(a.val.size() == 20);
    CHECK(a.test.size() == 20);
    const Split b = split(s, 0.6, 0.2, 0.2, 42);
    CHECK(a.train.images == b.train.images);
    CHECK(a.test.labels == b.test.labels);
    std::vector<std::size_t> idx = shuffled_indices(100, 42);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(idx[i] == i);
    std::multiset<int> all(s.labels.begin(), s.labels.end()), joined;
    for (const LabeledDigitSet* p : {&a.train, &a.val, &a.test}) joined.insert(p->labels.begin(), p->labels.end());
    CHECK(all == joined);
    CHECK_THROWS(split(s, 0.6, 0.3, 0.2, 42));
  }

  TEST_CASE("split keeps class proportions") {
    LabeledDigitSet s;
    std::mt19937_64 rng(9);
    std::discrete_distribution<int> skew({5, 1, 1, 1, 1, 1, 1, 1, 1, 3});
    for (int i = 0; i < 12000; ++i) {
      s.images.emplace_back(1, 1, 0.0f);
      s.labels.push_back(skew(rng));
    }
    const Split sp = split(s, 0.6, 0.2, 0.2, 7);
    auto share = [](const LabeledDigitSet& d, int c) {
      return static_cast<double>(std::count(d.labels.begin(), d.labels.end(), c)) / static_cast<double>(d.size());
    };
    for (int c = 0; c < 10; ++c)
      for (const LabeledDigitSet* p : {&sp.train, &sp.val, &sp.test}) CHECK(std::abs(share(*p, c) - share(s, c)) < 0.03);
  }

  TEST_CASE("padding to network size") {
    LabeledDigitSet s = tiny_set(3);
    const LabeledDigitSet n = to_network_inputs(s);
    CHECK(n.images[1].width() == 32);
    CHECK(n.images[1].at(0, 0) == 0.0f);
    CHECK(n.images[1].at(3, 7) == s.images[1].at(1, 5));
  }

  TEST_CASE("synthetic blank crops are balanced, ink-high and 32x32") {
    const FormTemplate t = make_default_template("f", BorderStyle::DarkJoined, 4);
    StrokeGlyphs glyphs;
    const LabeledDigitSet s = synthesize_blank_crops(t, RenderSpec{}, glyphs, 200, 3);
    CHECK(s.size() == 200);
    CHECK(std::count(s.labels.begin(), s.labels.end(), 1) == 100);
    double ink_blank = 0, ink_digit = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(s.images[i].width() == 32);
      double c = 0;
      for (int y = 10; y < 22; ++y)
        for (int x = 10; x < 22; ++x) c += s.images[i].at(x, y);
      (s.labels[i] ? ink_digit : ink_blank) += c;
    }
    CHECK(ink_digit > 5 * ink_blank);
  }

  TEST_CASE("MNIST layout when the dataset is present" * doctest::skip(!std::filesystem::exists(FORMDIGIT_MNIST_DIR))) {
    const DatasetFiles f = mnist_files(FORMDIGIT_MNIST_DIR);
    const LabeledDigitSet test = read_idx(f.test_images, f.test_labels);
    CHECK(test.size() == 10000);
    CHECK(test.images[0].width() == 28);
    CHECK(test.labels[0] == 7);
  }
}
