#include "support.hpp"

#include <cmath>
#include <unistd.h>

using namespace formdigit;

GrayImage StrokeGlyphs::glyph(int digit, std::mt19937_64& rng) const {
  GrayImage g(28, 28, 0.0f);
  std::uniform_int_distribution<int> wobble(-1, 1);
  const int dx = wobble(rng);
  // Seven-segment layout; bit i of the mask lights segment i.
  static const int masks[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F};
  auto hbar = [&](int y) {
    for (int t = 0; t < 3; ++t)
      for (int x = 9; x <= 19; ++x) g.at(x + dx, y + t) = 1.0f;
  };
  auto vbar = [&](int x, int y0) {
    for (int t = 0; t < 3; ++t)
      for (int y = y0; y <= y0 + 9; ++y) g.at(x + t + dx, y) = 1.0f;
  };
  const int m = masks[digit];
  if (m & 0x01) hbar(4);
  if (m & 0x02) vbar(18, 5);
  if (m & 0x04) vbar(18, 14);
  if (m & 0x08) hbar(22);
  if (m & 0x10) vbar(8, 14);
  if (m & 0x20) vbar(8, 5);
  if (m & 0x40) hbar(13);
  return g;
}

Network<float> ink_blank_classifier() {
  Network<float> net({1, 32, 32}, {LayerSpec::dense(2), LayerSpec::softmax()}, 1);
  std::vector<Tensor<float>*> p = net.parameters();
  Tensor<float>& w = *p[0];  // 2 x 1024, one row per unit
  Tensor<float>& b = *p[1];
  std::fill(w.values.begin(), w.values.end(), 0.0f);
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x) w.values[1024 + static_cast<std::size_t>(y * 32 + x)] = 0.2f;
  b.values = {0.0f, -4.0f};
  return net;
}

Network<float> constant_digit_classifier(int digit, double confidence) {
  Network<float> net({1, 32, 32}, {LayerSpec::dense(10), LayerSpec::softmax()}, 1);
  std::vector<Tensor<float>*> p = net.parameters();
  std::fill(p[0]->values.begin(), p[0]->values.end(), 0.0f);
  // softmax(b)[digit] = confidence with the other nine equal
  const double other = (1 - confidence) / 9;
  for (int k = 0; k < 10; ++k) p[1]->values[k] = static_cast<float>(std::log(k == digit ? confidence : other));
  return net;
}
