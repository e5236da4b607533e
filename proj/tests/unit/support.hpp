#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "formdigit/form_template.hpp"
#include "formdigit/imaging.hpp"
#include "formdigit/neuralnet.hpp"

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("formdigit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Blocky synthetic "handwriting": each digit is a fixed pattern of strokes,
// enough to exercise rendering and blank detection without a dataset.
class StrokeGlyphs : public formdigit::GlyphSource {
 public:
  formdigit::GrayImage glyph(int digit, std::mt19937_64& rng) const override;
};

// Two-layer stand-ins for trained models, with hand-set weights.
// blank: P(digit) rises with ink in the central 16x16 window.
formdigit::Network<float> ink_blank_classifier();
// digits: always predicts `digit` with probability `confidence`.
formdigit::Network<float> constant_digit_classifier(int digit, double confidence);
