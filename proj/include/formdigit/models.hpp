#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "formdigit/datasets.hpp"
#include "formdigit/neuralnet.hpp"

namespace formdigit {

inline constexpr int kBlankDigit = -1;

std::vector<LayerSpec> direct_classifier_specs();
std::vector<LayerSpec> triplet_embedder_specs(int embedding_dim = 128);
std::vector<LayerSpec> blank_classifier_specs();

Network<float> build_direct_classifier(std::uint64_t seed = 42);
Network<float> build_triplet_embedder(std::uint64_t seed = 42, int embedding_dim = 128);
Network<float> build_blank_classifier(std::uint64_t seed = 42);

enum class Mining { SemiHard, HardestInMarginFallback };

struct TripletConfig {
  double margin = 0.1;
  int batch_size = 256;
  int embedding_dim = 128;
  Mining mining = Mining::HardestInMarginFallback;
};

struct MinedTriplets {
  std::vector<Triplet> triplets;
  std::vector<bool> semi_hard;  // false for fallback picks
};

// Squared distances between all rows of an N x D tensor.
std::vector<double> pairwise_sq_distances(const Tensor<float>& embeddings);

// Semi-hard: d(a,p) < d(a,n) < d(a,p) + margin. With the fallback, a pair
// without one takes the closest negative in d(a,p) - margin < d(a,n) <= d(a,p),
// so every emitted triplet has d(a,p) < d(a,n) + margin.
// Throws NoValidTriplets when nothing qualifies.
MinedTriplets mine_triplets(const Tensor<float>& embeddings, const std::vector<int>& labels, double margin,
                            Mining mining = Mining::HardestInMarginFallback);

// Batch-all hinge: mean of max(d(a,p) - d(a,n) + margin, 0) over every valid
// (a,p,n) in the batch. Used as the validation loss for embedders.
double batch_all_triplet_loss(const Tensor<float>& embeddings, const std::vector<int>& labels, double margin);

enum class LossKind { CrossEntropy, Triplet };

struct EpochStats;

struct TrainConfig {
  int epochs = 50;
  int early_stop_patience = 5;
  double lr = 1e-3;
  double lr_decay = 0.5;
  int lr_patience = 3;
  double lr_floor = 1e-5;
  int batch_size = 256;
  std::uint64_t seed = 42;
  int crop_pad = 2;               // random 32x32 window from a padded copy
  double border_line_prob = 0.0;  // stray cell-border strokes on digit inputs
  bool verbose = false;
  // Called after every epoch with the weights as they stand (before the
  // best-validation restore at the end).
  std::function<void(const EpochStats&, Network<float>&)> on_epoch;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, val_acc = 0, lr = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = 0;
  bool stopped_early = false;
};

// Called for every triplet-loss training batch with the embeddings the
// triplets were mined from.
using MiningObserver = std::function<void(const Tensor<float>& embeddings, const std::vector<int>& labels,
                                          const MinedTriplets& mined)>;

// Adam training with early stopping on validation loss; the network is left
// holding the best-validation weights. Inputs are 32x32 ink-high images.
TrainResult train_model(Network<float>& net, const LabeledDigitSet& train, const LabeledDigitSet& val,
                        const TrainConfig& cfg, LossKind loss, const TripletConfig& triplet = {},
                        const MiningObserver& observer = {});

void write_history_csv(const TrainResult& r, const std::filesystem::path& path);

// Freezes the embedder and trains dense(10)+softmax on its eval-mode
// embeddings; returns embedder followed by the head.
Network<float> attach_classifier_head(const Network<float>& embedder, const LabeledDigitSet& train,
                                      const LabeledDigitSet& val, const TrainConfig& cfg,
                                      TrainResult* head_history = nullptr);

// Stacks images into an N x 1 x 32 x 32 tensor (28x28 inputs are padded).
Tensor<float> make_batch(const std::vector<GrayImage>& images, const std::vector<std::size_t>& indices);
Tensor<float> make_batch(const std::vector<GrayImage>& images);

// Random window shift plus optional border strokes, on an ink-high 32x32 image.
GrayImage augment_digit(const GrayImage& img, int pad, double border_line_prob, std::mt19937_64& rng);

// Eval-mode outputs in batches.
Tensor<float> predict_all(Network<float>& net, const std::vector<GrayImage>& images, int batch_size = 500);
double accuracy(Network<float>& net, const LabeledDigitSet& set);

struct DigitPrediction {
  int digit = kBlankDigit;  // 0-9 or kBlankDigit
  double confidence = 0.0;
  std::optional<std::vector<float>> embedding;
};

// Argmax with ties resolved toward the smaller class; confidence is the
// winning probability.
DigitPrediction prediction_from_probs(const float* probs, int classes);
std::vector<DigitPrediction> predict_digits(Network<float>& classifier, const std::vector<GrayImage>& crops);

// A DIGIT cell survives only if another cell in its row is also DIGIT.
std::vector<bool> apply_row_rule(const std::vector<bool>& is_digit);
// Blank network on one row of crops, followed by the row rule.
std::vector<bool> classify_blank(Network<float>& blank_net, const std::vector<GrayImage>& row_crops);

// Blank classifier + digit classifier, saved as two checkpoints in a directory.
struct ModelSet {
  Network<float> blank;
  Network<float> digits;
};

void save_models(const ModelSet& m, const std::filesystem::path& dir, const nlohmann::json& metadata);
ModelSet load_models(const std::filesystem::path& dir);

}  // namespace formdigit
