#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/rng.hpp"
#include "metcc/types.hpp"

namespace metcc::metric {

// One-hidden-layer embedding map g(x) = w2 relu(w1 x + b1) + b2.
struct TripletNetParams {
  Matrix w1;  // h x d
  Vector b1;  // h
  Matrix w2;  // k x h
  Vector b2;  // k

  Index input_dim() const { return w1.cols(); }
  Index hidden() const { return w1.rows(); }
  Index embed_dim() const { return w2.rows(); }
  bool all_finite() const;

  static TripletNetParams zeros(Index d, Index h, Index k);
  // Weights uniform in +-sqrt(6 / fan_in), biases zero.
  static TripletNetParams initialize(Index d, Index h, Index k, Rng& rng);

  TripletNetParams& operator+=(const TripletNetParams& other);
  TripletNetParams& operator*=(double s);
};

enum class LossKind { kTriplet, kSiamese };

// kContrastive pulls same-class pairs together and pushes other pairs beyond the
// margin. kLiteral swaps the two terms (hinge on same-class pairs).
enum class SiameseConvention { kContrastive, kLiteral };

enum class OptimizerKind { kSgd, kAdam };

struct MetricTrainConfig {
  LossKind loss = LossKind::kTriplet;
  double margin = 1.0;
  SiameseConvention convention = SiameseConvention::kContrastive;
  Index hidden = 32;
  Index embed_dim = 8;
  double dropout_p = 0.1;
  double learning_rate = 1e-2;
  int epochs = 150;
  int batch_triplets = 256;  // triplets (or pairs) drawn per epoch
  int minibatch = 32;        // optimizer step size in triplets
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TripletBatch {
  IndexList anchors, positives, negatives;
  std::size_t size() const { return anchors.size(); }
};

struct PairBatch {
  IndexList first, second;
  std::vector<char> same_class;
  std::size_t size() const { return first.size(); }
};

// Inverted dropout on hidden units: keep[j] is 0 or 1, kept units are scaled by 1/(1-p).
struct DropoutMask {
  Eigen::ArrayXd keep;
  double p = 0.0;
};

Vector forward(const TripletNetParams& params, const Vector& x,
               const std::optional<DropoutMask>& mask = std::nullopt);

double triplet_loss(const TripletNetParams& params, const Vector& anchor, const Vector& positive,
                    const Vector& negative);

double siamese_loss(const TripletNetParams& params, const Vector& x_i, const Vector& x_j, bool same_class,
                    double margin, SiameseConvention convention = SiameseConvention::kContrastive);

struct GradientResult {
  TripletNetParams gradient;
  double loss = 0.0;  // mean batch loss
};

// Exact gradient of the mean batch loss. Inputs are rows of `inputs`. With a
// non-null rng and cfg.dropout_p > 0 every branch forward draws its own mask.
GradientResult loss_gradient(const TripletNetParams& params, const Matrix& inputs, const TripletBatch& batch,
                             const MetricTrainConfig& cfg, Rng* dropout_rng = nullptr);
GradientResult loss_gradient(const TripletNetParams& params, const Matrix& inputs, const PairBatch& batch,
                             const MetricTrainConfig& cfg, Rng* dropout_rng = nullptr);

TripletBatch sample_triplets(const std::vector<int>& labels, std::size_t count, Rng& rng);
PairBatch sample_pairs(const std::vector<int>& labels, std::size_t count, Rng& rng);

struct MetricModel {
  TripletNetParams params;
  MetricTrainConfig config;
  std::vector<double> loss_trace;  // mean training loss per epoch
};

MetricModel train(const Matrix& x_train, const std::vector<int>& labels, const MetricTrainConfig& cfg);

// Row-wise inference-mode forward, tagged as a metcc embedding.
Embedding embed(const TripletNetParams& params, const Matrix& x);

dataio::SectionedFile to_file(const MetricModel& model);
MetricModel from_file(const dataio::SectionedFile& file);
void write_loss_trace(std::ostream& out, const std::vector<double>& trace);

}  // namespace metcc::metric
