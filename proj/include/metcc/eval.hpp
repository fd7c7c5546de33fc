#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/types.hpp"

namespace metcc::eval {

enum class Target { kDisease, kInstitution, kBatch, kAgeBin };
enum class Classifier { kKnn, kLogreg };

std::string_view to_string(Target t);
std::string_view to_string(Classifier c);
Target parse_target(std::string_view name);
Classifier parse_classifier(std::string_view name);

struct FoldAssignment {
  std::vector<int> fold_of;
  int k_folds = 4;
  std::uint64_t seed = 0;

  IndexList train_rows(int fold) const;
  IndexList test_rows(int fold) const;
};

// Seeded stratified k-fold split: within every class, fold sizes differ by at most one.
FoldAssignment make_folds(const std::vector<int>& labels, int k_folds, std::uint64_t seed);

// Integer codes for a target column; codes index the sorted distinct values.
struct CategoricalTarget {
  std::vector<int> codes;
  std::vector<std::string> levels;
};

CategoricalTarget encode_target(const dataio::SampleMetadata& meta, Target target);

// Per-class neighbour vote fractions (n_test x n_classes) among the k nearest
// training rows. Distance ties go to the lower training index.
Matrix knn_predict(const Matrix& train, const std::vector<int>& train_labels, int n_classes,
                   const Matrix& test, int k);

struct LogregModel {
  // Binary: one weight column for the positive class. Multiclass: one per class.
  Matrix weights;
  Vector intercept;
  int n_classes = 2;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> loss_trace;

  // n x n_classes class probabilities.
  Matrix predict_proba(const Matrix& x) const;
};

// Minimizes mean cross-entropy + (l2 / 2) ||w||^2 (intercept unpenalized) by
// damped Newton iterations with backtracking, starting from zero.
LogregModel logreg_fit(const Matrix& x, const std::vector<int>& labels, int n_classes, double l2,
                       int max_iter = 1000, double tol = 1e-8);

double logreg_objective(const LogregModel& model, const Matrix& x, const std::vector<int>& labels, double l2);

// Mann-Whitney AUROC with midranks for tied scores. labels are 0/1.
double auroc(std::span<const double> scores, std::span<const int> labels);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

// Row-wise argmax; ties go to the lowest column.
std::vector<int> argmax_rows(const Matrix& scores);

// Population mean and standard deviation.
std::pair<double, double> mean_sd(const std::vector<double>& values);

struct FoldReport {
  Target target = Target::kDisease;
  Classifier classifier = Classifier::kKnn;
  Recipe recipe = Recipe::kPca;
  std::vector<double> per_fold_train;
  std::vector<double> per_fold_test;
  double mean_train = 0.0, sd_train = 0.0, mean_test = 0.0, sd_test = 0.0;
  double l2 = 0.0;  // selected penalty (logreg only)

  std::string_view metric() const { return target == Target::kDisease ? "auroc" : "accuracy"; }
  void summarize();
};

struct FoldEmbedding {
  IndexList train_rows;
  IndexList test_rows;
  Embedding train;
  Embedding test;
};

using EmbeddingsByFold = std::vector<FoldEmbedding>;

// Records which sample rows each fitting stage consumed, per fold.
class LeakageAudit {
 public:
  struct Entry {
    int fold;
    std::string stage;
    IndexList rows;
  };

  void record(int fold, std::string stage, const IndexList& rows);
  std::vector<Entry> entries() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Entry> entries_;
};

struct EvalOptions {
  int knn_k = 21;
  // Candidate logistic penalties; the one with the best mean test metric is reported.
  std::vector<double> l2_grid{1e-2};
  LeakageAudit* audit = nullptr;
};

FoldReport evaluate(const EmbeddingsByFold& folds, const dataio::SampleMetadata& meta, Target target,
                    Classifier classifier, const EvalOptions& options = {});

// Optional k sweep: the candidate minimizing |mean train - mean test| KNN metric,
// first candidate on ties. Not used by evaluate itself.
int select_knn_k(const EmbeddingsByFold& folds, const dataio::SampleMetadata& meta, Target target,
                 const std::vector<int>& candidates);

}  // namespace metcc::eval
