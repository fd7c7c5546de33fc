#include "metcc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "metcc/error.hpp"
#include "metcc/rng.hpp"

namespace metcc::eval {

std::string_view to_string(Target t) {
  switch (t) {
    case Target::kDisease: return "disease";
    case Target::kInstitution: return "institution";
    case Target::kBatch: return "batch";
    case Target::kAgeBin: return "age_bin";
  }
  return "unknown";
}

std::string_view to_string(Classifier c) { return c == Classifier::kKnn ? "knn" : "logreg"; }

Target parse_target(std::string_view name) {
  if (name == "disease") return Target::kDisease;
  if (name == "institution") return Target::kInstitution;
  if (name == "batch") return Target::kBatch;
  if (name == "age_bin" || name == "age") return Target::kAgeBin;
  throw Error(Errc::kInvalidArgument, "unknown target '" + std::string(name) + "'");
}

Classifier parse_classifier(std::string_view name) {
  if (name == "knn") return Classifier::kKnn;
  if (name == "logreg" || name == "lr") return Classifier::kLogreg;
  throw Error(Errc::kInvalidArgument, "unknown classifier '" + std::string(name) + "'");
}

IndexList FoldAssignment::train_rows(int fold) const {
  IndexList out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] != fold) out.push_back(static_cast<Index>(i));
  return out;
}

IndexList FoldAssignment::test_rows(int fold) const {
  IndexList out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(static_cast<Index>(i));
  return out;
}

FoldAssignment make_folds(const std::vector<int>& labels, int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw Error(Errc::kInvalidArgument, "need at least 2 folds");
  std::map<int, IndexList> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) strata[labels[i]].push_back(static_cast<Index>(i));

  FoldAssignment folds;
  folds.k_folds = k_folds;
  folds.seed = seed;
  folds.fold_of.assign(labels.size(), -1);
  Rng rng(seed);
  // The fold counter carries across strata so overall fold sizes stay balanced too.
  std::size_t counter = 0;
  for (auto& [label, members] : strata) {
    if (static_cast<int>(members.size()) < k_folds) {
      throw Error(Errc::kClassTooSmall, "class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                            " members, fewer than " + std::to_string(k_folds) + " folds");
    }
    rng.shuffle(std::span<Index>(members));
    for (Index m : members) folds.fold_of[static_cast<std::size_t>(m)] = static_cast<int>(counter++ % k_folds);
  }
  return folds;
}

CategoricalTarget encode_target(const dataio::SampleMetadata& meta, Target target) {
  CategoricalTarget out;
  if (target == Target::kDisease) {
    out.levels = {"negative", "positive"};
    out.codes = meta.label;
    return out;
  }
  const auto& column = target == Target::kInstitution ? meta.institution
                       : target == Target::kBatch     ? meta.batch
                                                      : meta.age_bin;
  out.levels = column;
  std::sort(out.levels.begin(), out.levels.end());
  out.levels.erase(std::unique(out.levels.begin(), out.levels.end()), out.levels.end());
  for (const auto& v : column) {
    out.codes.push_back(static_cast<int>(std::lower_bound(out.levels.begin(), out.levels.end(), v) - out.levels.begin()));
  }
  return out;
}

Matrix knn_predict(const Matrix& train, const std::vector<int>& train_labels, int n_classes,
                   const Matrix& test, int k) {
  const Index n_train = train.rows();
  if (n_train == 0) throw Error(Errc::kEmptyTrainSet, "KNN has no training rows");
  if (static_cast<std::size_t>(n_train) != train_labels.size()) {
    throw Error(Errc::kLengthMismatch, "KNN label count differs from training rows");
  }
  if (k < 1 || k > n_train) throw Error(Errc::kInvalidArgument, "KNN needs 1 <= k <= n_train");
  if (test.cols() != train.cols()) throw Error(Errc::kDimensionMismatch, "KNN train/test widths differ");

  Matrix scores = Matrix::Zero(test.rows(), n_classes);
  std::vector<std::pair<double, Index>> order(static_cast<std::size_t>(n_train));
  for (Index t = 0; t < test.rows(); ++t) {
    for (Index i = 0; i < n_train; ++i) {
      order[static_cast<std::size_t>(i)] = {(train.row(i) - test.row(t)).squaredNorm(), i};
    }
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    for (int j = 0; j < k; ++j) {
      scores(t, train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(j)].second)]) += 1.0;
    }
  }
  return scores / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Matrix with_intercept(const Matrix& x) {
  Matrix xa(x.rows(), x.cols() + 1);
  xa << x, Vector::Ones(x.rows());
  return xa;
}

// Parameters are stored as a (d+1) x m matrix: column c holds the weights of
// output c with the intercept in the last row. m = 1 for the binary model.
struct LogregProblem {
  const Matrix& xa;
  const std::vector<int>& labels;
  int n_classes;
  double l2;

  Index d() const { return xa.cols() - 1; }
  Index outputs() const { return n_classes == 2 ? 1 : n_classes; }

  double penalty(const Matrix& theta) const { return 0.5 * l2 * theta.topRows(d()).squaredNorm(); }

  double loss(const Matrix& theta) const {
    const Matrix z = xa * theta;
    const double n = static_cast<double>(xa.rows());
    double total = 0.0;
    if (n_classes == 2) {
      for (Index i = 0; i < z.rows(); ++i) total += labels[static_cast<std::size_t>(i)] == 1 ? log1pexp(-z(i, 0)) : log1pexp(z(i, 0));
    } else {
      for (Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
        total += lse - z(i, labels[static_cast<std::size_t>(i)]);
      }
    }
    return total / n + penalty(theta);
  }

  // Residual P - Y (n x m).
  Matrix residual(const Matrix& theta) const {
    const Matrix z = xa * theta;
    Matrix r(z.rows(), z.cols());
    if (n_classes == 2) {
      for (Index i = 0; i < z.rows(); ++i) r(i, 0) = 1.0 / (1.0 + std::exp(-z(i, 0))) - labels[static_cast<std::size_t>(i)];
    } else {
      for (Index i = 0; i < z.rows(); ++i) {
        const double mx = z.row(i).maxCoeff();
        r.row(i) = (z.row(i).array() - mx).exp();
        r.row(i) /= r.row(i).sum();
        r(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
      }
    }
    return r;
  }

  Matrix gradient(const Matrix& theta, const Matrix& resid) const {
    Matrix g = xa.transpose() * resid / static_cast<double>(xa.rows());
    g.topRows(d()) += l2 * theta.topRows(d());
    return g;
  }

  // Hessian in column-major vec(theta) order.
  Matrix hessian(const Matrix& resid) const {
    const Index n = xa.rows(), da = xa.cols(), m = outputs();
    Matrix prob = resid;
    for (Index i = 0; i < n; ++i) {
      if (n_classes == 2) prob(i, 0) += labels[static_cast<std::size_t>(i)];
      else prob(i, labels[static_cast<std::size_t>(i)]) += 1.0;
    }
    Matrix h = Matrix::Zero(da * m, da * m);
    for (Index c = 0; c < m; ++c) {
      for (Index c2 = c; c2 < m; ++c2) {
        Vector s(n);
        for (Index i = 0; i < n; ++i) {
          s(i) = n_classes == 2 ? prob(i, 0) * (1.0 - prob(i, 0))
                                : (c == c2 ? prob(i, c) : 0.0) - prob(i, c) * prob(i, c2);
        }
        const Matrix block = xa.transpose() * s.asDiagonal() * xa / static_cast<double>(n);
        h.block(c * da, c2 * da, da, da) = block;
        if (c2 != c) h.block(c2 * da, c * da, da, da) = block.transpose();
      }
      for (Index j = 0; j < d(); ++j) h(c * da + j, c * da + j) += l2;
    }
    return h;
  }
};

}  // namespace

Matrix LogregModel::predict_proba(const Matrix& x) const {
  const Matrix z = (x * weights).rowwise() + intercept.transpose();
  Matrix p(x.rows(), n_classes);
  if (n_classes == 2) {
    for (Index i = 0; i < x.rows(); ++i) {
      p(i, 1) = 1.0 / (1.0 + std::exp(-z(i, 0)));
      p(i, 0) = 1.0 - p(i, 1);
    }
  } else {
    for (Index i = 0; i < x.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      p.row(i) = (z.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
  }
  return p;
}

LogregModel logreg_fit(const Matrix& x, const std::vector<int>& labels, int n_classes, double l2, int max_iter,
                       double tol) {
  if (n_classes < 2) throw Error(Errc::kSingleClass, "logistic regression needs at least 2 classes");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw Error(Errc::kLengthMismatch, "label count differs from rows");
  }
  if (!(l2 >= 0)) throw Error(Errc::kInvalidArgument, "l2 must be >= 0");
  for (int l : labels)
    if (l < 0 || l >= n_classes) throw Error(Errc::kInvalidArgument, "label out of range");

  const Matrix xa = with_intercept(x);
  const LogregProblem problem{xa, labels, n_classes, l2};
  Matrix theta = Matrix::Zero(xa.cols(), problem.outputs());
  LogregModel model;
  model.n_classes = n_classes;

  double f = problem.loss(theta);
  model.loss_trace.push_back(f);
  for (int it = 0; it < max_iter; ++it) {
    const Matrix resid = problem.residual(theta);
    const Matrix g = problem.gradient(theta, resid);
    model.gradient_norm = g.norm();
    if (model.gradient_norm < tol) {
      model.converged = true;
      break;
    }
    Matrix h = problem.hessian(resid);
    // Damping keeps the softmax Hessian (singular along the shared-intercept
    // direction) and near-separable cases solvable.
    h.diagonal().array() += 1e-10 * std::max(1.0, h.diagonal().maxCoeff());
    const Eigen::Map<const Vector> gv(g.data(), g.size());
    const Vector step = -Eigen::LDLT<Matrix>(h).solve(gv);
    const double slope = gv.dot(step);
    const Eigen::Map<const Matrix> step_m(step.data(), theta.rows(), theta.cols());

    double t = 1.0;
    double f_new = f;
    Matrix candidate;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
      candidate = theta + t * step_m;
      f_new = problem.loss(candidate);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    model.iterations = it + 1;
    if (!accepted || !(slope < 0)) break;
    theta = std::move(candidate);
    f = f_new;
    model.loss_trace.push_back(f);
  }
  if (!model.converged) {
    model.gradient_norm = problem.gradient(theta, problem.residual(theta)).norm();
    model.converged = model.gradient_norm < tol;
  }
  model.weights = theta.topRows(problem.d());
  model.intercept = theta.row(problem.d()).transpose();
  return model;
}

double logreg_objective(const LogregModel& model, const Matrix& x, const std::vector<int>& labels, double l2) {
  const Matrix xa = with_intercept(x);
  const LogregProblem problem{xa, labels, model.n_classes, l2};
  Matrix theta(xa.cols(), model.weights.cols());
  theta << model.weights, model.intercept.transpose();
  return problem.loss(theta);
}

// ---------------------------------------------------------------------------
// Metrics

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(Errc::kLengthMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        positive_rank_sum += midrank;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw Error(Errc::kSingleClass, "AUROC needs both classes");
  const double u = positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw Error(Errc::kLengthMismatch, "prediction and label counts differ");
  if (labels.empty()) throw Error(Errc::kLengthMismatch, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

std::pair<double, double> mean_sd(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

void FoldReport::summarize() {
  std::tie(mean_train, sd_train) = mean_sd(per_fold_train);
  std::tie(mean_test, sd_test) = mean_sd(per_fold_test);
}

void LeakageAudit::record(int fold, std::string stage, const IndexList& rows) {
  std::lock_guard lock(mutex_);
  entries_.push_back({fold, std::move(stage), rows});
}

std::vector<LeakageAudit::Entry> LeakageAudit::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

// ---------------------------------------------------------------------------
// Cross-validated evaluation

namespace {

struct SplitScores {
  double train = 0.0;
  double test = 0.0;
};

SplitScores score_fold(const FoldEmbedding& fold, const std::vector<int>& codes, Target target,
                       Classifier classifier, int knn_k, double l2) {
  // Classes are compacted to those present in the training split; a class only
  // seen at test time can never be predicted.
  std::vector<int> present;
  for (Index r : fold.train_rows) present.push_back(codes[static_cast<std::size_t>(r)]);
  std::vector<int> classes = present;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  auto compact = [&](int code) {
    return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), code) - classes.begin());
  };
  std::vector<int> train_labels;
  for (int c : present) train_labels.push_back(compact(c));
  const int n_classes = static_cast<int>(classes.size());

  Matrix train_scores, test_scores;
  if (classifier == Classifier::kKnn) {
    const int k = std::min<int>(knn_k, static_cast<int>(fold.train.rows()));
    train_scores = knn_predict(fold.train.values, train_labels, n_classes, fold.train.values, k);
    test_scores = knn_predict(fold.train.values, train_labels, n_classes, fold.test.values, k);
  } else {
    if (n_classes < 2) throw Error(Errc::kSingleClass, "training fold holds a single class");
    const auto model = logreg_fit(fold.train.values, train_labels, n_classes, l2);
    train_scores = model.predict_proba(fold.train.values);
    test_scores = model.predict_proba(fold.test.values);
  }

  auto metric = [&](const Matrix& scores, const IndexList& rows) {
    std::vector<int> truth;
    for (Index r : rows) truth.push_back(codes[static_cast<std::size_t>(r)]);
    if (target == Target::kDisease) {
      if (n_classes != 2) throw Error(Errc::kSingleClass, "training fold holds a single disease class");
      std::vector<double> s(scores.col(1).data(), scores.col(1).data() + scores.rows());
      return auroc(s, truth);
    }
    std::vector<int> predicted;
    for (int c : argmax_rows(scores)) predicted.push_back(classes[static_cast<std::size_t>(c)]);
    return accuracy(predicted, truth);
  };
  return {metric(train_scores, fold.train_rows), metric(test_scores, fold.test_rows)};
}

}  // namespace

FoldReport evaluate(const EmbeddingsByFold& folds, const dataio::SampleMetadata& meta, Target target,
                    Classifier classifier, const EvalOptions& options) {
  if (folds.empty()) throw Error(Errc::kInvalidArgument, "no folds to evaluate");
  const auto codes = encode_target(meta, target).codes;
  for (const auto& f : folds) {
    if (static_cast<std::size_t>(f.train.rows()) != f.train_rows.size() ||
        static_cast<std::size_t>(f.test.rows()) != f.test_rows.size()) {
      throw Error(Errc::kDimensionMismatch, "fold embedding rows do not match fold indices");
    }
    if (f.train_rows.empty()) throw Error(Errc::kEmptyTrainSet, "fold has no training rows");
  }

  const std::vector<double> knn_only{0.0};
  const auto& grid = classifier == Classifier::kKnn ? knn_only : options.l2_grid;
  if (grid.empty()) throw Error(Errc::kInvalidArgument, "empty l2 grid");

  FoldReport best;
  bool have_best = false;
  for (double l2 : grid) {
    FoldReport report;
    report.target = target;
    report.classifier = classifier;
    report.recipe = folds.front().train.recipe;
    report.l2 = classifier == Classifier::kLogreg ? l2 : 0.0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (options.audit != nullptr) {
        options.audit->record(static_cast<int>(f), std::string(to_string(classifier)), folds[f].train_rows);
      }
      const auto s = score_fold(folds[f], codes, target, classifier, options.knn_k, l2);
      report.per_fold_train.push_back(s.train);
      report.per_fold_test.push_back(s.test);
    }
    report.summarize();
    if (!have_best || report.mean_test > best.mean_test) {
      best = std::move(report);
      have_best = true;
    }
  }
  return best;
}

int select_knn_k(const EmbeddingsByFold& folds, const dataio::SampleMetadata& meta, Target target,
                 const std::vector<int>& candidates) {
  if (candidates.empty()) throw Error(Errc::kInvalidArgument, "no k candidates");
  int best_k = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  for (int k : candidates) {
    EvalOptions options;
    options.knn_k = k;
    const auto r = evaluate(folds, meta, target, Classifier::kKnn, options);
    const double gap = std::abs(r.mean_train - r.mean_test);
    if (gap < best_gap) {
      best_gap = gap;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace metcc::eval
