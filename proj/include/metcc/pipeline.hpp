#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/eval.hpp"
#include "metcc/hcp.hpp"
#include "metcc/metric.hpp"
#include "metcc/types.hpp"

namespace metcc::pipeline {

// One embedding recipe:
//   pca:   PCA(X)
//   hcp:   PCA(HCP(X))
//   metcc: METCC(PCA(X))
struct RecipeSpec {
  Recipe recipe = Recipe::kPca;
  Index pca_k = 20;
  hcp::HcpConfig hcp;
  metric::MetricTrainConfig metcc;
  // Divide PCA scores by their training RMS before metric learning.
  bool scale_metcc_inputs = true;

  // Sets one parameter by name (pca_k, k_hidden, lambda_b, lambda_mix, lambda_w,
  // hcp_max_iter, hcp_tol, hidden, embed_dim, dropout, lr, epochs, batch_triplets,
  // minibatch, loss, margin, convention, optimizer, seed). Returns false for parameters
  // that do not belong to this recipe; throws on unknown names.
  bool set(const std::string& key, const std::string& value);
  // Names of parameters relevant to the recipe, in a fixed order, with their values.
  std::vector<std::pair<std::string, std::string>> parameters() const;
  std::string describe() const;
  // Number of fitted parameters for a dataset with p features and q covariate columns.
  std::size_t parameter_count(Index p, Index q) const;

  // Recipe parameters from a flat config; keys for other recipes are ignored
  // and returned in `ignored`.
  static RecipeSpec from_config(const dataio::KeyValueConfig& cfg, Recipe recipe,
                                std::vector<std::string>* ignored = nullptr);
};

struct RunOptions {
  std::uint64_t root_seed = 0;
  int workers = 1;
  // Fit every transform once on all rows (leaks test rows; comparison only).
  bool global_fit = false;
  eval::LeakageAudit* audit = nullptr;
};

// Per fold: fit the recipe's transforms on training rows and apply them to both splits.
eval::EmbeddingsByFold run_recipe(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta,
                                  const RecipeSpec& spec, const eval::FoldAssignment& folds,
                                  const RunOptions& options = {});

// ---------------------------------------------------------------------------
// Hyperparameter search

enum class SearchStrategy { kGrid, kRandom };

struct SearchSpec {
  // Candidate values per parameter, in enumeration order. "l2" sets the
  // logistic-regression penalty; every other key goes through RecipeSpec::set.
  std::vector<std::pair<std::string, std::vector<std::string>>> values;
  int budget = 1;
  SearchStrategy strategy = SearchStrategy::kGrid;
  std::uint64_t seed = 0;
};

struct Trial {
  int index = 0;
  RecipeSpec spec;
  std::vector<std::pair<std::string, std::string>> assignment;
  double l2 = 0.0;
  std::size_t n_params = 0;
  bool ok = false;
  double mean_test_auroc = 0.0;
  double sd_test_auroc = 0.0;
  std::string error;
};

struct SearchResult {
  int best_index = -1;
  RecipeSpec best;
  double best_l2 = 0.0;
  std::vector<Trial> trials;
};

// Candidate assignments in evaluation order.
std::vector<std::vector<std::pair<std::string, std::string>>> enumerate_candidates(const SearchSpec& spec);

// Highest mean test AUROC; ties go to fewer parameters, then to the earlier trial.
int select_best(const std::vector<Trial>& trials);

SearchResult search(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta, const RecipeSpec& base,
                    const SearchSpec& spec, const eval::FoldAssignment& folds, const RunOptions& options = {},
                    const eval::EvalOptions& eval_options = {});

void write_trials(std::ostream& out, const std::vector<Trial>& trials);
std::vector<Trial> read_trials(std::istream& in);

// Stratified split of the rows into a search hold-out and the remainder.
struct Holdout {
  IndexList search_rows;
  IndexList report_rows;
};

Holdout split_holdout(const std::vector<int>& labels, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Full evaluation and reporting

struct GridRequest {
  std::vector<Recipe> recipes{Recipe::kPca, Recipe::kHcp, Recipe::kMetcc};
  std::vector<eval::Classifier> classifiers{eval::Classifier::kKnn, eval::Classifier::kLogreg};
  std::vector<eval::Target> targets{eval::Target::kDisease, eval::Target::kInstitution, eval::Target::kBatch,
                                    eval::Target::kAgeBin};
};

struct EvaluationRun {
  std::vector<eval::FoldReport> reports;
  std::vector<std::pair<Recipe, eval::EmbeddingsByFold>> embeddings;
};

EvaluationRun run_evaluation(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta,
                             const std::vector<RecipeSpec>& recipes, const GridRequest& grid,
                             const eval::FoldAssignment& folds, const RunOptions& options = {},
                             const eval::EvalOptions& eval_options = {});

// Long TSV: recipe, classifier, target, fold, split, metric, value.
void write_report(std::ostream& out, const std::vector<eval::FoldReport>& reports);
std::vector<eval::FoldReport> read_report(std::istream& in);

// Aggregate TSV: one row per (recipe, classifier, target) with mean/sd per split.
void write_aggregate(std::ostream& out, const std::vector<eval::FoldReport>& reports);

// "0.874 ± 0.023"
std::string format_mean_sd(double mean, double sd);

// Aligned plain-text tables: disease AUROC and confounder accuracy, one row per
// normalization (and confounder), columns train/test per classifier.
std::string render_tables(const std::vector<eval::FoldReport>& reports);

// Throws IncompleteGrid listing every requested cell without a report.
void check_grid(const std::vector<eval::FoldReport>& reports, const GridRequest& grid);

// Writes report.tsv, aggregate.tsv and tables.txt into out_dir. Returns the tables.
std::string report(const std::vector<eval::FoldReport>& reports, const std::filesystem::path& out_dir,
                   const GridRequest* grid = nullptr);

// One TSV per fold and split (sample_id, recipe, fold, split, e1..ek).
void export_embeddings(const eval::EmbeddingsByFold& folds, const dataio::SampleMetadata& meta,
                       const std::filesystem::path& dir);

}  // namespace metcc::pipeline
