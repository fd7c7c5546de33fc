#include "metcc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "metcc/error.hpp"
#include "metcc/pca.hpp"
#include "metcc/rng.hpp"

namespace metcc::pipeline {
namespace {

using dataio::format_double;
using dataio::parse_double;

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::kInvalidArgument, "parameter '" + key + "' expects an integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    return parse_double(value);
  } catch (const Error&) {
    throw Error(Errc::kInvalidArgument, "parameter '" + key + "' expects a number, got '" + value + "'");
  }
}

const std::vector<std::string>& recipe_keys(Recipe recipe) {
  static const std::vector<std::string> pca{"pca_k"};
  static const std::vector<std::string> hcp{"pca_k", "k_hidden", "lambda_b", "lambda_mix", "lambda_w",
                                            "hcp_max_iter", "hcp_tol"};
  static const std::vector<std::string> metcc{"pca_k",   "hidden",    "embed_dim",      "dropout",   "lr",
                                              "epochs",  "batch_triplets", "minibatch", "loss",      "margin",
                                              "convention", "optimizer", "seed",        "scale_inputs"};
  switch (recipe) {
    case Recipe::kPca: return pca;
    case Recipe::kHcp: return hcp;
    case Recipe::kMetcc: return metcc;
  }
  return pca;
}

// Runs fn(i) for i in [0, count) on up to `workers` threads; the first failure
// (in index order) is rethrown after all work finishes.
template <typename Fn>
void parallel_for(int count, int workers, Fn fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto guarded = [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  const int threads = std::clamp(workers, 1, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) guarded(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) guarded(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Matrix rows_of(const Matrix& m, const IndexList& rows) { return m(rows, Eigen::all); }

IndexList all_rows(Index n) {
  IndexList out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
  return out;
}

// Position of each requested row within `rows` (which must contain it).
IndexList positions_in(const IndexList& rows, const IndexList& wanted) {
  std::map<Index, Index> where;
  for (std::size_t i = 0; i < rows.size(); ++i) where[rows[i]] = static_cast<Index>(i);
  IndexList out;
  for (Index r : wanted) out.push_back(where.at(r));
  return out;
}

}  // namespace

bool RecipeSpec::set(const std::string& key, const std::string& value) {
  if (key == "pca_k") pca_k = parse_int(key, value);
  else if (key == "k_hidden") hcp.k_hidden = parse_int(key, value);
  else if (key == "lambda_b") hcp.lambda_b = parse_real(key, value);
  else if (key == "lambda_mix") hcp.lambda_mix = parse_real(key, value);
  else if (key == "lambda_w") hcp.lambda_w = parse_real(key, value);
  else if (key == "hcp_max_iter") hcp.max_iter = static_cast<int>(parse_int(key, value));
  else if (key == "hcp_tol") hcp.tol = parse_real(key, value);
  else if (key == "hidden") metcc.hidden = parse_int(key, value);
  else if (key == "embed_dim") metcc.embed_dim = parse_int(key, value);
  else if (key == "dropout") metcc.dropout_p = parse_real(key, value);
  else if (key == "lr") metcc.learning_rate = parse_real(key, value);
  else if (key == "epochs") metcc.epochs = static_cast<int>(parse_int(key, value));
  else if (key == "batch_triplets") metcc.batch_triplets = static_cast<int>(parse_int(key, value));
  else if (key == "minibatch") metcc.minibatch = static_cast<int>(parse_int(key, value));
  else if (key == "margin") metcc.margin = parse_real(key, value);
  else if (key == "seed") metcc.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "scale_inputs") scale_metcc_inputs = value == "1" || value == "true";
  else if (key == "loss") {
    if (value == "triplet") metcc.loss = metric::LossKind::kTriplet;
    else if (value == "siamese") metcc.loss = metric::LossKind::kSiamese;
    else throw Error(Errc::kInvalidArgument, "loss must be triplet or siamese");
  } else if (key == "convention") {
    if (value == "contrastive") metcc.convention = metric::SiameseConvention::kContrastive;
    else if (value == "literal") metcc.convention = metric::SiameseConvention::kLiteral;
    else throw Error(Errc::kInvalidArgument, "convention must be contrastive or literal");
  } else if (key == "optimizer") {
    if (value == "adam") metcc.optimizer = metric::OptimizerKind::kAdam;
    else if (value == "sgd") metcc.optimizer = metric::OptimizerKind::kSgd;
    else throw Error(Errc::kInvalidArgument, "optimizer must be adam or sgd");
  } else {
    throw Error(Errc::kInvalidArgument, "unknown recipe parameter '" + key + "'");
  }
  const auto& keys = recipe_keys(recipe);
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::vector<std::pair<std::string, std::string>> RecipeSpec::parameters() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& key : recipe_keys(recipe)) {
    std::string v;
    if (key == "pca_k") v = std::to_string(pca_k);
    else if (key == "k_hidden") v = std::to_string(hcp.k_hidden);
    else if (key == "lambda_b") v = format_double(hcp.lambda_b);
    else if (key == "lambda_mix") v = format_double(hcp.lambda_mix);
    else if (key == "lambda_w") v = format_double(hcp.lambda_w);
    else if (key == "hcp_max_iter") v = std::to_string(hcp.max_iter);
    else if (key == "hcp_tol") v = format_double(hcp.tol);
    else if (key == "hidden") v = std::to_string(metcc.hidden);
    else if (key == "embed_dim") v = std::to_string(metcc.embed_dim);
    else if (key == "dropout") v = format_double(metcc.dropout_p);
    else if (key == "lr") v = format_double(metcc.learning_rate);
    else if (key == "epochs") v = std::to_string(metcc.epochs);
    else if (key == "batch_triplets") v = std::to_string(metcc.batch_triplets);
    else if (key == "minibatch") v = std::to_string(metcc.minibatch);
    else if (key == "margin") v = format_double(metcc.margin);
    else if (key == "seed") v = std::to_string(metcc.seed);
    else if (key == "scale_inputs") v = scale_metcc_inputs ? "1" : "0";
    else if (key == "loss") v = metcc.loss == metric::LossKind::kTriplet ? "triplet" : "siamese";
    else if (key == "convention") v = metcc.convention == metric::SiameseConvention::kContrastive ? "contrastive" : "literal";
    else if (key == "optimizer") v = metcc.optimizer == metric::OptimizerKind::kAdam ? "adam" : "sgd";
    out.emplace_back(key, v);
  }
  return out;
}

std::string RecipeSpec::describe() const {
  std::string out(to_string(recipe));
  char sep = ':';
  for (const auto& [k, v] : parameters()) {
    out += sep;
    out += k + "=" + v;
    sep = ';';
  }
  return out;
}

std::size_t RecipeSpec::parameter_count(Index p, Index q) const {
  const auto up = static_cast<std::size_t>(p), uk = static_cast<std::size_t>(pca_k);
  std::size_t n = uk * up + up;
  if (recipe == Recipe::kHcp) {
    const auto kh = static_cast<std::size_t>(hcp.k_hidden), uq = static_cast<std::size_t>(q);
    n += (kh + uq) * up + uq * kh;
  } else if (recipe == Recipe::kMetcc) {
    const auto h = static_cast<std::size_t>(metcc.hidden), k = static_cast<std::size_t>(metcc.embed_dim);
    n += h * uk + h + k * h + k;
  }
  return n;
}

RecipeSpec RecipeSpec::from_config(const dataio::KeyValueConfig& cfg, Recipe recipe, std::vector<std::string>* ignored) {
  RecipeSpec spec;
  spec.recipe = recipe;
  for (Recipe r : {Recipe::kPca, Recipe::kHcp, Recipe::kMetcc}) {
    for (const auto& key : recipe_keys(r)) {
      const auto v = cfg.get(key);
      if (!v) continue;
      if (!spec.set(key, *v) && ignored != nullptr &&
          std::find(ignored->begin(), ignored->end(), key) == ignored->end()) {
        ignored->push_back(key);
      }
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------

eval::EmbeddingsByFold run_recipe(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta,
                                  const RecipeSpec& spec, const eval::FoldAssignment& folds,
                                  const RunOptions& options) {
  if (meta.size() != static_cast<std::size_t>(data.rows()) || folds.fold_of.size() != meta.size()) {
    throw Error(Errc::kLengthMismatch, "data, metadata and folds cover different sample counts");
  }
  const std::string stage(to_string(spec.recipe));
  eval::EmbeddingsByFold out(static_cast<std::size_t>(folds.k_folds));

  parallel_for(folds.k_folds, options.workers, [&](int f) {
    auto& fold = out[static_cast<std::size_t>(f)];
    fold.train_rows = folds.train_rows(f);
    fold.test_rows = folds.test_rows(f);
    const IndexList fit_rows = options.global_fit ? all_rows(data.rows()) : fold.train_rows;
    if (options.audit != nullptr) options.audit->record(f, stage, fit_rows);

    const Matrix x_fit = rows_of(data.values, fit_rows);
    const Matrix x_train = rows_of(data.values, fold.train_rows);
    const Matrix x_test = rows_of(data.values, fold.test_rows);

    switch (spec.recipe) {
      case Recipe::kPca: {
        const auto model = pca::fit(x_fit, spec.pca_k);
        fold.train = pca::transform(model, x_train);
        fold.test = pca::transform(model, x_test);
        break;
      }
      case Recipe::kHcp: {
        const auto meta_fit = meta.select_rows(fit_rows);
        const auto encoder = hcp::CovariateEncoder::fit(meta_fit);
        const auto f_fit = encoder.encode(meta_fit);
        const auto model = hcp::fit(x_fit, f_fit, spec.hcp);
        const Matrix normalized_fit = hcp::normalize_in_sample(model, x_fit, f_fit);
        Matrix normalized_train, normalized_test;
        if (options.global_fit) {
          normalized_train = rows_of(normalized_fit, positions_in(fit_rows, fold.train_rows));
          normalized_test = rows_of(normalized_fit, positions_in(fit_rows, fold.test_rows));
        } else {
          normalized_train = normalized_fit;
          normalized_test = hcp::normalize(model, x_test, encoder.encode(meta.select_rows(fold.test_rows)));
        }
        const auto reducer = pca::fit(normalized_fit, spec.pca_k);
        fold.train = pca::transform(reducer, normalized_train);
        fold.test = pca::transform(reducer, normalized_test);
        fold.train.recipe = fold.test.recipe = Recipe::kHcp;
        break;
      }
      case Recipe::kMetcc: {
        const auto reducer = pca::fit(x_fit, spec.pca_k);
        const Matrix scores_fit = pca::transform(reducer, x_fit).values;
        double scale = 1.0;
        if (spec.scale_metcc_inputs) {
          scale = std::sqrt(scores_fit.squaredNorm() / static_cast<double>(scores_fit.size()));
          if (!(scale > 0)) scale = 1.0;
        }
        std::vector<int> labels;
        for (Index r : fit_rows) labels.push_back(meta.label[static_cast<std::size_t>(r)]);
        auto cfg = spec.metcc;
        cfg.seed = derive_seed(options.root_seed, SeedComponent::kMetcc, static_cast<std::uint64_t>(f)) ^ spec.metcc.seed;
        const auto net = metric::train(scores_fit / scale, labels, cfg);
        if (net.params.input_dim() != spec.pca_k) {
          throw Error(Errc::kDimensionMismatch, "metric network input differs from pca_k");
        }
        fold.train = metric::embed(net.params, pca::transform(reducer, x_train).values / scale);
        fold.test = metric::embed(net.params, pca::transform(reducer, x_test).values / scale);
        break;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::pair<std::string, std::string>>> enumerate_candidates(const SearchSpec& spec) {
  if (spec.budget < 1) throw Error(Errc::kInvalidArgument, "search budget must be >= 1");
  for (const auto& [key, values] : spec.values) {
    if (values.empty()) throw Error(Errc::kInvalidArgument, "no candidate values for '" + key + "'");
  }
  std::vector<std::vector<std::pair<std::string, std::string>>> out;
  const auto budget = static_cast<std::size_t>(spec.budget);
  if (spec.strategy == SearchStrategy::kGrid) {
    // Mixed-radix counter; the last parameter varies fastest.
    std::vector<std::size_t> digit(spec.values.size(), 0);
    while (out.size() < budget) {
      std::vector<std::pair<std::string, std::string>> c;
      for (std::size_t i = 0; i < spec.values.size(); ++i) c.emplace_back(spec.values[i].first, spec.values[i].second[digit[i]]);
      out.push_back(std::move(c));
      std::size_t i = spec.values.size();
      while (i > 0) {
        --i;
        if (++digit[i] < spec.values[i].second.size()) break;
        digit[i] = 0;
        if (i == 0) return out;
      }
      if (spec.values.empty()) return out;
    }
  } else {
    Rng rng(derive_seed(spec.seed, SeedComponent::kSearch));
    for (std::size_t t = 0; t < budget; ++t) {
      std::vector<std::pair<std::string, std::string>> c;
      for (const auto& [key, values] : spec.values) c.emplace_back(key, values[rng.below(values.size())]);
      out.push_back(std::move(c));
    }
  }
  return out;
}

int select_best(const std::vector<Trial>& trials) {
  int best = -1;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (!t.ok) continue;
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const auto& b = trials[static_cast<std::size_t>(best)];
    if (t.mean_test_auroc > b.mean_test_auroc ||
        (t.mean_test_auroc == b.mean_test_auroc && t.n_params < b.n_params)) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

SearchResult search(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta, const RecipeSpec& base,
                    const SearchSpec& spec, const eval::FoldAssignment& folds, const RunOptions& options,
                    const eval::EvalOptions& eval_options) {
  const auto candidates = enumerate_candidates(spec);
  const Index q = hcp::CovariateEncoder::fit(meta).width();
  SearchResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Trial trial;
    trial.index = static_cast<int>(i);
    trial.spec = base;
    trial.assignment = candidates[i];
    auto opts = eval_options;
    opts.audit = nullptr;
    try {
      for (const auto& [key, value] : candidates[i]) {
        if (key == "l2") {
          opts.l2_grid = {parse_real(key, value)};
        } else {
          trial.spec.set(key, value);
        }
      }
      trial.n_params = trial.spec.parameter_count(data.cols(), q);
      const auto embeddings = run_recipe(data, meta, trial.spec, folds, options);
      const auto rep = eval::evaluate(embeddings, meta, eval::Target::kDisease, eval::Classifier::kLogreg, opts);
      trial.l2 = rep.l2;
      trial.mean_test_auroc = rep.mean_test;
      trial.sd_test_auroc = rep.sd_test;
      trial.ok = true;
    } catch (const Error& e) {
      trial.error = e.what();
    }
    result.trials.push_back(std::move(trial));
  }
  result.best_index = select_best(result.trials);
  if (result.best_index < 0) throw Error(Errc::kInvalidArgument, "every search trial failed");
  result.best = result.trials[static_cast<std::size_t>(result.best_index)].spec;
  result.best_l2 = result.trials[static_cast<std::size_t>(result.best_index)].l2;
  return result;
}

void write_trials(std::ostream& out, const std::vector<Trial>& trials) {
  out << "trial\trecipe\tparameters\tl2\tn_params\tstatus\tmean_test_auroc\tsd_test_auroc\terror\n";
  for (const auto& t : trials) {
    std::string params;
    for (const auto& [k, v] : t.spec.parameters()) params += (params.empty() ? "" : ";") + k + "=" + v;
    std::string error = t.error;
    std::replace(error.begin(), error.end(), '\t', ' ');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << t.index << '\t' << to_string(t.spec.recipe) << '\t' << params << '\t' << format_double(t.l2) << '\t'
        << t.n_params << '\t' << (t.ok ? "ok" : "failed") << '\t' << format_double(t.mean_test_auroc) << '\t'
        << format_double(t.sd_test_auroc) << '\t' << error << '\n';
  }
}

std::vector<Trial> read_trials(std::istream& in) {
  std::vector<Trial> trials;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = dataio::split(line, '\t');
    if (f.size() != 9) throw Error(Errc::kMalformedFile, "trial row has " + std::to_string(f.size()) + " fields");
    Trial t;
    t.index = static_cast<int>(parse_int("trial", f[0]));
    t.spec.recipe = parse_recipe(f[1]);
    for (const auto& kv : dataio::split(f[2], ';')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      t.spec.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    t.l2 = parse_double(f[3]);
    t.n_params = static_cast<std::size_t>(parse_int("n_params", f[4]));
    t.ok = f[5] == "ok";
    t.mean_test_auroc = parse_double(f[6]);
    t.sd_test_auroc = parse_double(f[7]);
    t.error = f[8];
    trials.push_back(std::move(t));
  }
  return trials;
}

Holdout split_holdout(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(Errc::kInvalidArgument, "hold-out fraction must lie in (0, 1)");
  std::map<int, IndexList> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) strata[labels[i]].push_back(static_cast<Index>(i));
  Rng rng(derive_seed(seed, SeedComponent::kHoldout));
  Holdout h;
  for (auto& [label, members] : strata) {
    rng.shuffle(std::span<Index>(members));
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    h.search_rows.insert(h.search_rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    h.report_rows.insert(h.report_rows.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(h.search_rows.begin(), h.search_rows.end());
  std::sort(h.report_rows.begin(), h.report_rows.end());
  return h;
}

// ---------------------------------------------------------------------------

EvaluationRun run_evaluation(const dataio::FeatureMatrix& data, const dataio::SampleMetadata& meta,
                             const std::vector<RecipeSpec>& recipes, const GridRequest& grid,
                             const eval::FoldAssignment& folds, const RunOptions& options,
                             const eval::EvalOptions& eval_options) {
  EvaluationRun run;
  auto opts = eval_options;
  if (options.audit != nullptr) opts.audit = options.audit;
  for (const auto& spec : recipes) {
    auto embeddings = run_recipe(data, meta, spec, folds, options);
    for (auto classifier : grid.classifiers) {
      for (auto target : grid.targets) {
        run.reports.push_back(eval::evaluate(embeddings, meta, target, classifier, opts));
      }
    }
    run.embeddings.emplace_back(spec.recipe, std::move(embeddings));
  }
  return run;
}

void write_report(std::ostream& out, const std::vector<eval::FoldReport>& reports) {
  out << "recipe\tclassifier\ttarget\tfold\tsplit\tmetric\tvalue\n";
  for (const auto& r : reports) {
    for (std::size_t f = 0; f < r.per_fold_test.size(); ++f) {
      for (int split = 0; split < 2; ++split) {
        const double v = split == 0 ? r.per_fold_train[f] : r.per_fold_test[f];
        out << to_string(r.recipe) << '\t' << eval::to_string(r.classifier) << '\t' << eval::to_string(r.target)
            << '\t' << f << '\t' << (split == 0 ? "train" : "test") << '\t' << r.metric() << '\t'
            << format_double(v) << '\n';
      }
    }
  }
}

std::vector<eval::FoldReport> read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("recipe\tclassifier\ttarget", 0) != 0) {
    throw Error(Errc::kMalformedFile, "report TSV lacks its header");
  }
  std::vector<eval::FoldReport> reports;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = dataio::split(line, '\t');
    if (f.size() != 7) throw Error(Errc::kMalformedFile, "report row has " + std::to_string(f.size()) + " fields");
    const std::string key = f[0] + "/" + f[1] + "/" + f[2];
    auto it = index.find(key);
    if (it == index.end()) {
      eval::FoldReport r;
      r.recipe = parse_recipe(f[0]);
      r.classifier = eval::parse_classifier(f[1]);
      r.target = eval::parse_target(f[2]);
      it = index.emplace(key, reports.size()).first;
      reports.push_back(std::move(r));
    }
    auto& r = reports[it->second];
    const auto fold = static_cast<std::size_t>(parse_int("fold", f[3]));
    auto& dest = f[4] == "train" ? r.per_fold_train : r.per_fold_test;
    if (dest.size() <= fold) dest.resize(fold + 1, 0.0);
    dest[fold] = parse_double(f[6]);
  }
  for (auto& r : reports) r.summarize();
  return reports;
}

void write_aggregate(std::ostream& out, const std::vector<eval::FoldReport>& reports) {
  out << "recipe\tclassifier\ttarget\tmetric\tmean_train\tsd_train\tmean_test\tsd_test\tfolds\n";
  for (const auto& r : reports) {
    out << to_string(r.recipe) << '\t' << eval::to_string(r.classifier) << '\t' << eval::to_string(r.target) << '\t'
        << r.metric() << '\t' << format_double(r.mean_train) << '\t' << format_double(r.sd_train) << '\t'
        << format_double(r.mean_test) << '\t' << format_double(r.sd_test) << '\t' << r.per_fold_test.size() << '\n';
  }
}

std::string format_mean_sd(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", mean, sd);
  return buf;
}

namespace {

std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80 ? 1 : 0;
  return w;
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], display_width(row[c]));
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const std::string pad(width[c] - display_width(cell), ' ');
      if (c == 0) out << cell << pad;
      else out << " | " << pad << cell;
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 3 : 0);
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

std::string recipe_title(Recipe r) {
  switch (r) {
    case Recipe::kPca: return "PCA-only";
    case Recipe::kHcp: return "HCP";
    case Recipe::kMetcc: return "METCC";
  }
  return "?";
}

std::string target_tag(eval::Target t) {
  switch (t) {
    case eval::Target::kInstitution: return "inst";
    case eval::Target::kBatch: return "batch";
    case eval::Target::kAgeBin: return "age";
    case eval::Target::kDisease: return "disease";
  }
  return "?";
}

const eval::FoldReport* find_report(const std::vector<eval::FoldReport>& reports, Recipe recipe,
                                    eval::Classifier classifier, eval::Target target) {
  for (const auto& r : reports)
    if (r.recipe == recipe && r.classifier == classifier && r.target == target) return &r;
  return nullptr;
}

}  // namespace

std::string render_tables(const std::vector<eval::FoldReport>& reports) {
  std::vector<Recipe> recipes;
  for (Recipe r : {Recipe::kPca, Recipe::kHcp, Recipe::kMetcc}) {
    for (const auto& rep : reports) {
      if (rep.recipe == r) {
        recipes.push_back(r);
        break;
      }
    }
  }
  auto cells = [&](Recipe recipe, eval::Target target) {
    std::vector<std::string> row;
    for (auto c : {eval::Classifier::kKnn, eval::Classifier::kLogreg}) {
      const auto* r = find_report(reports, recipe, c, target);
      row.push_back(r ? format_mean_sd(r->mean_train, r->sd_train) : "-");
      row.push_back(r ? format_mean_sd(r->mean_test, r->sd_test) : "-");
    }
    return row;
  };

  std::string out;
  bool any_disease = false;
  std::vector<std::vector<std::string>> disease{
      {"Normalization", "Train AUC (KNN)", "Test AUC (KNN)", "Train AUC (LR)", "Test AUC (LR)"}};
  for (Recipe recipe : recipes) {
    bool present = false;
    for (auto c : {eval::Classifier::kKnn, eval::Classifier::kLogreg})
      present = present || find_report(reports, recipe, c, eval::Target::kDisease) != nullptr;
    if (!present) continue;
    any_disease = true;
    auto row = cells(recipe, eval::Target::kDisease);
    row.insert(row.begin(), recipe_title(recipe));
    disease.push_back(std::move(row));
  }
  if (any_disease) out += "Mean k-fold AUROC of disease classification\n" + render(disease);

  std::vector<std::vector<std::string>> confounders{
      {"Normalization", "Train ACC (KNN)", "Test ACC (KNN)", "Train ACC (LR)", "Test ACC (LR)"}};
  for (auto target : {eval::Target::kInstitution, eval::Target::kBatch, eval::Target::kAgeBin}) {
    for (Recipe recipe : recipes) {
      bool present = false;
      for (auto c : {eval::Classifier::kKnn, eval::Classifier::kLogreg})
        present = present || find_report(reports, recipe, c, target) != nullptr;
      if (!present) continue;
      auto row = cells(recipe, target);
      row.insert(row.begin(), recipe_title(recipe) + " (" + target_tag(target) + ")");
      confounders.push_back(std::move(row));
    }
  }
  if (confounders.size() > 1) {
    if (!out.empty()) out += '\n';
    out += "Mean k-fold accuracy of confounder classification\n" + render(confounders);
  }
  return out;
}

void check_grid(const std::vector<eval::FoldReport>& reports, const GridRequest& grid) {
  std::string missing;
  for (auto recipe : grid.recipes)
    for (auto classifier : grid.classifiers)
      for (auto target : grid.targets)
        if (find_report(reports, recipe, classifier, target) == nullptr) {
          missing += (missing.empty() ? "" : ", ") + std::string(to_string(recipe)) + "/" +
                     std::string(eval::to_string(classifier)) + "/" + std::string(eval::to_string(target));
        }
  if (!missing.empty()) throw Error(Errc::kIncompleteGrid, "missing cells: " + missing);
}

std::string report(const std::vector<eval::FoldReport>& reports, const std::filesystem::path& out_dir,
                   const GridRequest* grid) {
  if (grid != nullptr) check_grid(reports, *grid);
  std::filesystem::create_directories(out_dir);
  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw Error(Errc::kIo, "cannot write '" + (out_dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("report.tsv");
    write_report(f, reports);
  }
  {
    auto f = open("aggregate.tsv");
    write_aggregate(f, reports);
  }
  const std::string tables = render_tables(reports);
  auto f = open("tables.txt");
  f << tables;
  return tables;
}

void export_embeddings(const eval::EmbeddingsByFold& folds, const dataio::SampleMetadata& meta,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (int split = 0; split < 2; ++split) {
      const auto& e = split == 0 ? folds[f].train : folds[f].test;
      const auto& rows = split == 0 ? folds[f].train_rows : folds[f].test_rows;
      dataio::FeatureMatrix m;
      m.values = e.values;
      for (Index r : rows) m.sample_ids.push_back(meta.sample_ids[static_cast<std::size_t>(r)]);
      for (Index j = 0; j < e.cols(); ++j) {
        m.feature_ids.push_back("e" + std::to_string(j + 1));
        m.feature_groups.emplace_back();
      }
      const std::string name = std::string(to_string(e.recipe)) + "_fold" + std::to_string(f) +
                               (split == 0 ? "_train.tsv" : "_test.tsv");
      dataio::save_matrix(dir / name, m);
    }
  }
}

}  // namespace metcc::pipeline
