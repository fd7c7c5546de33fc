#include <doctest.h>

#include <Eigen/SVD>
#include <filesystem>
#include <set>
#include <sstream>

#include "metcc/error.hpp"
#include "metcc/hcp.hpp"
#include "metcc/metric.hpp"
#include "metcc/pca.hpp"
#include "metcc/pipeline.hpp"
#include "metcc/synthgen.hpp"
#include "support.hpp"

using namespace metcc;
using namespace metcc::pipeline;

namespace {

synthgen::SynthData small_cohort(std::uint64_t seed, double disease = 1.5) {
  synthgen::SynthConfig c;
  c.n_samples = 96;
  c.n_features = 60;
  c.n_institutions = 2;
  c.n_batches = 4;
  c.disease_effect_scale = disease;
  c.seed = seed;
  auto d = synthgen::generate(c);
  d.matrix = dataio::preprocess(d.matrix, {});
  return d;
}

RecipeSpec spec_for(Recipe r) {
  RecipeSpec s;
  s.recipe = r;
  s.pca_k = 6;
  s.hcp.max_iter = 20;
  s.metcc.epochs = 3;
  s.metcc.hidden = 8;
  s.metcc.embed_dim = 3;
  return s;
}

std::string report_text(const std::vector<eval::FoldReport>& reports) {
  std::ostringstream out;
  write_report(out, reports);
  return out.str();
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("pca recipe equals per-fold fit and transform") {
    const auto d = small_cohort(1);
    const auto folds = eval::make_folds(d.metadata.label, 4, 2);
    const auto emb = run_recipe(d.matrix, d.metadata, spec_for(Recipe::kPca), folds, {});
    REQUIRE(emb.size() == 4);
    for (int f = 0; f < 4; ++f) {
      const auto train = folds.train_rows(f), test = folds.test_rows(f);
      const auto model = pca::fit(d.matrix.values(train, Eigen::all), 6);
      CHECK(emb[static_cast<std::size_t>(f)].train.values == pca::transform(model, d.matrix.values(train, Eigen::all)).values);
      CHECK(emb[static_cast<std::size_t>(f)].test.values == pca::transform(model, d.matrix.values(test, Eigen::all)).values);
      CHECK(emb[static_cast<std::size_t>(f)].test.recipe == Recipe::kPca);
    }
  }

  TEST_CASE("metcc recipe with zero epochs is the initial network on scaled PCA scores") {
    const auto d = small_cohort(2);
    const auto folds = eval::make_folds(d.metadata.label, 4, 3);
    auto spec = spec_for(Recipe::kMetcc);
    spec.metcc.epochs = 0;
    RunOptions options;
    options.root_seed = 17;
    const auto emb = run_recipe(d.matrix, d.metadata, spec, folds, options);
    for (int f = 0; f < 4; ++f) {
      const auto train = folds.train_rows(f), test = folds.test_rows(f);
      const auto reducer = pca::fit(d.matrix.values(train, Eigen::all), 6);
      const Matrix s_train = pca::transform(reducer, d.matrix.values(train, Eigen::all)).values;
      const double rms = std::sqrt(s_train.squaredNorm() / static_cast<double>(s_train.size()));
      Rng rng(derive_seed(17, SeedComponent::kMetcc, static_cast<std::uint64_t>(f)) ^ spec.metcc.seed);
      const auto net = metric::TripletNetParams::initialize(6, 8, 3, rng);
      const Matrix s_test = pca::transform(reducer, d.matrix.values(test, Eigen::all)).values / rms;
      const auto& fe = emb[static_cast<std::size_t>(f)];
      CHECK((fe.test.values - metric::embed(net, s_test).values).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(fe.train.cols() == 3);
      CHECK(fe.train.recipe == Recipe::kMetcc);
    }
  }

  TEST_CASE("hcp recipe with k_h = 0 and zero penalties is PCA of OLS residuals") {
    const auto d = small_cohort(3);
    const auto folds = eval::make_folds(d.metadata.label, 4, 4);
    auto spec = spec_for(Recipe::kHcp);
    spec.hcp.k_hidden = 0;
    spec.hcp.lambda_b = spec.hcp.lambda_mix = spec.hcp.lambda_w = 0;
    const auto emb = run_recipe(d.matrix, d.metadata, spec, folds, {});
    for (int f = 0; f < 4; ++f) {
      const auto train = folds.train_rows(f), test = folds.test_rows(f);
      const auto meta_train = d.metadata.select_rows(train);
      const auto enc = hcp::CovariateEncoder::fit(meta_train);
      const Matrix f_train = enc.encode(meta_train).f, f_test = enc.encode(d.metadata.select_rows(test)).f;
      const Matrix y_train = d.matrix.values(train, Eigen::all), y_test = d.matrix.values(test, Eigen::all);
      // Independent OLS: pseudo-inverse through a thresholded SVD.
      Eigen::JacobiSVD<Matrix> svd(f_train, Eigen::ComputeThinU | Eigen::ComputeThinV);
      Vector inv = svd.singularValues();
      for (Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > 1e-10 * svd.singularValues()(0) ? 1.0 / inv(i) : 0.0;
      const Matrix b = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y_train;
      const Matrix r_train = y_train - f_train * b, r_test = y_test - f_test * b;
      const auto model = pca::fit(r_train, 6);
      const auto& fe = emb[static_cast<std::size_t>(f)];
      CHECK((fe.train.values - pca::transform(model, r_train).values).cwiseAbs().maxCoeff() < 1e-8);
      CHECK((fe.test.values - pca::transform(model, r_test).values).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(fe.test.recipe == Recipe::kHcp);
    }
  }

  TEST_CASE("leakage audit and worker count do not change results") {
    const auto d = small_cohort(4);
    const auto folds = eval::make_folds(d.metadata.label, 4, 5);
    for (auto r : {Recipe::kPca, Recipe::kHcp, Recipe::kMetcc}) {
      eval::LeakageAudit audit;
      RunOptions one;
      one.audit = &audit;
      RunOptions many;
      many.workers = 3;
      const auto a = run_recipe(d.matrix, d.metadata, spec_for(r), folds, one);
      const auto b = run_recipe(d.matrix, d.metadata, spec_for(r), folds, many);
      for (std::size_t f = 0; f < 4; ++f) {
        CHECK(a[f].train.values == b[f].train.values);
        CHECK(a[f].test.values == b[f].test.values);
      }
      CHECK(audit.entries().size() == 4);
      for (const auto& e : audit.entries()) {
        const auto test = folds.test_rows(e.fold);
        const std::set<Index> test_set(test.begin(), test.end());
        for (Index row : e.rows) CHECK(test_set.count(row) == 0);
      }
    }
  }

  TEST_CASE("global fit mode uses every row") {
    const auto d = small_cohort(5);
    const auto folds = eval::make_folds(d.metadata.label, 4, 6);
    eval::LeakageAudit audit;
    RunOptions options;
    options.global_fit = true;
    options.audit = &audit;
    const auto emb = run_recipe(d.matrix, d.metadata, spec_for(Recipe::kHcp), folds, options);
    CHECK(audit.entries().front().rows.size() == d.metadata.size());
    CHECK(emb[0].test.rows() == static_cast<Index>(folds.test_rows(0).size()));
  }

  TEST_CASE("recipe spec parameters") {
    RecipeSpec spec;
    spec.recipe = Recipe::kHcp;
    CHECK(spec.set("k_hidden", "4"));
    CHECK(spec.hcp.k_hidden == 4);
    CHECK_FALSE(spec.set("epochs", "9"));
    CHECK_THROWS_AS(spec.set("bogus", "1"), Error);
    CHECK_THROWS_AS(spec.set("pca_k", "two"), Error);

    std::istringstream in("pca_k=7\nk_hidden=3\nlr=0.5\nage_bins=0,50\n");
    const auto cfg = dataio::KeyValueConfig::parse(in);
    std::vector<std::string> ignored;
    const auto pca_spec = RecipeSpec::from_config(cfg, Recipe::kPca, &ignored);
    CHECK(pca_spec.pca_k == 7);
    CHECK(ignored == std::vector<std::string>{"k_hidden", "lr"});
    const auto metcc_spec = RecipeSpec::from_config(cfg, Recipe::kMetcc);
    CHECK(metcc_spec.metcc.learning_rate == 0.5);

    // Parameters round-trip through set().
    RecipeSpec copy;
    copy.recipe = Recipe::kMetcc;
    for (const auto& [k, v] : metcc_spec.parameters()) copy.set(k, v);
    CHECK(copy.describe() == metcc_spec.describe());

    RecipeSpec p;
    p.recipe = Recipe::kPca;
    p.pca_k = 5;
    CHECK(p.parameter_count(100, 10) == 5 * 100 + 100);
    p.recipe = Recipe::kMetcc;
    p.metcc.hidden = 4;
    p.metcc.embed_dim = 2;
    CHECK(p.parameter_count(100, 10) == 600 + 4 * 5 + 4 + 2 * 4 + 2);
  }

  TEST_CASE("candidate enumeration") {
    SearchSpec s;
    s.values = {{"a", {"1", "2"}}, {"b", {"x", "y", "z"}}};
    s.budget = 100;
    const auto grid = enumerate_candidates(s);
    REQUIRE(grid.size() == 6);
    CHECK(grid[0] == std::vector<std::pair<std::string, std::string>>{{"a", "1"}, {"b", "x"}});
    CHECK(grid[1][1].second == "y");
    CHECK(grid[3][0].second == "2");
    s.budget = 4;
    CHECK(enumerate_candidates(s).size() == 4);
    s.strategy = SearchStrategy::kRandom;
    s.seed = 3;
    CHECK(enumerate_candidates(s) == enumerate_candidates(s));
    CHECK(enumerate_candidates(s).size() == 4);
    s.budget = 0;
    CHECK_THROWS_AS(enumerate_candidates(s), Error);
    s.budget = 1;
    s.values.clear();
    CHECK(enumerate_candidates(s).size() == 1);
  }

  TEST_CASE("search selection rules") {
    synthgen::SynthConfig c;
    c.n_samples = 120;
    c.n_features = 80;
    c.n_institutions = 2;
    c.n_batches = 4;
    c.institution_effect_scale = 20;
    c.batch_effect_scale = 0;
    c.age_effect_scale = 0;
    c.nonlinear_mix = 0;
    c.disease_effect_scale = 6;
    c.seed = 7;
    auto d = synthgen::generate(c);
    d.matrix = dataio::preprocess(d.matrix, {});
    const auto folds = eval::make_folds(d.metadata.label, 4, 1);
    RecipeSpec base;
    base.recipe = Recipe::kPca;

    SearchSpec one;
    one.values = {{"pca_k", {"3"}}};
    auto r = search(d.matrix, d.metadata, base, one, folds, {}, {});
    CHECK(r.best_index == 0);
    CHECK(r.best.pca_k == 3);

    // The top component carries only the institution effect, so pca_k = 1 is
    // signal-free for the disease; a failing candidate is recorded and skipped.
    SearchSpec spec;
    spec.values = {{"pca_k", {"1", "8", "8", "9999"}}};
    spec.budget = 4;
    r = search(d.matrix, d.metadata, base, spec, folds, {}, {});
    REQUIRE(r.trials.size() == 4);
    CHECK(r.trials[0].mean_test_auroc < 0.7);
    CHECK(r.trials[1].mean_test_auroc > 0.9);
    CHECK(r.best_index == 1);  // duplicate at index 2 ties and loses on order
    CHECK_FALSE(r.trials[3].ok);
    CHECK(r.trials[3].error.find("RankTooHigh") != std::string::npos);

    std::ostringstream out;
    write_trials(out, r.trials);
    std::istringstream in(out.str());
    const auto back = read_trials(in);
    CHECK(select_best(back) == r.best_index);
    CHECK(back[1].n_params == r.trials[1].n_params);
  }

  TEST_CASE("tie-break prefers the smaller model, then order") {
    std::vector<Trial> t(3);
    for (int i = 0; i < 3; ++i) {
      t[static_cast<std::size_t>(i)].index = i;
      t[static_cast<std::size_t>(i)].ok = true;
      t[static_cast<std::size_t>(i)].mean_test_auroc = 0.8;
    }
    t[0].n_params = 50;
    t[1].n_params = 20;
    t[2].n_params = 20;
    CHECK(select_best(t) == 1);
    t[2].mean_test_auroc = 0.81;
    CHECK(select_best(t) == 2);
    t[2].ok = false;
    CHECK(select_best(t) == 1);
  }

  TEST_CASE("hold-out split is stratified and disjoint") {
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i < 30 ? 1 : 0);
    const auto h = split_holdout(labels, 0.2, 4);
    CHECK(h.search_rows.size() == 20);
    CHECK(h.report_rows.size() == 80);
    int pos = 0;
    for (Index r : h.search_rows) pos += labels[static_cast<std::size_t>(r)];
    CHECK(pos == 6);
    std::set<Index> all(h.search_rows.begin(), h.search_rows.end());
    all.insert(h.report_rows.begin(), h.report_rows.end());
    CHECK(all.size() == 100);
    CHECK(split_holdout(labels, 0.2, 4).search_rows == h.search_rows);
    CHECK_THROWS_AS(split_holdout(labels, 1.0, 4), Error);
  }

  TEST_CASE("full grid report") {
    const auto d = small_cohort(6);
    const auto folds = eval::make_folds(d.metadata.label, 4, 7);
    const std::vector<RecipeSpec> specs{spec_for(Recipe::kPca), spec_for(Recipe::kHcp), spec_for(Recipe::kMetcc)};
    GridRequest grid;
    const auto run = run_evaluation(d.matrix, d.metadata, specs, grid, folds, {}, {});
    CHECK(run.reports.size() == 24);
    std::ostringstream agg;
    write_aggregate(agg, run.reports);
    int lines = 0;
    for (char ch : agg.str()) lines += ch == '\n';
    CHECK(lines == 25);
    CHECK_NOTHROW(check_grid(run.reports, grid));

    const auto again = run_evaluation(d.matrix, d.metadata, specs, grid, folds, {}, {});
    CHECK(report_text(run.reports) == report_text(again.reports));

    std::istringstream in(report_text(run.reports));
    const auto back = read_report(in);
    REQUIRE(back.size() == 24);
    CHECK(back[5].per_fold_test == run.reports[5].per_fold_test);
    CHECK(back[5].mean_test == run.reports[5].mean_test);

    auto partial = run.reports;
    partial.erase(partial.begin() + 3);
    try {
      check_grid(partial, grid);
      FAIL("expected IncompleteGrid");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kIncompleteGrid);
      CHECK(std::string(e.what()).find(std::string(to_string(run.reports[3].recipe))) != std::string::npos);
    }

    const auto dir = std::filesystem::temp_directory_path() / "metcc_pipeline_test";
    std::filesystem::remove_all(dir);
    const auto tables = report(run.reports, dir, &grid);
    CHECK(tables.find("Normalization") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "report.tsv"));
    CHECK(std::filesystem::exists(dir / "aggregate.tsv"));
    CHECK(std::filesystem::exists(dir / "tables.txt"));
    export_embeddings(run.embeddings[2].second, d.metadata, dir / "emb");
    const auto e = dataio::load_matrix(dir / "emb" / "metcc_fold0_test.tsv");
    CHECK(e.values == run.embeddings[2].second[0].test.values);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("table rendering") {
    CHECK(format_mean_sd(0.874324, 0.0230618) == "0.874 ± 0.023");
    eval::FoldReport r;
    r.recipe = Recipe::kMetcc;
    r.classifier = eval::Classifier::kKnn;
    r.per_fold_train = {0.9, 0.8};
    r.per_fold_test = {0.7, 0.9};
    r.summarize();
    const auto text = render_tables({r});
    std::istringstream lines(text);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 4);  // caption, header, rule, one row
    CHECK(rows[3].rfind("METCC", 0) == 0);
    CHECK(rows[3].find("0.800 ± 0.100") != std::string::npos);
    CHECK(rows[3].find(" - ") != std::string::npos);
  }
}
