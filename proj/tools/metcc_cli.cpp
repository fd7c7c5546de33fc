// metcc command-line front end.
#include <CLI11.hpp>

#include <cstdio>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/error.hpp"
#include "metcc/eval.hpp"
#include "metcc/hcp.hpp"
#include "metcc/metric.hpp"
#include "metcc/pca.hpp"
#include "metcc/pipeline.hpp"
#include "metcc/rng.hpp"
#include "metcc/synthgen.hpp"

namespace fs = std::filesystem;
using namespace metcc;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out_dir = ".";

  dataio::KeyValueConfig load() const {
    return config.empty() ? dataio::KeyValueConfig{} : dataio::KeyValueConfig::load(config);
  }
  std::uint64_t root_seed(const dataio::KeyValueConfig& cfg) const { return seed ? *seed : cfg.get_u64("seed", 0); }
};

struct Inputs {
  std::string matrix;
  std::string metadata;
};

void add_inputs(CLI::App* cmd, Inputs& in, bool need_metadata) {
  cmd->add_option("--matrix", in.matrix, "Feature matrix TSV")->required();
  auto* opt = cmd->add_option("--metadata", in.metadata, "Sample metadata TSV");
  if (need_metadata) opt->required();
}

struct Dataset {
  dataio::FeatureMatrix matrix;
  dataio::SampleMetadata metadata;
};

// Loads, aligns and preprocesses; preprocessing an already preprocessed matrix is a no-op.
Dataset load_dataset(const Inputs& in, const dataio::KeyValueConfig& cfg) {
  Dataset d;
  auto m = dataio::load_matrix(in.matrix);
  if (in.metadata.empty()) {
    d.matrix = dataio::preprocess(m, cfg.drop_groups());
    return d;
  }
  auto meta = dataio::load_metadata(in.metadata, cfg.label_set(), cfg.age_binning());
  auto aligned = dataio::align(m, meta);
  if (aligned.dropped > 0) std::cerr << "warning: " << aligned.dropped << " samples lack a matrix row or metadata\n";
  d.matrix = dataio::preprocess(aligned.matrix, cfg.drop_groups());
  d.metadata = std::move(aligned.metadata);
  return d;
}

pipeline::RecipeSpec recipe_spec(const dataio::KeyValueConfig& cfg, Recipe recipe,
                                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::string> ignored;
  auto spec = pipeline::RecipeSpec::from_config(cfg, recipe, &ignored);
  for (const auto& [k, v] : overrides) {
    if (!spec.set(k, v)) ignored.push_back(k);
  }
  for (const auto& k : ignored) {
    std::cerr << "warning: parameter '" << k << "' does not apply to recipe " << to_string(recipe) << " and is ignored\n";
  }
  return spec;
}

void save_embedding(const fs::path& path, const Embedding& e, const std::vector<std::string>& ids) {
  dataio::FeatureMatrix m;
  m.values = e.values;
  m.sample_ids = ids;
  for (Index j = 0; j < e.cols(); ++j) {
    m.feature_ids.push_back("e" + std::to_string(j + 1));
    m.feature_groups.emplace_back();
  }
  dataio::save_matrix(path, m);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& item : dataio::split(s, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::kIo, "cannot write '" + path.string() + "'");
  fn(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confounder-controlled embeddings: PCA, HCP and METCC recipes with a CV harness"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Flat key=value config file");
  app.add_option("--seed", g.seed, "Root seed (overrides config)");
  app.add_option("--workers", g.workers, "Concurrent folds")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset (matrix, metadata, ground truth)");

  // preprocess
  Inputs pre_in;
  auto* pre = app.add_subcommand("preprocess", "Drop feature groups and standardize rows");
  add_inputs(pre, pre_in, false);

  // embed
  Inputs emb_in;
  std::vector<std::pair<std::string, std::string>> overrides;
  auto* emb = app.add_subcommand("embed", "Fit one recipe on all samples and write the embedding");
  emb->require_subcommand(1);
  emb->fallthrough();
  auto add_override = [&](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
  };
  auto* emb_pca = emb->add_subcommand("pca", "PCA-only");
  add_inputs(emb_pca, emb_in, false);
  add_override(emb_pca, "--k", "pca_k", "Number of components");
  auto* emb_hcp = emb->add_subcommand("hcp", "HCP followed by PCA");
  add_inputs(emb_hcp, emb_in, true);
  add_override(emb_hcp, "--pca-k", "pca_k", "Components after normalization");
  add_override(emb_hcp, "--k-hidden", "k_hidden", "Hidden covariates");
  add_override(emb_hcp, "--lambda-b", "lambda_b", "Penalty on B");
  add_override(emb_hcp, "--lambda-mix", "lambda_mix", "Coupling of X to F");
  add_override(emb_hcp, "--lambda-w", "lambda_w", "Penalty on W");
  auto* emb_metcc = emb->add_subcommand("metcc", "PCA followed by the triplet network");
  add_inputs(emb_metcc, emb_in, true);
  for (auto [flag, key] : std::vector<std::pair<std::string, std::string>>{{"--pca-k", "pca_k"},
                                                                          {"--hidden", "hidden"},
                                                                          {"--embed-dim", "embed_dim"},
                                                                          {"--dropout", "dropout"},
                                                                          {"--lr", "lr"},
                                                                          {"--epochs", "epochs"},
                                                                          {"--loss", "loss"},
                                                                          {"--margin", "margin"}}) {
    add_override(emb_metcc, flag, key, key);
  }

  // evaluate
  Inputs ev_in;
  std::string ev_recipes = "pca,hcp,metcc";
  int n_folds = 4;
  int knn_k = 21;
  std::string l2_list = "0.01,1,100";
  double holdout = 0.0;
  auto* ev = app.add_subcommand("evaluate", "Cross-validate recipes for every classifier and target");
  add_inputs(ev, ev_in, true);
  ev->add_option("--recipes", ev_recipes, "Comma-separated recipes");
  ev->add_option("--folds", n_folds, "Number of CV folds")->check(CLI::Range(2, 1000));
  ev->add_option("--knn-k", knn_k, "Neighbours for KNN");
  ev->add_option("--l2", l2_list, "Comma-separated logistic penalties");
  ev->add_option("--holdout", holdout, "Fraction carved off for search and excluded from the report")
      ->check(CLI::Range(0.0, 0.99));

  // search
  Inputs se_in;
  std::string se_recipe = "metcc";
  std::vector<std::string> se_params;
  int budget = 8;
  std::string strategy = "grid";
  double se_holdout = 0.2;
  auto* se = app.add_subcommand("search", "Hyperparameter search scored by disease LR test AUROC");
  add_inputs(se, se_in, true);
  se->add_option("--recipe", se_recipe, "Recipe to tune")->check(CLI::IsMember({"pca", "hcp", "metcc"}));
  se->add_option("--param", se_params, "key=v1,v2,... candidate values (repeatable; key l2 tunes the LR penalty)");
  se->add_option("--budget", budget, "Number of trials")->check(CLI::PositiveNumber);
  se->add_option("--strategy", strategy, "grid or random")->check(CLI::IsMember({"grid", "random"}));
  se->add_option("--folds", n_folds, "Number of CV folds")->check(CLI::Range(2, 1000));
  se->add_option("--holdout", se_holdout, "Fraction of samples used for the search (0 or 1 uses all)");

  // report
  std::vector<std::string> report_files;
  bool full_grid = false;
  auto* rep = app.add_subcommand("report", "Aggregate report TSVs and render tables");
  rep->add_option("--reports", report_files, "report.tsv files")->required();
  rep->add_flag("--full-grid", full_grid, "Require all recipes x classifiers x targets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto cfg = g.load();
    const std::uint64_t seed = g.root_seed(cfg);
    const fs::path out = g.out_dir;
    fs::create_directories(out);

    if (gen->parsed()) {
      auto sc = synthgen::SynthConfig::from_config(cfg);
      if (g.seed) sc.seed = *g.seed;
      const auto data = synthgen::generate(sc);
      synthgen::write_dataset(out, data);
      const auto shares = synthgen::confounding_strength(data.truth);
      std::printf("variance shares: disease %.4f institution %.4f batch %.4f age %.4f nonlinear %.4f noise %.4f\n",
                  shares.disease, shares.institution, shares.batch, shares.age, shares.nonlinear, shares.noise);
    } else if (pre->parsed()) {
      const auto d = load_dataset(pre_in, cfg);
      dataio::save_matrix(out / "matrix.tsv", d.matrix);
      if (!pre_in.metadata.empty()) dataio::save_metadata(out / "metadata.tsv", d.metadata, cfg.label_set());
      std::printf("%ld samples x %ld features\n", static_cast<long>(d.matrix.rows()), static_cast<long>(d.matrix.cols()));
    } else if (emb->parsed()) {
      const Recipe recipe = emb_pca->parsed() ? Recipe::kPca : emb_hcp->parsed() ? Recipe::kHcp : Recipe::kMetcc;
      const auto spec = recipe_spec(cfg, recipe, overrides);
      const auto d = load_dataset(emb_in, cfg);
      const Matrix& x = d.matrix.values;
      Embedding e;
      if (recipe == Recipe::kPca) {
        const auto model = pca::fit(x, spec.pca_k);
        pca::save_model(out / "pca_model.tsv", model);
        e = pca::transform(model, x);
      } else if (recipe == Recipe::kHcp) {
        const auto encoder = hcp::CovariateEncoder::fit(d.metadata);
        const auto f = encoder.encode(d.metadata);
        const auto model = hcp::fit(x, f, spec.hcp);
        hcp::to_file(model).save(out / "hcp_model.txt");
        const Matrix normalized = hcp::normalize_in_sample(model, x, f);
        const auto reducer = pca::fit(normalized, spec.pca_k);
        pca::save_model(out / "pca_model.tsv", reducer);
        e = pca::transform(reducer, normalized);
        e.recipe = Recipe::kHcp;
        std::printf("hcp: %d sweeps, converged=%d, objective %.6g\n", model.iterations, model.converged ? 1 : 0,
                    model.objective_trace.back());
      } else {
        const auto reducer = pca::fit(x, spec.pca_k);
        pca::save_model(out / "pca_model.tsv", reducer);
        Matrix scores = pca::transform(reducer, x).values;
        if (spec.scale_metcc_inputs) {
          const double rms = std::sqrt(scores.squaredNorm() / static_cast<double>(scores.size()));
          if (rms > 0) scores /= rms;
        }
        auto mcfg = spec.metcc;
        mcfg.seed = derive_seed(seed, SeedComponent::kMetcc, 0) ^ spec.metcc.seed;
        const auto net = metric::train(scores, d.metadata.label, mcfg);
        metric::to_file(net).save(out / "metcc_net.txt");
        write_text(out / "loss_trace.tsv", [&](std::ostream& o) { metric::write_loss_trace(o, net.loss_trace); });
        e = metric::embed(net.params, scores);
      }
      save_embedding(out / "embedding.tsv", e, d.matrix.sample_ids);
      std::printf("%s embedding: %ld x %ld\n", spec.describe().c_str(), static_cast<long>(e.rows()),
                  static_cast<long>(e.cols()));
    } else if (ev->parsed()) {
      auto d = load_dataset(ev_in, cfg);
      if (holdout > 0.0) {
        const auto h = pipeline::split_holdout(d.metadata.label, holdout, seed);
        d.matrix = d.matrix.select_rows(h.report_rows);
        d.metadata = d.metadata.select_rows(h.report_rows);
      }
      std::vector<pipeline::RecipeSpec> specs;
      pipeline::GridRequest grid;
      grid.recipes.clear();
      for (const auto& r : split_list(ev_recipes)) {
        specs.push_back(recipe_spec(cfg, parse_recipe(r), {}));
        grid.recipes.push_back(specs.back().recipe);
      }
      eval::EvalOptions eo;
      eo.knn_k = knn_k;
      eo.l2_grid.clear();
      for (const auto& v : split_list(l2_list)) eo.l2_grid.push_back(dataio::parse_double(v));
      pipeline::RunOptions ro;
      ro.root_seed = seed;
      ro.workers = g.workers;
      const auto folds = eval::make_folds(d.metadata.label, n_folds, derive_seed(seed, SeedComponent::kFolds));
      const auto run = pipeline::run_evaluation(d.matrix, d.metadata, specs, grid, folds, ro, eo);
      std::cout << pipeline::report(run.reports, out, &grid);
      for (const auto& [recipe, emb_folds] : run.embeddings) pipeline::export_embeddings(emb_folds, d.metadata, out / "embeddings");
    } else if (se->parsed()) {
      auto d = load_dataset(se_in, cfg);
      if (se_holdout > 0.0 && se_holdout < 1.0) {
        const auto h = pipeline::split_holdout(d.metadata.label, se_holdout, seed);
        d.matrix = d.matrix.select_rows(h.search_rows);
        d.metadata = d.metadata.select_rows(h.search_rows);
      }
      pipeline::SearchSpec ss;
      ss.budget = budget;
      ss.strategy = strategy == "grid" ? pipeline::SearchStrategy::kGrid : pipeline::SearchStrategy::kRandom;
      ss.seed = seed;
      for (const auto& p : se_params) {
        const auto eq = p.find('=');
        if (eq == std::string::npos) throw Error(Errc::kInvalidArgument, "--param expects key=v1,v2: '" + p + "'");
        ss.values.emplace_back(p.substr(0, eq), split_list(p.substr(eq + 1)));
      }
      const auto base = recipe_spec(cfg, parse_recipe(se_recipe), {});
      pipeline::RunOptions ro;
      ro.root_seed = seed;
      ro.workers = g.workers;
      const auto folds = eval::make_folds(d.metadata.label, n_folds, derive_seed(seed, SeedComponent::kFolds));
      const auto result = pipeline::search(d.matrix, d.metadata, base, ss, folds, ro, {});
      write_text(out / "trials.tsv", [&](std::ostream& o) { pipeline::write_trials(o, result.trials); });
      write_text(out / "best.cfg", [&](std::ostream& o) {
        for (const auto& [k, v] : result.best.parameters()) o << k << '=' << v << '\n';
        o << "l2=" << dataio::format_double(result.best_l2) << '\n';
      });
      for (const auto& t : result.trials) {
        if (!t.ok) std::cerr << "warning: trial " << t.index << " failed: " << t.error << '\n';
      }
      std::printf("best trial %d: %s l2=%g mean test AUROC %.4f\n", result.best_index, result.best.describe().c_str(),
                  result.best_l2, result.trials[static_cast<std::size_t>(result.best_index)].mean_test_auroc);
    } else if (rep->parsed()) {
      std::vector<eval::FoldReport> reports;
      for (const auto& file : report_files) {
        std::ifstream f(file, std::ios::binary);
        if (!f) throw Error(Errc::kIo, "cannot read '" + file + "'");
        auto part = pipeline::read_report(f);
        reports.insert(reports.end(), part.begin(), part.end());
      }
      pipeline::GridRequest grid;
      std::cout << pipeline::report(reports, out, full_grid ? &grid : nullptr);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
