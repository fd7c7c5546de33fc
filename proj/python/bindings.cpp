#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/error.hpp"
#include "metcc/eval.hpp"
#include "metcc/hcp.hpp"
#include "metcc/metric.hpp"
#include "metcc/pca.hpp"
#include "metcc/pipeline.hpp"
#include "metcc/synthgen.hpp"

namespace py = pybind11;
using namespace metcc;

namespace {

using Config = std::map<std::string, std::string>;

dataio::KeyValueConfig to_kv(const Config& config) {
  dataio::KeyValueConfig kv;
  for (const auto& [k, v] : config) kv.set(k, v);
  return kv;
}

pipeline::RecipeSpec recipe_spec(const std::string& name, const Config& config) {
  return pipeline::RecipeSpec::from_config(to_kv(config), parse_recipe(name));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Confounder-controlled embeddings: PCA, HCP and METCC recipes with a CV harness";

  static py::exception<Error> error_type(m, "MetccError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("exit_code") = exit_code(e.code());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<dataio::FeatureMatrix>(m, "FeatureMatrix")
      .def(py::init<>())
      .def_readwrite("values", &dataio::FeatureMatrix::values)
      .def_readwrite("sample_ids", &dataio::FeatureMatrix::sample_ids)
      .def_readwrite("feature_ids", &dataio::FeatureMatrix::feature_ids)
      .def_readwrite("feature_groups", &dataio::FeatureMatrix::feature_groups)
      .def("validate", &dataio::FeatureMatrix::validate);

  py::class_<dataio::SampleMetadata>(m, "SampleMetadata")
      .def(py::init<>())
      .def_readwrite("sample_ids", &dataio::SampleMetadata::sample_ids)
      .def_readwrite("label", &dataio::SampleMetadata::label)
      .def_readwrite("institution", &dataio::SampleMetadata::institution)
      .def_readwrite("batch", &dataio::SampleMetadata::batch)
      .def_readwrite("age_bin", &dataio::SampleMetadata::age_bin)
      .def_readwrite("age_years", &dataio::SampleMetadata::age_years)
      .def("__len__", &dataio::SampleMetadata::size)
      .def("validate", &dataio::SampleMetadata::validate);

  m.def("load_matrix", [](const std::string& path) { return dataio::load_matrix(path); }, py::arg("path"));
  m.def("save_matrix", [](const std::string& path, const dataio::FeatureMatrix& x) { dataio::save_matrix(path, x); },
        py::arg("path"), py::arg("matrix"));
  m.def("load_metadata", [](const std::string& path) { return dataio::load_metadata(path); }, py::arg("path"));
  m.def("save_metadata",
        [](const std::string& path, const dataio::SampleMetadata& meta) { dataio::save_metadata(path, meta); },
        py::arg("path"), py::arg("metadata"));
  m.def(
      "align",
      [](const dataio::FeatureMatrix& x, const dataio::SampleMetadata& meta) {
        auto a = dataio::align(x, meta);
        return py::make_tuple(a.matrix, a.metadata);
      },
      py::arg("matrix"), py::arg("metadata"), "Restrict both inputs to shared samples in a common order.");
  m.def("preprocess", &dataio::preprocess, py::arg("matrix"), py::arg("drop_groups") = std::set<std::string>{},
        "Drop feature groups and standardize each sample row.");

  m.def(
      "generate",
      [](const Config& config) {
        const auto d = synthgen::generate(synthgen::SynthConfig::from_config(to_kv(config)));
        const auto s = synthgen::confounding_strength(d.truth);
        py::dict shares;
        shares["disease"] = s.disease;
        shares["institution"] = s.institution;
        shares["batch"] = s.batch;
        shares["age"] = s.age;
        shares["nonlinear"] = s.nonlinear;
        shares["noise"] = s.noise;
        return py::make_tuple(d.matrix, d.metadata, shares);
      },
      py::arg("config") = Config{}, "Synthetic cohort: (matrix, metadata, variance shares).");

  py::class_<pca::PcaModel>(m, "PcaModel")
      .def_readonly("mean", &pca::PcaModel::mean)
      .def_readonly("components", &pca::PcaModel::components)
      .def_readonly("explained_variance", &pca::PcaModel::explained_variance);
  m.def("pca_fit", &pca::fit, py::arg("x"), py::arg("k"));
  m.def("pca_transform", [](const pca::PcaModel& model, const Matrix& x) { return pca::transform(model, x).values; },
        py::arg("model"), py::arg("x"));

  py::class_<hcp::HcpModel>(m, "HcpModel")
      .def_readonly("w", &hcp::HcpModel::w)
      .def_readonly("b", &hcp::HcpModel::b)
      .def_readonly("u", &hcp::HcpModel::u)
      .def_readonly("x_hidden", &hcp::HcpModel::x_hidden)
      .def_readonly("objective_trace", &hcp::HcpModel::objective_trace)
      .def_readonly("iterations", &hcp::HcpModel::iterations)
      .def_readonly("converged", &hcp::HcpModel::converged);
  m.def(
      "encode_covariates",
      [](const dataio::SampleMetadata& meta) { return hcp::CovariateEncoder::fit(meta).encode(meta).f; },
      py::arg("metadata"), "Known-covariate design matrix F (one-hot institution, batch, age bin).");
  m.def(
      "hcp_fit",
      [](const Matrix& y, const Matrix& f, const Config& config) {
        return hcp::fit(y, hcp::KnownCovariates{f, {}}, recipe_spec("hcp", config).hcp);
      },
      py::arg("y"), py::arg("f"), py::arg("config") = Config{});
  m.def(
      "hcp_normalize",
      [](const hcp::HcpModel& model, const Matrix& y, const Matrix& f) {
        return hcp::normalize(model, y, hcp::KnownCovariates{f, {}});
      },
      py::arg("model"), py::arg("y"), py::arg("f"));

  py::class_<metric::MetricModel>(m, "MetricModel")
      .def_property_readonly("w1", [](const metric::MetricModel& x) { return x.params.w1; })
      .def_property_readonly("b1", [](const metric::MetricModel& x) { return x.params.b1; })
      .def_property_readonly("w2", [](const metric::MetricModel& x) { return x.params.w2; })
      .def_property_readonly("b2", [](const metric::MetricModel& x) { return x.params.b2; })
      .def_readonly("loss_trace", &metric::MetricModel::loss_trace);
  m.def(
      "metcc_train",
      [](const Matrix& x, const std::vector<int>& labels, const Config& config) {
        return metric::train(x, labels, recipe_spec("metcc", config).metcc);
      },
      py::arg("x"), py::arg("labels"), py::arg("config") = Config{});
  m.def(
      "metcc_embed", [](const metric::MetricModel& model, const Matrix& x) { return metric::embed(model.params, x).values; },
      py::arg("model"), py::arg("x"));

  m.def(
      "auroc",
      [](const std::vector<double>& scores, const std::vector<int>& labels) { return eval::auroc(scores, labels); },
      py::arg("scores"), py::arg("labels"), "Mann-Whitney AUROC with half credit for ties.");
  m.def("knn_predict", &eval::knn_predict, py::arg("train"), py::arg("train_labels"), py::arg("n_classes"),
        py::arg("test"), py::arg("k"));
  m.def(
      "make_folds",
      [](const std::vector<int>& labels, int k, std::uint64_t seed) { return eval::make_folds(labels, k, seed).fold_of; },
      py::arg("labels"), py::arg("k") = 4, py::arg("seed") = 0);
  m.def("derive_seed", [](std::uint64_t root, std::uint64_t component, std::uint64_t index) {
    return derive_seed(root, component, index);
  }, py::arg("root"), py::arg("component"), py::arg("index") = 0);

  py::class_<eval::FoldReport>(m, "FoldReport")
      .def_property_readonly("recipe", [](const eval::FoldReport& r) { return std::string(to_string(r.recipe)); })
      .def_property_readonly("classifier",
                             [](const eval::FoldReport& r) { return std::string(eval::to_string(r.classifier)); })
      .def_property_readonly("target", [](const eval::FoldReport& r) { return std::string(eval::to_string(r.target)); })
      .def_property_readonly("metric", [](const eval::FoldReport& r) { return std::string(r.metric()); })
      .def_readonly("per_fold_train", &eval::FoldReport::per_fold_train)
      .def_readonly("per_fold_test", &eval::FoldReport::per_fold_test)
      .def_readonly("mean_train", &eval::FoldReport::mean_train)
      .def_readonly("sd_train", &eval::FoldReport::sd_train)
      .def_readonly("mean_test", &eval::FoldReport::mean_test)
      .def_readonly("sd_test", &eval::FoldReport::sd_test)
      .def_readonly("l2", &eval::FoldReport::l2);

  m.def(
      "evaluate",
      [](const dataio::FeatureMatrix& x, const dataio::SampleMetadata& meta, const std::vector<std::string>& recipes,
         const Config& config, int folds, std::uint64_t seed, int knn_k, const std::vector<double>& l2, int workers) {
        std::vector<pipeline::RecipeSpec> specs;
        pipeline::GridRequest grid;
        grid.recipes.clear();
        for (const auto& r : recipes) {
          specs.push_back(recipe_spec(r, config));
          grid.recipes.push_back(parse_recipe(r));
        }
        const auto assignment = eval::make_folds(meta.label, folds, derive_seed(seed, SeedComponent::kFolds));
        pipeline::RunOptions ro;
        ro.root_seed = seed;
        ro.workers = workers;
        eval::EvalOptions eo;
        eo.knn_k = knn_k;
        eo.l2_grid = l2;
        py::gil_scoped_release release;
        return pipeline::run_evaluation(x, meta, specs, grid, assignment, ro, eo).reports;
      },
      py::arg("matrix"), py::arg("metadata"), py::arg("recipes") = std::vector<std::string>{"pca", "hcp", "metcc"},
      py::arg("config") = Config{}, py::arg("folds") = 4, py::arg("seed") = 0, py::arg("knn_k") = 21,
      py::arg("l2") = std::vector<double>{1e-2}, py::arg("workers") = 1,
      "Cross-validate every recipe x classifier x target; returns FoldReports.");
  m.def("render_tables", &pipeline::render_tables, py::arg("reports"));
  m.def("format_mean_sd", &pipeline::format_mean_sd, py::arg("mean"), py::arg("sd"));
  m.def(
      "write_reports",
      [](const std::vector<eval::FoldReport>& reports, const std::string& out_dir) {
        return pipeline::report(reports, out_dir);
      },
      py::arg("reports"), py::arg("out_dir"), "Write report.tsv, aggregate.tsv and tables.txt; returns the tables.");
}
