#include "metcc/pca.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "metcc/dataio.hpp"
#include "metcc/error.hpp"

namespace metcc::pca {
namespace {

void fix_signs(Matrix& components) {
  for (Index i = 0; i < components.rows(); ++i) {
    Index arg = 0;
    components.row(i).cwiseAbs().maxCoeff(&arg);
    if (components(i, arg) < 0) components.row(i) *= -1.0;
  }
}

Vector read_row(std::istream& in, Index expected) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kMalformedFile, "PCA model file is truncated");
  const auto fields = dataio::split(line, '\t');
  if (static_cast<Index>(fields.size()) != expected) {
    throw Error(Errc::kMalformedFile, "PCA model row has " + std::to_string(fields.size()) +
                                          " fields, expected " + std::to_string(expected));
  }
  Vector v(expected);
  for (Index j = 0; j < expected; ++j) v(j) = dataio::parse_double(fields[static_cast<std::size_t>(j)]);
  return v;
}

void write_row(std::ostream& out, const auto& row) {
  for (Index j = 0; j < row.size(); ++j) {
    if (j) out << '\t';
    out << dataio::format_double(row(j));
  }
  out << '\n';
}

}  // namespace

PcaModel fit(const Matrix& x, Index k) {
  const Index n = x.rows(), p = x.cols();
  if (k < 1) throw Error(Errc::kInvalidArgument, "PCA needs at least one component");
  if (k > std::min(n - 1, p)) {
    throw Error(Errc::kRankTooHigh, "k=" + std::to_string(k) + " exceeds min(n-1, p)=" +
                                        std::to_string(std::min(n - 1, p)));
  }
  if (!x.allFinite()) throw Error(Errc::kNonFiniteValue, "PCA input has non-finite values");

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix centred = x.rowwise() - model.mean.transpose();
  if (centred.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(Errc::kDegenerateData, "centred data is identically zero");
  }

  Eigen::BDCSVD<Matrix> svd(centred, Eigen::ComputeThinV);
  model.components = svd.matrixV().leftCols(k).transpose();
  fix_signs(model.components);
  model.explained_variance =
      svd.singularValues().head(k).array().square() / static_cast<double>(n - 1);
  return model;
}

Embedding transform(const PcaModel& model, const Matrix& x) {
  if (x.cols() != model.p()) {
    throw Error(Errc::kDimensionMismatch, "input has " + std::to_string(x.cols()) +
                                              " columns, model expects " + std::to_string(model.p()));
  }
  Embedding e;
  e.recipe = Recipe::kPca;
  e.values = (x.rowwise() - model.mean.transpose()) * model.components.transpose();
  return e;
}

Matrix inverse_transform(const PcaModel& model, const Matrix& scores) {
  if (scores.cols() != model.k()) {
    throw Error(Errc::kDimensionMismatch, "score width does not match component count");
  }
  return (scores * model.components).rowwise() + model.mean.transpose();
}

void write_model(std::ostream& out, const PcaModel& model) {
  out << model.k() << '\t' << model.p() << '\n';
  write_row(out, model.mean);
  for (Index i = 0; i < model.k(); ++i) write_row(out, model.components.row(i));
  write_row(out, model.explained_variance);
}

PcaModel read_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kMalformedFile, "empty PCA model file");
  const auto header = dataio::split(line, '\t');
  if (header.size() != 2) throw Error(Errc::kMalformedFile, "PCA header must be 'k<TAB>p'");
  const auto k = static_cast<Index>(std::stoll(header[0]));
  const auto p = static_cast<Index>(std::stoll(header[1]));
  if (k < 1 || p < 1) throw Error(Errc::kMalformedFile, "PCA header has invalid shape");
  PcaModel model;
  model.mean = read_row(in, p);
  model.components.resize(k, p);
  for (Index i = 0; i < k; ++i) model.components.row(i) = read_row(in, p).transpose();
  model.explained_variance = read_row(in, k);
  return model;
}

void save_model(const std::filesystem::path& path, const PcaModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, "cannot write '" + path.string() + "'");
  write_model(out, model);
}

PcaModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot read '" + path.string() + "'");
  return read_model(in);
}

}  // namespace metcc::pca
