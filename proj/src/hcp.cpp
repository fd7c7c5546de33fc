#include "metcc/hcp.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "metcc/error.hpp"
#include "metcc/pca.hpp"

namespace metcc::hcp {
namespace {

// Solves G Z = R for symmetric positive semi-definite G = gram + penalty * I.
// A zero penalty on a singular Gram matrix is reported instead of guessed at.
Matrix ridge_solve(const Matrix& gram, double penalty, const Matrix& rhs, const char* block) {
  Matrix g = gram;
  g.diagonal().array() += penalty;
  Eigen::LDLT<Matrix> ldlt(g);
  if (penalty == 0.0) {
    const auto d = ldlt.vectorD().cwiseAbs();
    const double largest = d.size() ? d.maxCoeff() : 0.0;
    if (ldlt.info() != Eigen::Success || d.size() == 0 || d.minCoeff() <= 1e-12 * largest) {
      throw Error(Errc::kSingularUpdate, std::string("singular system in the ") + block +
                                             " update with zero penalty");
    }
  }
  return ldlt.solve(rhs);
}

std::vector<std::string> sorted_levels(const std::vector<std::string>& values) {
  std::vector<std::string> out(values);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

CovariateEncoder CovariateEncoder::fit(const dataio::SampleMetadata& meta) {
  CovariateEncoder enc;
  enc.levels_ = {sorted_levels(meta.institution), sorted_levels(meta.batch), sorted_levels(meta.age_bin)};
  return enc;
}

Index CovariateEncoder::width() const {
  Index w = 1;
  for (const auto& l : levels_) w += static_cast<Index>(l.size());
  return w;
}

KnownCovariates CovariateEncoder::encode(const dataio::SampleMetadata& meta) const {
  KnownCovariates out;
  const auto n = static_cast<Index>(meta.size());
  out.f = Matrix::Zero(n, width());
  out.f.col(0).setOnes();
  out.columns.push_back("intercept");
  const std::vector<std::string>* columns[3] = {&meta.institution, &meta.batch, &meta.age_bin};
  const char* names[3] = {"institution", "batch", "age_bin"};
  Index offset = 1;
  for (int blk = 0; blk < 3; ++blk) {
    const auto& levels = levels_[static_cast<std::size_t>(blk)];
    for (const auto& l : levels) out.columns.push_back(std::string(names[blk]) + "=" + l);
    for (Index i = 0; i < n; ++i) {
      const auto& v = (*columns[blk])[static_cast<std::size_t>(i)];
      const auto it = std::lower_bound(levels.begin(), levels.end(), v);
      if (it != levels.end() && *it == v) out.f(i, offset + (it - levels.begin())) = 1.0;
    }
    offset += static_cast<Index>(levels.size());
  }
  return out;
}

void HcpConfig::validate() const {
  if (k_hidden < 0) throw Error(Errc::kInvalidArgument, "k_hidden must be >= 0");
  if (!(lambda_mix >= 0) || !(lambda_b >= 0) || !(lambda_w >= 0)) {
    throw Error(Errc::kInvalidArgument, "HCP penalties must be >= 0");
  }
  if (max_iter < 1) throw Error(Errc::kInvalidArgument, "max_iter must be >= 1");
  if (!(tol >= 0)) throw Error(Errc::kInvalidArgument, "tol must be >= 0");
}

HcpSolver::HcpSolver(const Matrix& y, const Matrix& f, const HcpConfig& config)
    : y_(y), f_(f), config_(config) {
  config_.validate();
  const Index n = y.rows(), p = y.cols(), q = f.cols(), k = config.k_hidden;
  if (f.rows() != n) throw Error(Errc::kDimensionMismatch, "covariate rows do not match data rows");
  if (k > std::min(n - 1, p)) {
    throw Error(Errc::kRankTooHigh, "k_hidden exceeds min(n-1, p)");
  }
  // F is rank deficient by construction (intercept plus full one-hot blocks), so
  // unpenalized F-side solves take the minimum-norm least-squares solution.
  f_cod_.compute(f);
  if (config_.lambda_b > 0) {
    Matrix g = f.transpose() * f;
    g.diagonal().array() += config_.lambda_b;
    b_ridge_.compute(g);
    fty_ = f.transpose() * y;
  }
  b_ = Matrix::Zero(q, p);
  if (k > 0) {
    const auto init = pca::fit(y, k);
    x_ = pca::transform(init, y).values;
    w_ = init.components;
  } else {
    x_ = Matrix::Zero(n, 0);
    w_ = Matrix::Zero(0, p);
  }
  u_ = Matrix::Zero(q, k);
  update_u();
}

double HcpSolver::objective() const {
  double j = (y_ - x_ * w_ - f_ * b_).squaredNorm();
  if (x_.cols() > 0) j += config_.lambda_mix * (x_ - f_ * u_).squaredNorm() + config_.lambda_w * w_.squaredNorm();
  return j + config_.lambda_b * b_.squaredNorm();
}

void HcpSolver::update_b() {
  if (config_.lambda_b > 0) {
    b_ = b_ridge_.solve(fty_ - (f_.transpose() * x_) * w_);
  } else {
    b_ = f_cod_.solve(y_ - x_ * w_);
  }
}

void HcpSolver::update_w() {
  if (x_.cols() == 0) return;
  const Matrix rhs = x_.transpose() * y_ - (x_.transpose() * f_) * b_;
  w_ = ridge_solve(x_.transpose() * x_, config_.lambda_w, rhs, "W");
}

void HcpSolver::update_x() {
  if (x_.cols() == 0) return;
  // X (W W^T + lambda_mix I) = (Y - F B) W^T + lambda_mix F U
  const Matrix rhs = y_ * w_.transpose() - f_ * (b_ * w_.transpose()) + config_.lambda_mix * (f_ * u_);
  x_ = ridge_solve(w_ * w_.transpose(), config_.lambda_mix, rhs.transpose(), "X").transpose();
}

void HcpSolver::update_u() {
  if (x_.cols() == 0) return;
  u_ = f_cod_.solve(x_);
}

void HcpSolver::sweep() {
  update_b();
  update_w();
  update_x();
  update_u();
}

HcpModel fit(const Matrix& y, const KnownCovariates& f, const HcpConfig& config) {
  HcpSolver solver(y, f.f, config);
  HcpModel model;
  model.config = config;
  double previous = solver.objective();
  model.objective_trace.push_back(previous);
  for (int it = 1; it <= config.max_iter; ++it) {
    solver.sweep();
    const double current = solver.objective();
    model.objective_trace.push_back(current);
    model.iterations = it;
    if (!std::isfinite(current)) throw Error(Errc::kDegenerateData, "HCP objective became non-finite");
    const double decrease = previous - current;
    if (decrease <= config.tol * std::max(previous, std::numeric_limits<double>::min())) {
      model.converged = true;
      break;
    }
    previous = current;
  }
  model.w = solver.w();
  model.b = solver.b();
  model.u = solver.u();
  model.x_hidden = solver.x();
  return model;
}

namespace {

void check_shapes(const HcpModel& model, const Matrix& y, const KnownCovariates& f) {
  if (y.cols() != model.b.cols()) throw Error(Errc::kDimensionMismatch, "feature count differs from the HCP model");
  if (f.width() != model.b.rows()) throw Error(Errc::kDimensionMismatch, "covariate width differs from the HCP model");
  if (f.rows() != y.rows()) throw Error(Errc::kDimensionMismatch, "covariate rows do not match data rows");
}

}  // namespace

Matrix fitted_component(const HcpModel& model, const Matrix& x_hidden, const KnownCovariates& f) {
  return x_hidden * model.w + f.f * model.b;
}

Matrix normalize_in_sample(const HcpModel& model, const Matrix& y, const KnownCovariates& f) {
  check_shapes(model, y, f);
  if (model.x_hidden.rows() != y.rows()) {
    throw Error(Errc::kDimensionMismatch, "in-sample normalization needs the training rows");
  }
  return y - fitted_component(model, model.x_hidden, f);
}

Matrix estimate_hidden(const HcpModel& model, const Matrix& y, const KnownCovariates& f) {
  check_shapes(model, y, f);
  if (model.k_h() == 0) return Matrix::Zero(y.rows(), 0);
  const Matrix rhs = (y - f.f * model.b) * model.w.transpose() + model.config.lambda_mix * (f.f * model.u);
  return ridge_solve(model.w * model.w.transpose(), model.config.lambda_mix, rhs.transpose(), "X")
      .transpose();
}

Matrix normalize(const HcpModel& model, const Matrix& y, const KnownCovariates& f) {
  return y - fitted_component(model, estimate_hidden(model, y, f), f);
}

dataio::SectionedFile to_file(const HcpModel& model) {
  dataio::SectionedFile file;
  file.scalars["format"] = "metcc-hcp-1";
  file.scalars["k_hidden"] = std::to_string(model.config.k_hidden);
  file.scalars["lambda_mix"] = dataio::format_double(model.config.lambda_mix);
  file.scalars["lambda_b"] = dataio::format_double(model.config.lambda_b);
  file.scalars["lambda_w"] = dataio::format_double(model.config.lambda_w);
  file.scalars["max_iter"] = std::to_string(model.config.max_iter);
  file.scalars["tol"] = dataio::format_double(model.config.tol);
  file.scalars["iterations"] = std::to_string(model.iterations);
  file.scalars["converged"] = model.converged ? "1" : "0";
  file.blocks["w"] = model.w;
  file.blocks["b"] = model.b;
  file.blocks["u"] = model.u;
  file.blocks["x_hidden"] = model.x_hidden;
  file.blocks["objective_trace"] =
      Eigen::Map<const Matrix>(model.objective_trace.data(), 1, static_cast<Index>(model.objective_trace.size()));
  return file;
}

HcpModel from_file(const dataio::SectionedFile& file) {
  HcpModel model;
  model.config.k_hidden = std::stoll(file.scalar("k_hidden"));
  model.config.lambda_mix = dataio::parse_double(file.scalar("lambda_mix"));
  model.config.lambda_b = dataio::parse_double(file.scalar("lambda_b"));
  model.config.lambda_w = dataio::parse_double(file.scalar("lambda_w"));
  model.config.max_iter = std::stoi(file.scalar("max_iter"));
  model.config.tol = dataio::parse_double(file.scalar("tol"));
  model.iterations = std::stoi(file.scalar("iterations"));
  model.converged = file.scalar("converged") == "1";
  model.w = file.block("w");
  model.b = file.block("b");
  model.u = file.block("u");
  model.x_hidden = file.block("x_hidden");
  const Matrix& trace = file.block("objective_trace");
  model.objective_trace.assign(trace.data(), trace.data() + trace.size());
  return model;
}

}  // namespace metcc::hcp
