#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/types.hpp"

namespace metcc::hcp {

// Known-covariate design F: intercept plus one-hot blocks for institution, batch
// and age bin.
struct KnownCovariates {
  Matrix f;
  std::vector<std::string> columns;

  Index rows() const { return f.rows(); }
  Index width() const { return f.cols(); }
};

// Remembers the levels seen in training metadata so held-out samples are encoded
// with the same columns. A level never seen in training encodes as an all-zero block.
class CovariateEncoder {
 public:
  static CovariateEncoder fit(const dataio::SampleMetadata& meta);
  KnownCovariates encode(const dataio::SampleMetadata& meta) const;
  Index width() const;

 private:
  std::vector<std::vector<std::string>> levels_;  // institution, batch, age_bin
};

struct HcpConfig {
  Index k_hidden = 2;
  double lambda_mix = 1.0;  // weight of the prior coupling ||X_h - F U||^2
  double lambda_b = 1.0;
  double lambda_w = 1.0;
  int max_iter = 500;
  double tol = 1e-6;

  void validate() const;
};

struct HcpModel {
  Matrix w;         // k_h x p
  Matrix b;         // q x p
  Matrix u;         // q x k_h
  Matrix x_hidden;  // n x k_h, training samples
  HcpConfig config;
  std::vector<double> objective_trace;  // entry 0 is the initial objective
  int iterations = 0;
  bool converged = false;

  Index k_h() const { return w.rows(); }
};

// Block coordinate descent on
//   J = ||Y - X W - F B||^2 + lambda_mix ||X - F U||^2 + lambda_b ||B||^2 + lambda_w ||W||^2.
// Every block update is an exact ridge solve, so J never increases.
class HcpSolver {
 public:
  HcpSolver(const Matrix& y, const Matrix& f, const HcpConfig& config);

  double objective() const;
  void update_b();
  void update_w();
  void update_x();
  void update_u();
  // B, W, X, U in that order.
  void sweep();

  const Matrix& b() const { return b_; }
  const Matrix& w() const { return w_; }
  const Matrix& x() const { return x_; }
  const Matrix& u() const { return u_; }

 private:
  const Matrix& y_;
  const Matrix& f_;
  HcpConfig config_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> f_cod_;
  Eigen::LLT<Matrix> b_ridge_;
  Matrix fty_;
  Matrix w_, b_, x_, u_;
};

HcpModel fit(const Matrix& y, const KnownCovariates& f, const HcpConfig& config);

// Y - X_h W - F B using the hidden covariates estimated during fit.
Matrix normalize_in_sample(const HcpModel& model, const Matrix& y, const KnownCovariates& f);

// Hidden covariates for new samples with W, B and U frozen.
Matrix estimate_hidden(const HcpModel& model, const Matrix& y, const KnownCovariates& f);

// Y - X_h W - F B with X_h re-estimated for the given samples.
Matrix normalize(const HcpModel& model, const Matrix& y, const KnownCovariates& f);

// X_h W + F B, the covariate component removed by normalization.
Matrix fitted_component(const HcpModel& model, const Matrix& x_hidden, const KnownCovariates& f);

dataio::SectionedFile to_file(const HcpModel& model);
HcpModel from_file(const dataio::SectionedFile& file);

}  // namespace metcc::hcp
