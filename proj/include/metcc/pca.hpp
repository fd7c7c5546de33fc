#pragma once

#include <filesystem>
#include <iosfwd>

#include "metcc/types.hpp"

namespace metcc::pca {

struct PcaModel {
  Vector mean;                 // length p, training column means
  Matrix components;           // k x p, orthonormal rows
  Vector explained_variance;   // length k, non-increasing, divisor n - 1

  Index k() const { return components.rows(); }
  Index p() const { return components.cols(); }
};

// Principal axes of the column-centred data by thin SVD. Each component is
// sign-fixed so that its largest-magnitude entry is positive.
PcaModel fit(const Matrix& x, Index k);

// (x - mean) * components^T, tagged as a pca embedding.
Embedding transform(const PcaModel& model, const Matrix& x);

// scores * components + mean.
Matrix inverse_transform(const PcaModel& model, const Matrix& scores);

// Text format: "k<TAB>p" line, mean row, k component rows, variance row.
void write_model(std::ostream& out, const PcaModel& model);
PcaModel read_model(std::istream& in);
void save_model(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_model(const std::filesystem::path& path);

}  // namespace metcc::pca
