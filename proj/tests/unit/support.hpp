#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/rng.hpp"
#include "metcc/types.hpp"

namespace metcc::test {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

inline dataio::FeatureMatrix feature_matrix(const Matrix& values) {
  dataio::FeatureMatrix m;
  m.values = values;
  for (Index i = 0; i < values.rows(); ++i) m.sample_ids.push_back("s" + std::to_string(i));
  for (Index j = 0; j < values.cols(); ++j) {
    m.feature_ids.push_back("f" + std::to_string(j));
    m.feature_groups.push_back("chr" + std::to_string(j % 3 + 1));
  }
  return m;
}

// Metadata with cycling confounder levels and alternating labels.
inline dataio::SampleMetadata metadata(Index n, int n_inst = 2, int n_batch = 4, int n_age = 3) {
  dataio::SampleMetadata meta;
  for (Index i = 0; i < n; ++i) {
    meta.sample_ids.push_back("s" + std::to_string(i));
    meta.label.push_back(static_cast<int>(i % 2));
    meta.batch.push_back("b" + std::to_string(i % n_batch));
    meta.institution.push_back("i" + std::to_string((i % n_batch) % n_inst));
    meta.age_bin.push_back("a" + std::to_string((i / 2) % n_age));
    meta.age_years.push_back(40.0);
  }
  return meta;
}

inline std::istringstream text(const std::string& s) { return std::istringstream(s); }

}  // namespace metcc::test
