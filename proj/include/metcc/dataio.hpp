#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "metcc/types.hpp"

namespace metcc::dataio {

// Dense n x p feature matrix with sample and feature annotations.
struct FeatureMatrix {
  Matrix values;
  std::vector<std::string> sample_ids;
  std::vector<std::string> feature_ids;
  // Categorical tag per feature, e.g. the chromosome a gene sits on. Empty when unknown.
  std::vector<std::string> feature_groups;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }

  // Throws on shape mismatch, duplicate ids or non-finite cells.
  void validate() const;

  FeatureMatrix select_rows(const IndexList& rows) const;
};

// Age bin edges in years. Bin i covers [edges[i], edges[i+1]); the last bin is open.
struct AgeBinning {
  std::vector<double> edges{0, 50, 55, 60, 75, 80, 85};

  static AgeBinning parse(std::string_view csv);

  std::size_t index_of(double age_years) const;
  std::string label_of(double age_years) const;
  std::vector<std::string> labels() const;
  std::size_t size() const { return edges.size(); }
};

struct LabelSet {
  std::string negative = "healthy";
  std::string positive = "crc";
};

struct SampleMetadata {
  std::vector<std::string> sample_ids;
  std::vector<int> label;  // 1 = positive class
  std::vector<std::string> institution;
  std::vector<std::string> batch;
  std::vector<std::string> age_bin;
  std::vector<double> age_years;

  std::size_t size() const { return sample_ids.size(); }
  void validate() const;
  SampleMetadata select_rows(const IndexList& rows) const;
};

enum class MatrixFormat { kTsv };

FeatureMatrix read_matrix(std::istream& in);
void write_matrix(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix load_matrix(const std::filesystem::path& path, MatrixFormat format = MatrixFormat::kTsv);
void save_matrix(const std::filesystem::path& path, const FeatureMatrix& m);

SampleMetadata read_metadata(std::istream& in, const LabelSet& labels = {},
                             const AgeBinning& bins = {});
void write_metadata(std::ostream& out, const SampleMetadata& meta, const LabelSet& labels = {});
SampleMetadata load_metadata(const std::filesystem::path& path, const LabelSet& labels = {},
                             const AgeBinning& bins = {});
void save_metadata(const std::filesystem::path& path, const SampleMetadata& meta,
                   const LabelSet& labels = {});

// Drops features whose group is listed, then standardizes every sample (row) to
// mean 0 and population standard deviation 1.
FeatureMatrix preprocess(const FeatureMatrix& m, const std::set<std::string>& drop_groups);

struct Aligned {
  FeatureMatrix matrix;
  SampleMetadata metadata;
  std::size_t dropped = 0;  // samples present in only one of the inputs
};

// Restricts both inputs to their common sample ids, in matrix order.
Aligned align(const FeatureMatrix& m, const SampleMetadata& meta);

// Flat key=value configuration. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  const std::map<std::string, std::string>& entries() const { return values_; }

  AgeBinning age_binning() const;
  LabelSet label_set() const;
  std::set<std::string> drop_groups() const;

 private:
  std::map<std::string, std::string> values_;
};

// Text container for model files: "key=value" scalar lines followed by matrix
// blocks, each introduced by "@name<TAB>rows<TAB>cols" and one TSV line per row.
struct SectionedFile {
  std::map<std::string, std::string> scalars;
  std::map<std::string, Matrix> blocks;

  void write(std::ostream& out) const;
  static SectionedFile read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static SectionedFile load(const std::filesystem::path& path);

  const Matrix& block(const std::string& name) const;
  const std::string& scalar(const std::string& name) const;
};

std::vector<std::string> split(std::string_view text, char sep);
std::string format_double(double value);
double parse_double(std::string_view text);

}  // namespace metcc::dataio
