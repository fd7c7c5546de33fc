#include "metcc/dataio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "metcc/error.hpp"

namespace metcc::dataio {
namespace {

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void check_unique(const std::vector<std::string>& ids, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) {
      throw Error(Errc::kDuplicateId, std::string("duplicate ") + what + " '" + id + "'");
    }
  }
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kIo, "cannot open '" + path.string() + "' for writing");
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const IndexList& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(v.at(static_cast<std::size_t>(r)));
  return out;
}

}  // namespace

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(Errc::kNonFiniteValue, "cannot parse '" + std::string(text) + "' as a number");
  }
  if (!std::isfinite(value)) {
    throw Error(Errc::kNonFiniteValue, "non-finite value '" + std::string(text) + "'");
  }
  return value;
}

void FeatureMatrix::validate() const {
  if (static_cast<std::size_t>(values.rows()) != sample_ids.size()) {
    throw Error(Errc::kDimensionMismatch, "row count does not match sample ids");
  }
  if (static_cast<std::size_t>(values.cols()) != feature_ids.size() ||
      feature_ids.size() != feature_groups.size()) {
    throw Error(Errc::kDimensionMismatch, "column count does not match feature ids/groups");
  }
  if (!values.allFinite()) throw Error(Errc::kNonFiniteValue, "matrix contains NaN or Inf");
  check_unique(sample_ids, "sample id");
  check_unique(feature_ids, "feature id");
}

FeatureMatrix FeatureMatrix::select_rows(const IndexList& rows) const {
  FeatureMatrix out;
  out.values = values(rows, Eigen::all);
  out.sample_ids = pick(sample_ids, rows);
  out.feature_ids = feature_ids;
  out.feature_groups = feature_groups;
  return out;
}

AgeBinning AgeBinning::parse(std::string_view csv) {
  AgeBinning bins;
  bins.edges.clear();
  for (const auto& field : split(csv, ',')) bins.edges.push_back(parse_double(field));
  if (bins.edges.empty() || bins.edges.front() != 0.0) {
    throw Error(Errc::kInvalidArgument, "age bins must start at 0");
  }
  for (std::size_t i = 1; i < bins.edges.size(); ++i) {
    if (!(bins.edges[i] > bins.edges[i - 1])) {
      throw Error(Errc::kInvalidArgument, "age bin edges must be strictly increasing");
    }
  }
  return bins;
}

std::size_t AgeBinning::index_of(double age_years) const {
  if (age_years < 0) throw Error(Errc::kNegativeAge, "negative age " + format_double(age_years));
  std::size_t i = 0;
  while (i + 1 < edges.size() && age_years >= edges[i + 1]) ++i;
  return i;
}

std::vector<std::string> AgeBinning::labels() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i + 1 < edges.size()) {
      out.push_back(format_double(edges[i]) + "-" + format_double(edges[i + 1]));
    } else {
      out.push_back(format_double(edges[i]) + "+");
    }
  }
  return out;
}

std::string AgeBinning::label_of(double age_years) const { return labels()[index_of(age_years)]; }

void SampleMetadata::validate() const {
  const auto n = sample_ids.size();
  if (label.size() != n || institution.size() != n || batch.size() != n || age_bin.size() != n ||
      age_years.size() != n) {
    throw Error(Errc::kLengthMismatch, "metadata columns have different lengths");
  }
  check_unique(sample_ids, "sample id");
  for (std::size_t i = 0; i < n; ++i) {
    if (institution[i].empty() || batch[i].empty() || age_bin[i].empty()) {
      throw Error(Errc::kMissingColumn, "missing confounder value for sample '" + sample_ids[i] + "'");
    }
  }
}

SampleMetadata SampleMetadata::select_rows(const IndexList& rows) const {
  SampleMetadata out;
  out.sample_ids = pick(sample_ids, rows);
  out.label = pick(label, rows);
  out.institution = pick(institution, rows);
  out.batch = pick(batch, rows);
  out.age_bin = pick(age_bin, rows);
  out.age_years = pick(age_years, rows);
  return out;
}

FeatureMatrix read_matrix(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kMalformedFile, "empty matrix file");
  auto header = split(strip_cr(line), '\t');
  if (header.size() < 2 || header.front() != "sample_id") {
    throw Error(Errc::kMalformedFile, "header must start with 'sample_id' and name features");
  }
  FeatureMatrix m;
  m.feature_ids.assign(header.begin() + 1, header.end());
  const std::size_t p = m.feature_ids.size();
  m.feature_groups.assign(p, "");

  std::vector<double> cells;
  std::size_t line_no = 1;
  bool first_data_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = strip_cr(line);
    if (view.empty()) continue;
    auto fields = split(view, '\t');
    if (first_data_line && fields.front() == "#group") {
      first_data_line = false;
      if (fields.size() != p + 1) {
        throw Error(Errc::kMalformedFile, "group line has " + std::to_string(fields.size()) +
                                              " fields, expected " + std::to_string(p + 1));
      }
      m.feature_groups.assign(fields.begin() + 1, fields.end());
      continue;
    }
    first_data_line = false;
    if (fields.size() != p + 1) {
      throw Error(Errc::kMalformedFile, "line " + std::to_string(line_no) + " has " +
                                            std::to_string(fields.size()) + " fields, expected " +
                                            std::to_string(p + 1));
    }
    m.sample_ids.push_back(fields.front());
    for (std::size_t j = 1; j <= p; ++j) {
      try {
        cells.push_back(parse_double(fields[j]));
      } catch (const Error& e) {
        throw Error(Errc::kNonFiniteValue, "line " + std::to_string(line_no) + ", feature '" +
                                               m.feature_ids[j - 1] + "': '" + fields[j] + "'");
      }
    }
  }
  const auto n = static_cast<Index>(m.sample_ids.size());
  m.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      cells.data(), n, static_cast<Index>(p));
  m.validate();
  return m;
}

void write_matrix(std::ostream& out, const FeatureMatrix& m) {
  out << "sample_id";
  for (const auto& id : m.feature_ids) out << '\t' << id;
  out << '\n';
  bool has_groups = false;
  for (const auto& g : m.feature_groups) has_groups = has_groups || !g.empty();
  if (has_groups) {
    out << "#group";
    for (const auto& g : m.feature_groups) out << '\t' << g;
    out << '\n';
  }
  for (Index i = 0; i < m.rows(); ++i) {
    out << m.sample_ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < m.cols(); ++j) out << '\t' << format_double(m.values(i, j));
    out << '\n';
  }
}

FeatureMatrix load_matrix(const std::filesystem::path& path, MatrixFormat /*format*/) {
  auto in = open_in(path);
  return read_matrix(in);
}

void save_matrix(const std::filesystem::path& path, const FeatureMatrix& m) {
  auto out = open_out(path);
  write_matrix(out, m);
  if (!out) throw Error(Errc::kIo, "write failed for '" + path.string() + "'");
}

SampleMetadata read_metadata(std::istream& in, const LabelSet& labels, const AgeBinning& bins) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::kMalformedFile, "empty metadata file");
  const auto header = split(strip_cr(line), '\t');
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  std::size_t idx[5];
  const char* required[5] = {"sample_id", "label", "institution", "batch", "age"};
  for (int c = 0; c < 5; ++c) {
    const auto it = column.find(required[c]);
    if (it == column.end()) {
      throw Error(Errc::kMissingColumn, std::string("metadata lacks column '") + required[c] + "'");
    }
    idx[c] = it->second;
  }

  const auto bin_labels = bins.labels();
  SampleMetadata meta;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = strip_cr(line);
    if (view.empty()) continue;
    const auto fields = split(view, '\t');
    if (fields.size() != header.size()) {
      throw Error(Errc::kMalformedFile, "metadata line " + std::to_string(line_no) +
                                            " has a different field count than the header");
    }
    const auto& label = fields[idx[1]];
    if (label == labels.positive) {
      meta.label.push_back(1);
    } else if (label == labels.negative) {
      meta.label.push_back(0);
    } else {
      throw Error(Errc::kUnknownLabelValue, "label '" + label + "' on line " + std::to_string(line_no));
    }
    for (int c : {2, 3, 4}) {
      if (trim(fields[idx[c]]).empty()) {
        throw Error(Errc::kMissingColumn, std::string("empty '") + required[c] + "' on line " +
                                              std::to_string(line_no));
      }
    }
    const double age = parse_double(fields[idx[4]]);
    meta.sample_ids.push_back(fields[idx[0]]);
    meta.institution.push_back(fields[idx[2]]);
    meta.batch.push_back(fields[idx[3]]);
    meta.age_years.push_back(age);
    meta.age_bin.push_back(bin_labels[bins.index_of(age)]);
  }
  meta.validate();
  return meta;
}

void write_metadata(std::ostream& out, const SampleMetadata& meta, const LabelSet& labels) {
  out << "sample_id\tlabel\tinstitution\tbatch\tage\n";
  for (std::size_t i = 0; i < meta.size(); ++i) {
    out << meta.sample_ids[i] << '\t' << (meta.label[i] == 1 ? labels.positive : labels.negative)
        << '\t' << meta.institution[i] << '\t' << meta.batch[i] << '\t'
        << format_double(meta.age_years[i]) << '\n';
  }
}

SampleMetadata load_metadata(const std::filesystem::path& path, const LabelSet& labels,
                             const AgeBinning& bins) {
  auto in = open_in(path);
  return read_metadata(in, labels, bins);
}

void save_metadata(const std::filesystem::path& path, const SampleMetadata& meta,
                   const LabelSet& labels) {
  auto out = open_out(path);
  write_metadata(out, meta, labels);
  if (!out) throw Error(Errc::kIo, "write failed for '" + path.string() + "'");
}

FeatureMatrix preprocess(const FeatureMatrix& m, const std::set<std::string>& drop_groups) {
  IndexList keep;
  for (std::size_t j = 0; j < m.feature_ids.size(); ++j) {
    if (drop_groups.count(m.feature_groups[j]) == 0) keep.push_back(static_cast<Index>(j));
  }
  if (keep.size() < 2) {
    throw Error(Errc::kAllFeaturesDropped,
                std::to_string(keep.size()) + " feature(s) left after dropping groups");
  }

  FeatureMatrix out;
  out.sample_ids = m.sample_ids;
  out.values = m.values(Eigen::all, keep);
  for (Index j : keep) {
    out.feature_ids.push_back(m.feature_ids[static_cast<std::size_t>(j)]);
    out.feature_groups.push_back(m.feature_groups[static_cast<std::size_t>(j)]);
  }

  const double p = static_cast<double>(keep.size());
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.values.row(i);
    const double mean = row.mean();
    row.array() -= mean;
    const double sd = std::sqrt(row.squaredNorm() / p);
    if (!(sd > 0.0)) {
      throw Error(Errc::kZeroVarianceSample,
                  "sample '" + out.sample_ids[static_cast<std::size_t>(i)] + "' is constant");
    }
    row /= sd;
  }
  return out;
}

Aligned align(const FeatureMatrix& m, const SampleMetadata& meta) {
  std::unordered_map<std::string, Index> meta_row;
  for (std::size_t i = 0; i < meta.size(); ++i) meta_row[meta.sample_ids[i]] = static_cast<Index>(i);

  IndexList matrix_rows, metadata_rows;
  for (std::size_t i = 0; i < m.sample_ids.size(); ++i) {
    const auto it = meta_row.find(m.sample_ids[i]);
    if (it != meta_row.end()) {
      matrix_rows.push_back(static_cast<Index>(i));
      metadata_rows.push_back(it->second);
    }
  }
  if (matrix_rows.empty()) {
    throw Error(Errc::kEmptyIntersection, "matrix and metadata share no sample ids");
  }
  Aligned out;
  out.matrix = m.select_rows(matrix_rows);
  out.metadata = meta.select_rows(metadata_rows);
  out.dropped = (m.sample_ids.size() - matrix_rows.size()) + (meta.size() - metadata_rows.size());
  return out;
}

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kMalformedFile, "config line " + std::to_string(line_no) + " lacks '='");
    }
    cfg.values_[std::string(trim(view.substr(0, eq)))] = std::string(trim(view.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse(in);
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_double(*v);
  } catch (const Error&) {
    throw Error(Errc::kInvalidArgument, "config key '" + key + "' is not a number: '" + *v + "'");
  }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  long long out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw Error(Errc::kInvalidArgument, "config key '" + key + "' is not an integer: '" + *v + "'");
  }
  return out;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw Error(Errc::kInvalidArgument, "config key '" + key + "' is not an unsigned integer");
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "1" || *v == "true" || *v == "yes" || *v == "on") return true;
  if (*v == "0" || *v == "false" || *v == "no" || *v == "off") return false;
  throw Error(Errc::kInvalidArgument, "config key '" + key + "' is not a boolean: '" + *v + "'");
}

AgeBinning KeyValueConfig::age_binning() const {
  const auto v = get("age_bins");
  return v ? AgeBinning::parse(*v) : AgeBinning{};
}

LabelSet KeyValueConfig::label_set() const {
  LabelSet labels;
  labels.positive = get_or("label_positive", labels.positive);
  labels.negative = get_or("label_negative", labels.negative);
  if (labels.positive == labels.negative) {
    throw Error(Errc::kInvalidArgument, "positive and negative labels must differ");
  }
  return labels;
}

std::set<std::string> KeyValueConfig::drop_groups() const {
  std::set<std::string> out;
  const auto v = get_or("drop_groups", "chrX,chrY");
  for (const auto& g : split(v, ',')) {
    const auto t = trim(g);
    if (!t.empty()) out.emplace(t);
  }
  return out;
}

}  // namespace metcc::dataio

namespace metcc::dataio {

void SectionedFile::write(std::ostream& out) const {
  for (const auto& [key, value] : scalars) out << key << '=' << value << '\n';
  for (const auto& [name, m] : blocks) {
    out << '@' << name << '\t' << m.rows() << '\t' << m.cols() << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        if (j) out << '\t';
        out << format_double(m(i, j));
      }
      out << '\n';
    }
  }
}

SectionedFile SectionedFile::read(std::istream& in) {
  SectionedFile file;
  std::string line;
  while (std::getline(in, line)) {
    const auto view = strip_cr(line);
    if (view.empty()) continue;
    if (view.front() != '@') {
      const auto eq = view.find('=');
      if (eq == std::string_view::npos) throw Error(Errc::kMalformedFile, "expected key=value, got '" + line + "'");
      file.scalars[std::string(view.substr(0, eq))] = std::string(view.substr(eq + 1));
      continue;
    }
    const auto header = split(view.substr(1), '\t');
    if (header.size() != 3) throw Error(Errc::kMalformedFile, "bad block header '" + line + "'");
    const auto rows = static_cast<Index>(std::stoll(header[1]));
    const auto cols = static_cast<Index>(std::stoll(header[2]));
    if (rows < 0 || cols < 0) throw Error(Errc::kMalformedFile, "negative block shape");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      std::string row_line;
      // A row of a zero-column block is an empty line.
      if (!std::getline(in, row_line)) throw Error(Errc::kMalformedFile, "block '" + header[0] + "' is truncated");
      if (cols == 0) continue;
      const auto fields = split(strip_cr(row_line), '\t');
      if (static_cast<Index>(fields.size()) != cols) {
        throw Error(Errc::kMalformedFile, "block '" + header[0] + "' has a ragged row");
      }
      for (Index j = 0; j < cols; ++j) m(i, j) = parse_double(fields[static_cast<std::size_t>(j)]);
    }
    file.blocks[header[0]] = std::move(m);
  }
  return file;
}

void SectionedFile::save(const std::filesystem::path& path) const {
  auto out = open_out(path);
  write(out);
  if (!out) throw Error(Errc::kIo, "write failed for '" + path.string() + "'");
}

SectionedFile SectionedFile::load(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read(in);
}

const Matrix& SectionedFile::block(const std::string& name) const {
  const auto it = blocks.find(name);
  if (it == blocks.end()) throw Error(Errc::kMalformedFile, "missing block '" + name + "'");
  return it->second;
}

const std::string& SectionedFile::scalar(const std::string& name) const {
  const auto it = scalars.find(name);
  if (it == scalars.end()) throw Error(Errc::kMalformedFile, "missing key '" + name + "'");
  return it->second;
}

}  // namespace metcc::dataio
