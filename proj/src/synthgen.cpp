#include "metcc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "metcc/error.hpp"
#include "metcc/rng.hpp"

namespace metcc::synthgen {
namespace {

std::string padded(const char* prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

int digits_for(int count) { return static_cast<int>(std::to_string(std::max(count, 1)).size()); }

Matrix gaussian(Rng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

Matrix orthonormal_basis(Rng& rng, Index p, Index r) {
  Matrix g = gaussian(rng, p, r);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(p, r);
}

// Level coefficients centred across levels and rescaled so the average squared
// norm equals the subspace rank; a balanced assignment then contributes variance
// scale^2 * rank regardless of the level count.
Matrix level_coefficients(Rng& rng, Index levels, Index r) {
  Matrix c = gaussian(rng, levels, r);
  if (levels == 2) c.row(1) = -c.row(0);
  c.rowwise() -= c.colwise().mean();
  const double ms = c.squaredNorm() / static_cast<double>(levels);
  if (ms > 0) c *= std::sqrt(static_cast<double>(r) / ms);
  return c;
}

// Assignment of n items to `levels` categories: each level gets `forced` items,
// the rest are drawn from `draw`, and the result is shuffled.
template <typename Draw>
std::vector<int> assign(Rng& rng, int n, int levels, Draw draw) {
  const int forced = n >= 2 * levels ? 2 : 1;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int l = 0; l < levels && static_cast<int>(out.size()) < n; ++l)
    for (int k = 0; k < forced && static_cast<int>(out.size()) < n; ++k) out.push_back(l);
  while (static_cast<int>(out.size()) < n) out.push_back(draw());
  rng.shuffle(std::span<int>(out));
  return out;
}

int draw_categorical(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                   static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
}

double factor_variance(const FactorEffect& e, const std::vector<int>& assignment) {
  const Index levels = e.coefficients.rows();
  std::vector<double> counts(static_cast<std::size_t>(levels), 0.0);
  for (int a : assignment) counts[static_cast<std::size_t>(a)] += 1.0;
  const double n = static_cast<double>(assignment.size());
  // Basis columns are orthonormal, so norms in coefficient space equal norms in feature space.
  Vector mean = Vector::Zero(e.coefficients.cols());
  for (Index l = 0; l < levels; ++l) mean += (counts[static_cast<std::size_t>(l)] / n) * e.coefficients.row(l).transpose();
  double var = 0.0;
  for (Index l = 0; l < levels; ++l)
    var += (counts[static_cast<std::size_t>(l)] / n) * (e.coefficients.row(l).transpose() - mean).squaredNorm();
  return e.scale * e.scale * var;
}

}  // namespace

std::string_view to_string(Factor factor) {
  switch (factor) {
    case Factor::kDisease: return "disease";
    case Factor::kInstitution: return "institution";
    case Factor::kBatch: return "batch";
    case Factor::kAge: return "age";
  }
  return "unknown";
}

const std::vector<int>& GroundTruth::assignment(Factor f) const {
  switch (f) {
    case Factor::kDisease: return label;
    case Factor::kInstitution: return institution;
    case Factor::kBatch: return batch;
    case Factor::kAge: return age_bin;
  }
  return label;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::kInfeasibleConfig, msg); };
  if (n_samples < 2 || n_features < 2) fail("need at least 2 samples and 2 features");
  if (n_institutions < 1) fail("n_institutions must be >= 1");
  if (!crossed_batches && n_batches < n_institutions) fail("n_batches must be >= n_institutions");
  if (n_batches < 1) fail("n_batches must be >= 1");
  if (n_samples < n_batches) fail("cannot place one sample in every batch");
  if (n_samples < n_institutions) fail("cannot place one sample in every institution");
  if (!(class_balance > 0.0 && class_balance < 1.0)) fail("class_balance must lie in (0, 1)");
  for (double s : {disease_effect_scale, institution_effect_scale, batch_effect_scale, age_effect_scale}) {
    if (!(s >= 0.0) || !std::isfinite(s)) fail("effect scales must be finite and >= 0");
  }
  if (!(nonlinear_mix >= 0.0 && nonlinear_mix <= 1.0)) fail("nonlinear_mix must lie in [0, 1]");
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) fail("noise_sd must be > 0");
  if (!(age_label_correlation >= 0.0 && age_label_correlation <= 1.0)) {
    fail("age_label_correlation must lie in [0, 1]");
  }
  if (effect_rank < 1 || effect_rank > n_features) fail("effect_rank must lie in [1, n_features]");
}

SynthConfig SynthConfig::from_config(const dataio::KeyValueConfig& cfg) {
  SynthConfig c;
  c.n_samples = static_cast<int>(cfg.get_int("n_samples", c.n_samples));
  c.n_features = static_cast<int>(cfg.get_int("n_features", c.n_features));
  c.n_institutions = static_cast<int>(cfg.get_int("n_institutions", c.n_institutions));
  c.n_batches = static_cast<int>(cfg.get_int("n_batches", c.n_batches));
  c.class_balance = cfg.get_double("class_balance", c.class_balance);
  c.disease_effect_scale = cfg.get_double("disease_effect_scale", c.disease_effect_scale);
  c.institution_effect_scale = cfg.get_double("institution_effect_scale", c.institution_effect_scale);
  c.batch_effect_scale = cfg.get_double("batch_effect_scale", c.batch_effect_scale);
  c.age_effect_scale = cfg.get_double("age_effect_scale", c.age_effect_scale);
  c.nonlinear_mix = cfg.get_double("nonlinear_mix", c.nonlinear_mix);
  c.noise_sd = cfg.get_double("noise_sd", c.noise_sd);
  c.age_label_correlation = cfg.get_double("age_label_correlation", c.age_label_correlation);
  c.effect_rank = static_cast<int>(cfg.get_int("effect_rank", c.effect_rank));
  c.crossed_batches = cfg.get_bool("crossed_batches", c.crossed_batches);
  c.age_bins = cfg.age_binning();
  c.seed = cfg.get_u64("seed", c.seed);
  return c;
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, SeedComponent::kGenerator));
  const int n = cfg.n_samples;
  const Index p = cfg.n_features;
  const Index r = cfg.effect_rank;
  const int n_age = static_cast<int>(cfg.age_bins.size());

  GroundTruth truth;
  truth.n_features = cfg.n_features;
  truth.noise_sd = cfg.noise_sd;
  truth.nonlinear_mix = cfg.nonlinear_mix;

  // Sample assignments.
  truth.label = assign(rng, n, 2, [&] { return rng.uniform() < cfg.class_balance ? 1 : 0; });
  if (cfg.crossed_batches) {
    truth.institution = assign(rng, n, cfg.n_institutions,
                               [&] { return static_cast<int>(rng.below(cfg.n_institutions)); });
    truth.batch = assign(rng, n, cfg.n_batches, [&] { return static_cast<int>(rng.below(cfg.n_batches)); });
    truth.batch_institution.assign(static_cast<std::size_t>(cfg.n_batches), -1);
  } else {
    truth.batch = assign(rng, n, cfg.n_batches, [&] { return static_cast<int>(rng.below(cfg.n_batches)); });
    for (int b = 0; b < cfg.n_batches; ++b) truth.batch_institution.push_back(b % cfg.n_institutions);
    for (int b : truth.batch) truth.institution.push_back(truth.batch_institution[static_cast<std::size_t>(b)]);
  }

  // Label-conditional age distribution: a uniform component mixed with a skew
  // toward old (positive class) or young (negative class) bins.
  std::vector<double> cum_pos, cum_neg;
  {
    const double rho = cfg.age_label_correlation;
    const double ramp_total = n_age * (n_age + 1) / 2.0;
    double acc_pos = 0.0, acc_neg = 0.0;
    for (int b = 0; b < n_age; ++b) {
      acc_pos += (1.0 - rho) / n_age + rho * (b + 1) / ramp_total;
      acc_neg += (1.0 - rho) / n_age + rho * (n_age - b) / ramp_total;
      cum_pos.push_back(acc_pos);
      cum_neg.push_back(acc_neg);
    }
  }
  truth.age_bin.resize(static_cast<std::size_t>(n));
  {
    const int forced = n >= 2 * n_age ? 2 : (n >= n_age ? 1 : 0);
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      truth.age_bin[ui] = i < forced * n_age ? i / forced
                                             : draw_categorical(rng, truth.label[ui] == 1 ? cum_pos : cum_neg);
    }
  }

  // Effects.
  const double scales[kFactorCount] = {cfg.disease_effect_scale, cfg.institution_effect_scale,
                                       cfg.batch_effect_scale, cfg.age_effect_scale};
  const Index levels[kFactorCount] = {2, cfg.n_institutions, cfg.n_batches, n_age};
  for (int f = 0; f < kFactorCount; ++f) {
    FactorEffect e;
    e.factor = static_cast<Factor>(f);
    e.scale = scales[f];
    e.basis = orthonormal_basis(rng, p, r);
    e.coefficients = level_coefficients(rng, levels[f], r);
    truth.effects.push_back(std::move(e));
  }
  truth.nonlinear_basis = orthonormal_basis(rng, p, r);
  Matrix mixing[kFactorCount];
  for (auto& m : mixing) m = gaussian(rng, r, r) / std::sqrt(static_cast<double>(r));

  // Signal in coefficient space, then lifted into feature space.
  const double gain = *std::max_element(std::begin(scales), std::end(scales));
  Matrix x = Matrix::Zero(n, p);
  truth.nonlinear_coords = Matrix::Zero(n, r);
  for (int f = 0; f < kFactorCount; ++f) {
    const auto& e = truth.effects[static_cast<std::size_t>(f)];
    const auto& a = truth.assignment(e.factor);
    Matrix coords(n, r);
    for (int i = 0; i < n; ++i) coords.row(i) = e.scale * e.coefficients.row(a[static_cast<std::size_t>(i)]);
    x.noalias() += coords * e.basis.transpose();
    truth.nonlinear_coords.noalias() += coords * mixing[f].transpose();
  }
  truth.nonlinear_coords = gain * truth.nonlinear_coords.array().tanh();
  x.noalias() += cfg.nonlinear_mix * truth.nonlinear_coords * truth.nonlinear_basis.transpose();
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) += cfg.noise_sd * rng.normal();

  // Annotations.
  SynthData out;
  static const char* const kChromosomes[] = {
      "chr1",  "chr2",  "chr3",  "chr4",  "chr5",  "chr6",  "chr7",  "chr8",
      "chr9",  "chr10", "chr11", "chr12", "chr13", "chr14", "chr15", "chr16",
      "chr17", "chr18", "chr19", "chr20", "chr21", "chr22", "chrX",  "chrY"};
  out.matrix.values = std::move(x);
  const int sw = digits_for(n), fw = digits_for(cfg.n_features);
  for (int i = 0; i < n; ++i) out.matrix.sample_ids.push_back(padded("S", i + 1, sw));
  for (int j = 0; j < cfg.n_features; ++j) {
    out.matrix.feature_ids.push_back(padded("g", j + 1, fw));
    out.matrix.feature_groups.emplace_back(kChromosomes[j % 24]);
  }

  const auto bin_labels = cfg.age_bins.labels();
  auto& meta = out.metadata;
  meta.sample_ids = out.matrix.sample_ids;
  const int iw = digits_for(cfg.n_institutions), bw = digits_for(cfg.n_batches);
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    meta.label.push_back(truth.label[ui]);
    meta.institution.push_back(padded("inst", truth.institution[ui] + 1, iw));
    meta.batch.push_back(padded("batch", truth.batch[ui] + 1, bw));
    const auto b = static_cast<std::size_t>(truth.age_bin[ui]);
    double lo = cfg.age_bins.edges[b];
    if (b == 0 && cfg.age_bins.size() > 1) lo = std::min(20.0, cfg.age_bins.edges[1] / 2.0);
    const double hi = b + 1 < cfg.age_bins.size() ? cfg.age_bins.edges[b + 1] : cfg.age_bins.edges[b] + 10.0;
    const double age = std::floor(rng.uniform(lo, hi) * 10.0) / 10.0;
    meta.age_years.push_back(age);
    meta.age_bin.push_back(bin_labels[cfg.age_bins.index_of(age)]);
  }
  out.truth = std::move(truth);
  return out;
}

VarianceShares confounding_strength(const GroundTruth& truth) {
  VarianceShares v;
  double parts[kFactorCount];
  for (int f = 0; f < kFactorCount; ++f) {
    const auto& e = truth.effects[static_cast<std::size_t>(f)];
    parts[f] = factor_variance(e, truth.assignment(e.factor));
  }
  double nonlinear = 0.0;
  if (truth.nonlinear_coords.rows() > 0) {
    const Matrix centred = truth.nonlinear_coords.rowwise() - truth.nonlinear_coords.colwise().mean();
    nonlinear = truth.nonlinear_mix * truth.nonlinear_mix * centred.squaredNorm() /
                static_cast<double>(truth.nonlinear_coords.rows());
  }
  const double noise = truth.noise_sd * truth.noise_sd * truth.n_features;
  const double total = parts[0] + parts[1] + parts[2] + parts[3] + nonlinear + noise;
  v.total_variance = total;
  v.disease = parts[0] / total;
  v.institution = parts[1] / total;
  v.batch = parts[2] / total;
  v.age = parts[3] / total;
  v.nonlinear = nonlinear / total;
  v.noise = noise / total;
  return v;
}

void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
  out << "factor\tlevel\tfeature\tvalue\n";
  for (const auto& e : truth.effects) {
    const Matrix effects = e.scale * e.level_effects();
    for (Index l = 0; l < effects.rows(); ++l)
      for (Index j = 0; j < effects.cols(); ++j)
        out << to_string(e.factor) << '\t' << l << '\t' << j << '\t' << dataio::format_double(effects(l, j)) << '\n';
  }
  // Nonlinear term: one row per basis direction.
  for (Index c = 0; c < truth.nonlinear_basis.cols(); ++c)
    for (Index j = 0; j < truth.nonlinear_basis.rows(); ++j)
      out << "nonlinear\t" << c << '\t' << j << '\t' << dataio::format_double(truth.nonlinear_basis(j, c)) << '\n';
  for (std::size_t b = 0; b < truth.batch_institution.size(); ++b)
    out << "batch_institution\t" << b << "\t-1\t" << truth.batch_institution[b] << '\n';
}

void write_dataset(const std::filesystem::path& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  dataio::save_matrix(dir / "matrix.tsv", data.matrix);
  dataio::save_metadata(dir / "metadata.tsv", data.metadata);
  std::ofstream gt(dir / "ground_truth.tsv", std::ios::binary);
  if (!gt) throw Error(Errc::kIo, "cannot write ground_truth.tsv in '" + dir.string() + "'");
  write_ground_truth(gt, data.truth);
}

}  // namespace metcc::synthgen
