#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "metcc/dataio.hpp"
#include "metcc/types.hpp"

namespace metcc::synthgen {

// Synthetic cohort with a binary disease label and three categorical confounders.
// Defaults are the benchmark used by the acceptance suite.
struct SynthConfig {
  int n_samples = 600;
  int n_features = 2000;
  int n_institutions = 4;
  int n_batches = 10;
  double class_balance = 0.5;
  double disease_effect_scale = 1.5;
  double institution_effect_scale = 6.0;
  double batch_effect_scale = 6.0;
  double age_effect_scale = 4.0;
  double nonlinear_mix = 0.5;
  double noise_sd = 1.0;
  double age_label_correlation = 0.3;
  // Dimension of each factor's random feature subspace.
  int effect_rank = 2;
  // Draw batches independently of institutions instead of nesting them.
  bool crossed_batches = false;
  dataio::AgeBinning age_bins{};
  std::uint64_t seed = 0;

  void validate() const;
  // Reads keys named like the fields (n_samples=..., noise_sd=..., seed=...).
  static SynthConfig from_config(const dataio::KeyValueConfig& cfg);
};

enum class Factor { kDisease, kInstitution, kBatch, kAge };
inline constexpr int kFactorCount = 4;

std::string_view to_string(Factor factor);

struct FactorEffect {
  Factor factor = Factor::kDisease;
  double scale = 0.0;
  Matrix basis;         // p x r, orthonormal columns
  Matrix coefficients;  // levels x r, centred across levels

  // Unscaled per-level effect vectors, levels x p.
  Matrix level_effects() const { return coefficients * basis.transpose(); }
};

struct GroundTruth {
  std::vector<int> label;
  std::vector<int> institution;
  std::vector<int> batch;
  std::vector<int> age_bin;
  std::vector<int> batch_institution;  // owning institution of each batch (-1 when crossed)
  std::vector<FactorEffect> effects;   // indexed by Factor
  // Nonlinear interaction term: sample i contributes nonlinear_mix * coords.row(i) * basis^T.
  Matrix nonlinear_basis;  // p x r
  Matrix nonlinear_coords;  // n x r
  double nonlinear_mix = 0.0;
  double noise_sd = 1.0;
  int n_features = 0;

  const FactorEffect& effect(Factor f) const { return effects[static_cast<std::size_t>(f)]; }
  const std::vector<int>& assignment(Factor f) const;
};

struct SynthData {
  dataio::FeatureMatrix matrix;
  dataio::SampleMetadata metadata;
  GroundTruth truth;
};

SynthData generate(const SynthConfig& cfg);

// Share of the expected total per-sample variance owned by each additive term.
struct VarianceShares {
  double disease = 0.0;
  double institution = 0.0;
  double batch = 0.0;
  double age = 0.0;
  double nonlinear = 0.0;
  double noise = 0.0;
  double total_variance = 0.0;  // expected sum of per-feature variances

  double confounders() const { return institution + batch + age; }
};

VarianceShares confounding_strength(const GroundTruth& truth);

// TSV with columns factor, level, feature, value.
void write_ground_truth(std::ostream& out, const GroundTruth& truth);

// Writes matrix.tsv, metadata.tsv and ground_truth.tsv into dir.
void write_dataset(const std::filesystem::path& dir, const SynthData& data);

}  // namespace metcc::synthgen
