#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "drio/tensor.hpp"

namespace drio {

/// A batch of N multivariate series, each D features by T timesteps.
///
/// `values` holds X_obs = X * M: entries where `raw_mask` is zero are stored
/// as 0.0 in memory (NaN on disk). `gt_mask` is optional; when present it is
/// the artificial-missingness mask produced by the masking module and is a
/// subset of `raw_mask`.
struct TimeSeriesDataset {
  std::string name;
  std::vector<std::string> feature_names;
  RealTensor values;
  MaskTensor raw_mask;
  MaskTensor gt_mask;

  Shape3 shape() const { return values.shape(); }
  std::size_t n() const { return values.n(); }
  bool has_gt_mask() const { return !gt_mask.empty(); }

  /// The mask a model is allowed to see: gt_mask when present, else raw_mask.
  const MaskTensor& visible_mask() const { return has_gt_mask() ? gt_mask : raw_mask; }

  /// Throws ValidationError if any invariant is violated.
  void validate() const;

  friend bool operator==(const TimeSeriesDataset&, const TimeSeriesDataset&) = default;
};

/// Returns samples `indices` of `ds` as a new dataset (masks included).
TimeSeriesDataset subset(const TimeSeriesDataset& ds, std::span<const std::size_t> indices);

// ---------------------------------------------------------------------------
// Normalization

struct NormStats {
  RealTensor mean;  // shape (1, D, T)
  RealTensor std;   // shape (1, D, T), every entry >= kStdFloor
};

inline constexpr double kStdFloor = 1e-8;

/// Entry-wise mean and population std over observed (raw_mask) entries of
/// the training split. Positions with std below kStdFloor get std = 1;
/// positions never observed get mean 0, std 1.
NormStats fit_normalizer(const TimeSeriesDataset& train);

/// (x - mean) / std at observed positions; unobserved entries stay 0.
TimeSeriesDataset apply_normalizer(const TimeSeriesDataset& ds, const NormStats& stats);

/// Inverse of apply_normalizer for an arbitrary value tensor (all positions).
RealTensor invert_normalizer(const RealTensor& values, const NormStats& stats);

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct DatasetSplits {
  TimeSeriesDataset train, val, test;
};

/// Seeded permutation; |val| = round(f_val N), |test| = round(f_test N),
/// each at least one sample, the remainder goes to train.
SplitIndices split_indices(std::size_t n, const SplitSpec& spec);
DatasetSplits split_dataset(const TimeSeriesDataset& ds, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Batch mean imputation

struct MeanImputedView {
  RealTensor values;      // (B, D, T); observed entries copied, missing entries = mean_table
  RealTensor mean_table;  // (1, D, T)
};

/// Per-(d,t) mean over the observed entries of the batch (0 where nothing is
/// observed), used to fill the missing entries.
MeanImputedView batch_mean_impute(const RealTensor& values, const MaskTensor& mask);

// ---------------------------------------------------------------------------
// Synthetic non-stationary generator

struct SynthSpec {
  std::size_t n_samples = 64;
  std::size_t n_features = 4;
  std::size_t n_timesteps = 32;
  std::size_t n_regimes = 2;
  std::pair<double, double> amplitude_range{0.5, 2.0};
  std::pair<double, double> frequency_range{1.0, 4.0};
  double noise_std = 0.1;
  double mixing_strength = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledSynth {
  TimeSeriesDataset dataset;
  std::vector<std::size_t> regimes;  // regime of each sample, 0-based
};

/// Regime-switching sinusoids. Every sample draws a regime r; feature d is
///   A[r][d] * sin(2 pi f[r][d] t / T + phi[r][d] + psi_i)
/// plus mixing_strength times a per-regime linear mix of the other
/// features' sinusoids, plus N(0, noise_std^2). Frequencies are integers so
/// every sinusoid completes whole periods over t = 0..T-1. Regime r draws
/// amplitudes from the r-th of n_regimes equal, disjoint slices of
/// amplitude_range. psi_i is a per-sample phase offset.
LabeledSynth synth_generate_labeled(const SynthSpec& spec);
TimeSeriesDataset synth_generate(const SynthSpec& spec);

}  // namespace drio
