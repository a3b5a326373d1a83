#include "drio/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "drio/error.hpp"
#include "drio/random.hpp"

namespace drio {

void TimeSeriesDataset::validate() const {
  const Shape3 s = values.shape();
  if (s.n < 1 || s.d < 1 || s.t < 1) throw ValidationError("dataset: N, D, T must all be >= 1");
  if (!(raw_mask.shape() == s)) throw ValidationError("dataset: raw_mask shape mismatch");
  if (feature_names.empty()) throw ValidationError("dataset: feature_names is empty");
  if (feature_names.size() != s.d) throw ValidationError("dataset: feature_names size != D");
  require_binary(raw_mask, "dataset raw_mask");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (raw_mask[k] && !std::isfinite(values[k])) {
      throw ValidationError("dataset: non-finite value at observed entry " + std::to_string(k));
    }
  }
  if (has_gt_mask()) {
    if (!(gt_mask.shape() == s)) throw ValidationError("dataset: gt_mask shape mismatch");
    require_binary(gt_mask, "dataset gt_mask");
    for (std::size_t k = 0; k < gt_mask.size(); ++k) {
      if (gt_mask[k] && !raw_mask[k]) {
        throw ValidationError("dataset: gt_mask marks an entry the raw mask does not observe");
      }
    }
  }
}

TimeSeriesDataset subset(const TimeSeriesDataset& ds, std::span<const std::size_t> indices) {
  TimeSeriesDataset out;
  out.name = ds.name;
  out.feature_names = ds.feature_names;
  out.values = gather_samples(ds.values, indices);
  out.raw_mask = gather_samples(ds.raw_mask, indices);
  if (ds.has_gt_mask()) out.gt_mask = gather_samples(ds.gt_mask, indices);
  return out;
}

NormStats fit_normalizer(const TimeSeriesDataset& train) {
  const std::size_t n = train.n(), dim = train.values.shape().sample_size();
  NormStats stats{RealTensor(1, train.values.d(), train.values.t(), 0.0),
                  RealTensor(1, train.values.d(), train.values.t(), 1.0)};
  for (std::size_t k = 0; k < dim; ++k) {
    double count = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (train.raw_mask[i * dim + k]) {
        count += 1.0;
        sum += train.values[i * dim + k];
      }
    }
    if (count == 0.0) continue;
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (train.raw_mask[i * dim + k]) {
        const double dev = train.values[i * dim + k] - mean;
        ss += dev * dev;
      }
    }
    const double sd = std::sqrt(ss / count);
    stats.mean[k] = mean;
    stats.std[k] = sd < kStdFloor ? 1.0 : sd;
  }
  return stats;
}

TimeSeriesDataset apply_normalizer(const TimeSeriesDataset& ds, const NormStats& stats) {
  const std::size_t dim = ds.values.shape().sample_size();
  if (stats.mean.size() != dim) throw ValidationError("apply_normalizer: stats shape mismatch");
  TimeSeriesDataset out = ds;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) {
      const std::size_t idx = i * dim + k;
      if (ds.raw_mask[idx]) out.values[idx] = (ds.values[idx] - stats.mean[k]) / stats.std[k];
    }
  }
  return out;
}

RealTensor invert_normalizer(const RealTensor& values, const NormStats& stats) {
  const std::size_t dim = values.shape().sample_size();
  if (stats.mean.size() != dim) throw ValidationError("invert_normalizer: stats shape mismatch");
  RealTensor out = values;
  for (std::size_t i = 0; i < values.n(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) out[i * dim + k] = values[i * dim + k] * stats.std[k] + stats.mean[k];
  }
  return out;
}

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  const double fractions[] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ValidationError("split: fractions must lie in (0, 1)");
  }
  if (std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) > 1e-12) {
    throw ValidationError("split: fractions must sum to 1");
  }
  if (n < 3) throw ValidationError("split: need N >= 3 for three nonempty splits");

  const auto sized = [n](double f) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
  };
  const std::size_t n_val = sized(spec.val_fraction);
  const std::size_t n_test = sized(spec.test_fraction);
  if (n_val + n_test >= n) throw ValidationError("split: N too small for nonempty splits");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(spec.seed, 0x5b1175ULL);
  std::shuffle(perm.begin(), perm.end(), rng);

  SplitIndices out;
  out.val.assign(perm.begin(), perm.begin() + n_val);
  out.test.assign(perm.begin() + n_val, perm.begin() + n_val + n_test);
  out.train.assign(perm.begin() + n_val + n_test, perm.end());
  return out;
}

DatasetSplits split_dataset(const TimeSeriesDataset& ds, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds.n(), spec);
  return {subset(ds, idx.train), subset(ds, idx.val), subset(ds, idx.test)};
}

MeanImputedView batch_mean_impute(const RealTensor& values, const MaskTensor& mask) {
  if (!(values.shape() == mask.shape())) throw ValidationError("batch_mean_impute: shape mismatch");
  const std::size_t b = values.n(), dim = values.shape().sample_size();
  MeanImputedView view{values, RealTensor(1, values.d(), values.t(), 0.0)};
  for (std::size_t k = 0; k < dim; ++k) {
    double sum = 0.0, count = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      if (mask[i * dim + k]) {
        sum += values[i * dim + k];
        count += 1.0;
      }
    }
    view.mean_table[k] = count > 0.0 ? sum / count : 0.0;
  }
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < dim; ++k) {
      if (!mask[i * dim + k]) view.values[i * dim + k] = view.mean_table[k];
    }
  }
  return view;
}

void SynthSpec::validate() const {
  if (n_samples < 1 || n_features < 1 || n_timesteps < 1 || n_regimes < 1) {
    throw ValidationError("synth: sizes must be positive");
  }
  if (!(amplitude_range.first < amplitude_range.second) || amplitude_range.first < 0.0) {
    throw ValidationError("synth: amplitude_range must be a nonempty nonnegative interval");
  }
  if (!(frequency_range.first <= frequency_range.second) ||
      std::floor(frequency_range.second) < std::max(1.0, std::ceil(frequency_range.first))) {
    throw ValidationError("synth: frequency_range must contain an integer >= 1");
  }
  if (!(noise_std >= 0.0)) throw ValidationError("synth: noise_std must be >= 0");
  if (!(mixing_strength >= 0.0 && mixing_strength <= 1.0)) {
    throw ValidationError("synth: mixing_strength must lie in [0, 1]");
  }
}

LabeledSynth synth_generate_labeled(const SynthSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples, dims = spec.n_features, steps = spec.n_timesteps;
  const std::size_t regimes = spec.n_regimes;
  Rng rng = make_rng(spec.seed, 0x51A7ULL);

  // Per-regime shape parameters.
  const double amp_lo = spec.amplitude_range.first;
  const double amp_width = (spec.amplitude_range.second - amp_lo) / static_cast<double>(regimes);
  const auto f_lo = static_cast<long>(std::max(1.0, std::ceil(spec.frequency_range.first)));
  const auto f_hi = static_cast<long>(std::floor(spec.frequency_range.second));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<long> freq(f_lo, f_hi);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> amp(regimes * dims), phase(regimes * dims), mix(regimes * dims * dims, 0.0);
  std::vector<long> frequency(regimes * dims);
  for (std::size_t r = 0; r < regimes; ++r) {
    for (std::size_t d = 0; d < dims; ++d) {
      amp[r * dims + d] = amp_lo + amp_width * (static_cast<double>(r) + unit(rng));
      frequency[r * dims + d] = freq(rng);
      phase[r * dims + d] = 2.0 * std::numbers::pi * unit(rng);
    }
    for (std::size_t d = 0; d < dims; ++d) {
      for (std::size_t e = 0; e < dims; ++e) {
        if (d != e) mix[(r * dims + d) * dims + e] = gauss(rng) / std::sqrt(static_cast<double>(dims));
      }
    }
  }

  LabeledSynth out;
  auto& ds = out.dataset;
  ds.name = "synthetic";
  for (std::size_t d = 0; d < dims; ++d) ds.feature_names.push_back("f" + std::to_string(d));
  ds.values = RealTensor(n, dims, steps);
  ds.raw_mask = MaskTensor(n, dims, steps, 1);
  out.regimes.resize(n);

  std::uniform_int_distribution<std::size_t> pick_regime(0, regimes - 1);
  std::vector<double> base(dims * steps);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = pick_regime(rng);
    const double psi = 2.0 * std::numbers::pi * unit(rng);
    out.regimes[i] = r;
    for (std::size_t d = 0; d < dims; ++d) {
      const double w = 2.0 * std::numbers::pi * static_cast<double>(frequency[r * dims + d]);
      for (std::size_t t = 0; t < steps; ++t) {
        base[d * steps + t] = amp[r * dims + d] *
            std::sin(w * static_cast<double>(t) / static_cast<double>(steps) + phase[r * dims + d] + psi);
      }
    }
    for (std::size_t d = 0; d < dims; ++d) {
      for (std::size_t t = 0; t < steps; ++t) {
        double mixed = 0.0;
        for (std::size_t e = 0; e < dims; ++e) mixed += mix[(r * dims + d) * dims + e] * base[e * steps + t];
        double x = base[d * steps + t] + spec.mixing_strength * mixed;
        if (spec.noise_std > 0.0) x += spec.noise_std * gauss(rng);
        ds.values(i, d, t) = x;
      }
    }
  }
  return out;
}

TimeSeriesDataset synth_generate(const SynthSpec& spec) { return synth_generate_labeled(spec).dataset; }

}  // namespace drio
