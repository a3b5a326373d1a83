#include "drio/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "drio/error.hpp"
#include "drio/random.hpp"

namespace drio {

Mechanism parse_mechanism(std::string_view name) {
  if (name == "mcar" || name == "MCAR") return Mechanism::kMcar;
  if (name == "mnar" || name == "MNAR") return Mechanism::kMnar;
  throw ValidationError("unknown missingness mechanism '" + std::string(name) + "'");
}

std::string_view to_string(Mechanism m) { return m == Mechanism::kMcar ? "mcar" : "mnar"; }

void MissingSpec::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("missing ratio must lie in (0, 1)");
}

std::size_t masked_count(double ratio, std::size_t observed) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(observed) + 1e-9));
}

namespace {

std::vector<std::size_t> observed_positions(const MaskTensor& mask, std::size_t i) {
  std::vector<std::size_t> idx;
  const auto row = mask.sample(i);
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (row[k]) idx.push_back(k);
  }
  return idx;
}

// Shared driver: `choose` picks which of the observed positions to hide.
template <typename Choose>
MaskPair mask_per_sample(const TimeSeriesDataset& ds, const MissingSpec& spec, Choose&& choose) {
  spec.validate();
  MaskPair pair{ds.raw_mask, ds.raw_mask, spec};
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto observed = observed_positions(ds.raw_mask, i);
    const std::size_t k = masked_count(spec.ratio, observed.size());
    if (k == 0) continue;
    Rng rng = make_rng(spec.seed, i);
    auto row = pair.gt_mask.sample(i);
    for (std::size_t pos : choose(i, observed, k, rng)) row[pos] = 0;
  }
  return pair;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

MaskPair apply_mcar(const TimeSeriesDataset& ds, const MissingSpec& spec) {
  return mask_per_sample(ds, spec, [](std::size_t, std::vector<std::size_t> observed, std::size_t k, Rng& rng) {
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for (std::size_t j = 0; j < k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, observed.size() - 1);
      std::swap(observed[j], observed[pick(rng)]);
    }
    observed.resize(k);
    return observed;
  });
}

RealTensor mnar_weights(const TimeSeriesDataset& ds) {
  const Shape3 s = ds.shape();
  RealTensor w(s, 0.0);
  for (std::size_t d = 0; d < s.d; ++d) {
    double count = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t t = 0; t < s.t; ++t) {
        if (ds.raw_mask(i, d, t)) {
          count += 1.0;
          sum += ds.values(i, d, t);
        }
      }
    }
    if (count == 0.0) continue;
    const double mean = sum / count;
    double ss = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t t = 0; t < s.t; ++t) {
        if (ds.raw_mask(i, d, t)) ss += (ds.values(i, d, t) - mean) * (ds.values(i, d, t) - mean);
      }
    }
    const double sd = std::sqrt(ss / count);
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t t = 0; t < s.t; ++t) {
        if (!ds.raw_mask(i, d, t)) continue;
        const double z = sd > 0.0 ? (ds.values(i, d, t) - mean) / sd : 0.0;
        w(i, d, t) = standard_normal_cdf(std::abs(z));
      }
    }
  }
  return w;
}

MaskPair apply_mnar(const TimeSeriesDataset& ds, const MissingSpec& spec) {
  const RealTensor weights = mnar_weights(ds);
  return mask_per_sample(ds, spec,
                         [&weights](std::size_t i, const std::vector<std::size_t>& observed, std::size_t k, Rng& rng) {
    // Efraimidis-Spirakis: keep the k smallest E_j / w_j, E_j ~ Exp(1).
    // Normalizing w within the sample does not change the ordering.
    std::exponential_distribution<double> expo(1.0);
    const auto w = weights.sample(i);
    std::vector<std::pair<double, std::size_t>> keys;
    keys.reserve(observed.size());
    for (std::size_t pos : observed) keys.emplace_back(expo(rng) / w[pos], pos);
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
    std::vector<std::size_t> chosen(k);
    for (std::size_t j = 0; j < k; ++j) chosen[j] = keys[j].second;
    return chosen;
  });
}

MaskPair apply_missingness(const TimeSeriesDataset& ds, const MissingSpec& spec) {
  return spec.mechanism == Mechanism::kMcar ? apply_mcar(ds, spec) : apply_mnar(ds, spec);
}

EffectiveMasks compose_training_mask(const MaskTensor& raw_mask, const MaskTensor& gt_mask) {
  if (!(raw_mask.shape() == gt_mask.shape())) throw ValidationError("compose_training_mask: shape mismatch");
  EffectiveMasks out{gt_mask, MaskTensor(raw_mask.shape(), 0)};
  for (std::size_t k = 0; k < raw_mask.size(); ++k) out.eval_mask[k] = (raw_mask[k] && !gt_mask[k]) ? 1 : 0;
  return out;
}

EffectiveMasks compose_training_mask(const MaskPair& pair) {
  return compose_training_mask(pair.raw_mask, pair.gt_mask);
}

}  // namespace drio
