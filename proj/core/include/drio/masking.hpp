#pragma once

#include <cstdint>
#include <string_view>

#include "drio/data_model.hpp"

namespace drio {

enum class Mechanism { kMcar, kMnar };

Mechanism parse_mechanism(std::string_view name);
std::string_view to_string(Mechanism m);

struct MissingSpec {
  Mechanism mechanism = Mechanism::kMcar;
  double ratio = 0.5;  // in (0, 1)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Raw observation mask plus the artificial mask layered on top of it.
/// gt_mask(i,d,t) == 1 implies raw_mask(i,d,t) == 1.
struct MaskPair {
  MaskTensor raw_mask;
  MaskTensor gt_mask;
  MissingSpec spec;
};

/// floor(ratio * observed) with a small guard against binary round-off
/// (0.7 * 10 must give 7).
std::size_t masked_count(double ratio, std::size_t observed);

/// Per sample, hides exactly masked_count(r, |I_i|) observed entries chosen
/// uniformly without replacement.
MaskPair apply_mcar(const TimeSeriesDataset& ds, const MissingSpec& spec);

/// Phi(|z|) with z the feature-wise z-score over all observed entries
/// (across samples and time). Unobserved positions get weight 0; features
/// with zero spread get 0.5 everywhere they are observed.
RealTensor mnar_weights(const TimeSeriesDataset& ds);

/// Per sample, hides masked_count(r, |I_i|) observed entries drawn without
/// replacement with probability proportional to mnar_weights, normalized
/// within the sample (exponential-key sampling).
MaskPair apply_mnar(const TimeSeriesDataset& ds, const MissingSpec& spec);

/// Dispatches on spec.mechanism.
MaskPair apply_missingness(const TimeSeriesDataset& ds, const MissingSpec& spec);

struct EffectiveMasks {
  MaskTensor train_mask;  // entries the model may see (= gt_mask)
  MaskTensor eval_mask;   // raw & !gt: hidden entries with ground truth
};

EffectiveMasks compose_training_mask(const MaskPair& pair);
EffectiveMasks compose_training_mask(const MaskTensor& raw_mask, const MaskTensor& gt_mask);

}  // namespace drio
