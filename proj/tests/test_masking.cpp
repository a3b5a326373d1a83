#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/chi_squared.hpp>

#include "drio/error.hpp"
#include "drio/masking.hpp"

using namespace drio;

namespace {

TimeSeriesDataset ramp(std::size_t n, std::size_t d, std::size_t t) {
  TimeSeriesDataset ds;
  ds.name = "ramp";
  for (std::size_t f = 0; f < d; ++f) ds.feature_names.push_back("f");
  ds.values = RealTensor(n, d, t);
  ds.raw_mask = MaskTensor(n, d, t, 1);
  for (std::size_t k = 0; k < ds.values.size(); ++k) ds.values[k] = std::cos(0.37 * static_cast<double>(k));
  return ds;
}

std::size_t hidden_in_sample(const MaskPair& p, std::size_t i) {
  std::size_t c = 0;
  const auto raw = p.raw_mask.sample(i), gt = p.gt_mask.sample(i);
  for (std::size_t k = 0; k < raw.size(); ++k) c += raw[k] && !gt[k];
  return c;
}

}  // namespace

TEST(MaskedCount, FloorSemantics) {
  EXPECT_EQ(masked_count(0.5, 10), 5u);
  EXPECT_EQ(masked_count(0.1, 9), 0u);
  EXPECT_EQ(masked_count(0.9, 10), 9u);
  EXPECT_EQ(masked_count(0.7, 10), 7u);
}

TEST(Masking, SpecValidation) {
  MissingSpec s;
  s.ratio = 0.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s.ratio = 1.0;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_EQ(parse_mechanism("mnar"), Mechanism::kMnar);
  EXPECT_THROW(parse_mechanism("mar"), ValidationError);
}

TEST(Masking, ExactCountsBothMechanismsWithRaggedObservation) {
  TimeSeriesDataset ds = ramp(6, 2, 5);
  // Sample i has i unobserved entries; sample 5 has none observed beyond 5.
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      ds.raw_mask.sample(i)[k] = 0;
      ds.values.sample(i)[k] = 0.0;
    }
  }
  for (Mechanism mech : {Mechanism::kMcar, Mechanism::kMnar}) {
    for (double r : {0.1, 0.5, 0.9}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MaskPair p = apply_missingness(ds, MissingSpec{mech, r, seed});
        for (std::size_t i = 0; i < 6; ++i) {
          const std::size_t observed = 10 - i;
          EXPECT_EQ(hidden_in_sample(p, i), masked_count(r, observed));
        }
        for (std::size_t k = 0; k < p.gt_mask.size(); ++k) {
          if (p.gt_mask[k]) {
            EXPECT_EQ(p.raw_mask[k], 1);
          }
        }
      }
    }
  }
}

TEST(Masking, SeedDeterminism) {
  const TimeSeriesDataset ds = ramp(4, 3, 6);
  for (Mechanism mech : {Mechanism::kMcar, Mechanism::kMnar}) {
    const MaskPair a = apply_missingness(ds, MissingSpec{mech, 0.5, 7});
    const MaskPair b = apply_missingness(ds, MissingSpec{mech, 0.5, 7});
    const MaskPair c = apply_missingness(ds, MissingSpec{mech, 0.5, 8});
    EXPECT_EQ(a.gt_mask, b.gt_mask);
    EXPECT_NE(a.gt_mask, c.gt_mask);
  }
}

TEST(Masking, MnarWeights) {
  TimeSeriesDataset ds = ramp(1, 1, 3);
  // Values {-1, 0, 1}: mean 0, population std sqrt(2/3).
  ds.values(0, 0, 0) = -1.0;
  ds.values(0, 0, 1) = 0.0;
  ds.values(0, 0, 2) = 1.0;
  const RealTensor w = mnar_weights(ds);
  EXPECT_DOUBLE_EQ(w(0, 0, 1), 0.5);
  const double z = 1.0 / std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(w(0, 0, 2), 0.5 * std::erfc(-z / std::sqrt(2.0)), 1e-15);
  EXPECT_DOUBLE_EQ(w(0, 0, 0), w(0, 0, 2));

  // Two values {-3, 3}: population std 3, so z = +-1 and the weight is Phi(1).
  TimeSeriesDataset two = ramp(1, 1, 2);
  two.values(0, 0, 0) = -3.0;
  two.values(0, 0, 1) = 3.0;
  EXPECT_NEAR(mnar_weights(two)(0, 0, 1), 0.841344746, 1e-9);

  TimeSeriesDataset flat = ramp(2, 1, 2);
  for (std::size_t k = 0; k < flat.values.size(); ++k) flat.values[k] = 4.0;
  for (std::size_t k = 0; k < flat.values.size(); ++k) EXPECT_EQ(mnar_weights(flat)[k], 0.5);
}

TEST(Masking, MnarWithTiedValuesBehavesLikeMcarCounts) {
  TimeSeriesDataset ds = ramp(1, 1, 10);
  for (std::size_t k = 0; k < 10; ++k) ds.values[k] = 2.0;
  const MaskPair p = apply_mnar(ds, MissingSpec{Mechanism::kMnar, 0.9, 3});
  EXPECT_EQ(hidden_in_sample(p, 0), 9u);
}

TEST(Masking, McarChiSquareUniformity) {
  const TimeSeriesDataset ds = ramp(5, 2, 10);
  const std::size_t seeds = 1000, cells = 20;
  std::vector<double> hits(ds.values.size(), 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const MaskPair p = apply_mcar(ds, MissingSpec{Mechanism::kMcar, 0.5, s});
    for (std::size_t k = 0; k < hits.size(); ++k) hits[k] += p.gt_mask[k] ? 0.0 : 1.0;
  }
  // Each sample hides 10 of its 20 cells per seed, so a cell is hit
  // Binomial(seeds, 1/2) times; counts within a sample sum to a constant,
  // which the (cells - 1) / cells factor accounts for.
  const double p_hit = 0.5, expected = seeds * p_hit;
  double stat = 0.0;
  for (double h : hits) stat += (h - expected) * (h - expected) / (expected * (1.0 - p_hit));
  stat *= static_cast<double>(cells - 1) / static_cast<double>(cells);
  const boost::math::chi_squared dist(static_cast<double>(5 * (cells - 1)));
  const double p_value = boost::math::cdf(boost::math::complement(dist, stat));
  EXPECT_GT(p_value, 0.001) << "chi2 = " << stat;
}

TEST(Masking, ComposeTrainingMask) {
  MaskTensor raw(1, 1, 3, 1), gt(1, 1, 3, 1);
  EXPECT_EQ(count_ones(compose_training_mask(raw, gt).eval_mask), 0u);
  gt[1] = 0;
  raw[2] = 0;
  gt[2] = 0;
  const EffectiveMasks m = compose_training_mask(raw, gt);
  EXPECT_EQ(m.eval_mask[1], 1);
  EXPECT_EQ(m.eval_mask[2], 0);
  EXPECT_EQ(m.train_mask, gt);
}
