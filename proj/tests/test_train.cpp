#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "drio/error.hpp"
#include "drio/masking.hpp"
#include "drio/train.hpp"

using namespace drio;

namespace {

TimeSeriesDataset masked_synth(std::size_t n, std::size_t d, std::size_t t, std::uint64_t seed, double ratio = 0.3) {
  SynthSpec s;
  s.n_samples = n;
  s.n_features = d;
  s.n_timesteps = t;
  s.seed = seed;
  TimeSeriesDataset ds = synth_generate(s);
  MissingSpec m;
  m.ratio = ratio;
  m.seed = seed;
  ds.gt_mask = apply_missingness(ds, m).gt_mask;
  return ds;
}

BackboneSpec small_backbone(std::size_t d, BackboneKind kind = BackboneKind::kMlp) {
  BackboneSpec b;
  b.kind = kind;
  b.n_features = d;
  b.hidden_dim = 6;
  b.layers = 1;
  b.activation = Activation::kTanh;
  b.seed = 3;
  return b;
}

Batch batch_of(const TimeSeriesDataset& ds) {
  Batch b;
  b.mask = ds.visible_mask();
  b.x_obs = apply_mask(ds.values, b.mask);
  return b;
}

}  // namespace

TEST(Train, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.input_drop = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = TrainConfig{};
  c.gamma = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Train, ReconstructionErrorExamples) {
  Batch b;
  b.x_obs = RealTensor(1, 1, 3);
  b.mask = MaskTensor(1, 1, 3);
  ImputerOutput out{RealTensor(1, 1, 3), RealTensor(1, 1, 3)};
  b.x_obs[0] = 1.0;
  b.mask[0] = 1;
  out.g_raw[0] = 4.0;
  out.g_raw[1] = 100.0;  // unobserved, ignored
  EXPECT_DOUBLE_EQ(reconstruction_error(b, out), 9.0);
  b.x_obs[2] = 2.0;
  b.mask[2] = 1;
  out.g_raw[2] = 0.0;
  out.g_raw[0] = 2.0;
  EXPECT_DOUBLE_EQ(reconstruction_error(b, out), 2.5);  // (1 + 4) / 2
  b.mask = MaskTensor(1, 1, 3);
  EXPECT_THROW(reconstruction_error(b, out), ValidationError);
}

TEST(Train, TransportCostAndInitialAdversary) {
  RealTensor z(2, 1, 2), a(2, 1, 2);
  a[0] = 1;
  a[3] = 2;
  EXPECT_DOUBLE_EQ(transport_cost(z, a), (1.0 + 4.0) / 2.0);

  const TimeSeriesDataset ds = masked_synth(5, 2, 3, 1);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  const AdversaryBatch adv = init_adversary(view);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(adv.Z.sample(i)[k], view.mean_table[k]);
  }
  EXPECT_EQ(adv.anchors, view.values);
  EXPECT_DOUBLE_EQ(adv.transport_cost, transport_cost(adv.Z, view.values));
}

TEST(Train, AdamFirstStep) {
  TrainConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.0;
  std::vector<double> theta{1.0, -1.0};
  AdamState st;
  adam_update(theta, {2.0, -0.5}, st, c);
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(theta[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(theta[1], -1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1u);

  c.weight_decay = 0.5;
  std::vector<double> w{2.0};
  AdamState s2;
  adam_update(w, {0.0}, s2, c);
  EXPECT_DOUBLE_EQ(w[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Train, DropInputs) {
  MaskTensor m(2, 3, 5, 1);
  m[4] = 0;
  m[7] = 0;  // 28 visible
  Rng r1 = make_rng(5), r2 = make_rng(5);
  const MaskTensor a = drop_inputs(m, 0.25, r1);
  EXPECT_EQ(a, drop_inputs(m, 0.25, r2));
  EXPECT_EQ(count_ones(a), 28u - 7u);
  for (std::size_t k = 0; k < m.size(); ++k) EXPECT_LE(a[k], m[k]);
  Rng r3 = make_rng(5);
  EXPECT_EQ(drop_inputs(m, 0.0, r3), m);
}

TEST(Train, NetworkInputUsesInputMask) {
  const TimeSeriesDataset ds = masked_synth(4, 2, 3, 2);
  Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  ImputerInput plain = network_input(b, view);
  EXPECT_EQ(plain.x_filled, view.values);
  EXPECT_EQ(plain.mask, b.mask);

  Rng rng = make_rng(9);
  b.input_mask = drop_inputs(b.mask, 0.5, rng);
  const ImputerInput dropped = network_input(b, view);
  EXPECT_EQ(dropped.mask, b.input_mask);
  const MeanImputedView expect = batch_mean_impute(apply_mask(b.x_obs, b.input_mask), b.input_mask);
  EXPECT_EQ(dropped.x_filled, expect.values);
}

TEST(Train, ObjectiveAtStartIsDivergenceMinusPenalty) {
  const TimeSeriesDataset ds = masked_synth(6, 2, 3, 3);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  const ImputerParams p = init_params(small_backbone(2));
  const PointCloud imputed = PointCloud::from_samples(forward(p, network_input(b, view)).x_hat);
  TrainConfig c;
  c.gamma = 2.5;
  AdversaryBatch adv = init_adversary(view);
  const SinkhornParams sk = resolve_sinkhorn(c.sinkhorn, view.values);
  const double s = sinkhorn_divergence(PointCloud::from_samples(adv.Z), imputed, sk);
  EXPECT_NEAR(objective_J(adv, imputed, c), s - 2.5 * adv.transport_cost, 1e-12);

  // Zero steps leave Z untouched and record only J(Z_0).
  c.inner_steps = 0;
  const AdversaryBatch same = inner_ascent(adv, imputed, c);
  EXPECT_EQ(same.Z, adv.Z);
  ASSERT_EQ(same.objective_trace.size(), 1u);
  EXPECT_NEAR(same.objective_trace[0], s - 2.5 * adv.transport_cost, 1e-12);
}

TEST(Train, AdaptiveEpsilonResolvedFromAnchors) {
  const TimeSeriesDataset ds = masked_synth(6, 2, 3, 4);
  const RealTensor anchors = batch_mean_impute(ds.values, ds.visible_mask()).values;
  SinkhornParams p;
  p.epsilon_mode = EpsilonMode::kAdaptive;
  EXPECT_DOUBLE_EQ(resolve_sinkhorn(p, anchors).epsilon, adaptive_epsilon(PointCloud::from_samples(anchors)));
  p.epsilon_mode = EpsilonMode::kFixed;
  p.epsilon = 0.37;
  EXPECT_EQ(resolve_sinkhorn(p, anchors).epsilon, 0.37);
}

TEST(Train, InnerTraceNondecreasing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TimeSeriesDataset ds = masked_synth(6, 2, 4, 100 + seed, 0.5);
    const Batch b = batch_of(ds);
    const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
    const ImputerParams p = init_params(small_backbone(2));
    const PointCloud imputed = PointCloud::from_samples(forward(p, network_input(b, view)).x_hat);
    TrainConfig c;
    c.inner_steps = 8;
    c.inner_lr = 0.5;  // large enough that halving is exercised
    c.gamma = 0.5 + static_cast<double>(seed);
    const AdversaryBatch adv = inner_ascent(init_adversary(view), imputed, c);
    ASSERT_EQ(adv.objective_trace.size(), 9u);
    for (std::size_t k = 1; k < adv.objective_trace.size(); ++k) {
      EXPECT_GE(adv.objective_trace[k], adv.objective_trace[k - 1]);
    }
    EXPECT_NEAR(adv.objective_trace.back(), objective_J(adv, imputed, c), 1e-12);
  }
}

TEST(Train, HugeGammaPullsAdversaryTowardAnchors) {
  const TimeSeriesDataset ds = masked_synth(6, 2, 3, 5, 0.5);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  const ImputerParams p = init_params(small_backbone(2));
  const PointCloud imputed = PointCloud::from_samples(forward(p, network_input(b, view)).x_hat);
  TrainConfig c;
  c.gamma = 1e6;
  c.inner_steps = 20;
  c.inner_lr = 1e-6;
  const AdversaryBatch start = init_adversary(view);
  const AdversaryBatch adv = inner_ascent(start, imputed, c);
  ASSERT_GT(start.transport_cost, 0.0);
  EXPECT_LT(adv.transport_cost, 1e-3 * start.transport_cost);
}

TEST(Train, OuterLossMatchesComponents) {
  const TimeSeriesDataset ds = masked_synth(6, 2, 3, 6);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  const ImputerParams p = init_params(small_backbone(2));
  const AdversaryBatch adv = init_adversary(view);
  for (double alpha : {0.0, 0.3, 0.99, 1.0}) {
    TrainConfig c;
    c.alpha = alpha;
    const OuterLoss ol = outer_loss_grad(b, view, &adv.Z, p, c);
    const ImputerOutput out = forward(p, network_input(b, view));
    EXPECT_NEAR(ol.recon, reconstruction_error(b, out), 1e-12);
    const double s = sinkhorn_divergence(PointCloud::from_samples(adv.Z), PointCloud::from_samples(out.x_hat),
                                         resolve_sinkhorn(c.sinkhorn, view.values));
    EXPECT_NEAR(ol.sinkhorn_term, s, 1e-12);
    EXPECT_NEAR(ol.lg.loss, alpha * ol.recon + (1 - alpha) * ol.sinkhorn_term, 1e-12);
  }
  TrainConfig c;
  EXPECT_THROW(outer_loss_grad(b, view, nullptr, p, c), ValidationError);
}

TEST(Train, OuterGradientIsDescentDirection) {
  const TimeSeriesDataset ds = masked_synth(6, 2, 3, 7);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  ImputerParams p = init_params(small_backbone(2, BackboneKind::kBiRnn));
  const AdversaryBatch adv = init_adversary(view);
  TrainConfig c;
  c.alpha = 0.5;
  const OuterLoss ol = outer_loss_grad(b, view, &adv.Z, p, c);
  double norm2 = 0;
  for (double g : ol.lg.grad) norm2 += g * g;
  ASSERT_GT(norm2, 0.0);
  const double h = 1e-4;
  ImputerParams q = p;
  for (std::size_t k = 0; k < q.flat.size(); ++k) q.flat[k] -= h * ol.lg.grad[k];
  const double after = outer_loss_grad(b, view, &adv.Z, q, c).lg.loss;
  EXPECT_LT(after, ol.lg.loss);
  EXPECT_NEAR((ol.lg.loss - after) / (h * norm2), 1.0, 1e-2);
}

TEST(Train, AlphaOneMatchesReconstructionOnlyBitwise) {
  const TimeSeriesDataset ds = masked_synth(10, 2, 4, 8);
  TrainConfig c;
  c.alpha = 1.0;
  c.epochs = 3;
  c.batch_size = 4;
  c.lr = 1e-2;
  c.input_drop = 0.2;
  for (BackboneKind kind : {BackboneKind::kMlp, BackboneKind::kBiRnn}) {
    const TrainResult a = train(ds, c, small_backbone(2, kind));
    const TrainResult b = train_reconstruction_only(ds, c, small_backbone(2, kind));
    EXPECT_EQ(a.params.flat, b.params.flat);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t k = 0; k < a.history.size(); ++k) EXPECT_EQ(a.history[k].recon, b.history[k].recon);
  }
}

TEST(Train, HistoryShapeAndDeterminism) {
  const TimeSeriesDataset ds = masked_synth(10, 2, 4, 9);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;  // 4 + 4 + 2, short batch kept
  c.inner_steps = 2;
  const TrainResult a = train(ds, c, small_backbone(2));
  const TrainResult b = train(ds, c, small_backbone(2));
  EXPECT_EQ(a.params.flat, b.params.flat);
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_EQ(a.history[5].epoch, 1u);
  EXPECT_EQ(a.history[5].batch_index, 2u);
  for (const LossReport& r : a.history) {
    EXPECT_NEAR(r.total, c.alpha * r.recon + (1 - c.alpha) * r.sinkhorn_term, 1e-12);
  }
  c.seed = 1;
  EXPECT_NE(train(ds, c, small_backbone(2)).params.flat, a.params.flat);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  const TimeSeriesDataset ds = masked_synth(4, 2, 3, 10);
  TrainConfig c;
  c.epochs = 0;
  const TrainResult r = train(ds, c, small_backbone(2));
  EXPECT_EQ(r.params.flat, init_params(small_backbone(2)).flat);
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, RejectsFeatureMismatch) {
  const TimeSeriesDataset ds = masked_synth(4, 2, 3, 11);
  EXPECT_THROW(train(ds, TrainConfig{}, small_backbone(3)), ValidationError);
}

TEST(Train, LossDecreasesOnTinySynthetic) {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TimeSeriesDataset ds = masked_synth(8, 2, 6, 200 + seed);
    TrainConfig c;
    c.seed = seed;
    c.epochs = 2;
    c.batch_size = 8;
    c.lr = 1e-2;
    const TrainResult r = train(ds, c, small_backbone(2));
    ASSERT_EQ(r.history.size(), 2u);
    if (r.history[1].total < r.history[0].total) ++decreased;
  }
  EXPECT_GE(decreased, 4);
}

TEST(Train, DualBoundMonotoneAndDominatesSampledMeasures) {
  const TimeSeriesDataset ds = masked_synth(4, 2, 2, 12, 0.5);
  const Batch b = batch_of(ds);
  const MeanImputedView view = batch_mean_impute(b.x_obs, b.mask);
  const PointCloud imputed =
      PointCloud::from_samples(forward(init_params(small_backbone(2)), network_input(b, view)).x_hat);
  TrainConfig c;
  c.inner_lr = 0.05;
  DualBoundSpec spec;
  spec.gamma_grid = {0.5, 1.0, 2.0, 5.0};
  spec.ascent_steps = 60;
  double prev = -1e300;
  for (double rho : {0.01, 0.1, 0.5}) {
    spec.rho = rho;
    const double bound = dual_bound_estimate(view.values, imputed, spec, c);
    EXPECT_GE(bound, prev);
    prev = bound;

    // Q = anchors + delta with mean squared displacement <= rho is feasible.
    Rng rng = make_rng(77, static_cast<std::uint64_t>(rho * 1000));
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const SinkhornParams sk = resolve_sinkhorn(c.sinkhorn, view.values);
    for (int s = 0; s < 30; ++s) {
      RealTensor q(view.values.shape());
      for (auto& v : q.storage()) v = g(rng);
      const double scale = std::sqrt(rho * u(rng) / transport_cost(q, RealTensor(q.shape())));
      for (std::size_t k = 0; k < q.size(); ++k) q[k] = view.values[k] + scale * q[k];
      ASSERT_LE(transport_cost(q, view.values), rho * (1 + 1e-12));
      EXPECT_LE(sinkhorn_divergence(PointCloud::from_samples(q), imputed, sk), bound + 1e-2);
    }
  }
  spec.gamma_grid.clear();
  EXPECT_THROW(dual_bound_estimate(view.values, imputed, spec, c), ValidationError);
}

TEST(Train, DualBoundRejectsLargeInstances) {
  const TimeSeriesDataset ds = masked_synth(9, 2, 2, 13);
  const RealTensor anchors = batch_mean_impute(ds.values, ds.visible_mask()).values;
  DualBoundSpec spec;
  spec.gamma_grid = {1.0};
  EXPECT_THROW(dual_bound_estimate(anchors, PointCloud::from_samples(anchors), spec, TrainConfig{}),
               ValidationError);
}
