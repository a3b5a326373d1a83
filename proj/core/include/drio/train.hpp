#pragma once

#include <cstdint>
#include <vector>

#include "drio/data_model.hpp"
#include "drio/imputer.hpp"
#include "drio/ot.hpp"
#include "drio/random.hpp"

namespace drio {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Hyperparameters of the robust training loop. alpha = 1 (or K = 0) skips
/// the adversary entirely; alpha = 1 is plain reconstruction training.
/// Balanced transport ("BSH" variant) is sinkhorn.tau = SinkhornParams::kBalanced.
struct TrainConfig {
  double alpha = 0.5;
  double gamma = 1.0;
  std::size_t inner_steps = 5;
  double inner_lr = 0.01;
  double lr = 5e-4;
  double weight_decay = 1e-6;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  SinkhornParams sinkhorn{};
  AdamSettings adam{};
  // Halve the inner step (up to 10 times) whenever it would lower J.
  bool step_halving = true;
  // Fraction of each batch's visible entries hidden from the network input
  // (still scored by the reconstruction term). Without it the observed-entry
  // loss is minimized by copying the input.
  double input_drop = 0.3;

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One AdamW update in place: decoupled decay theta -= lr * wd * theta.
void adam_update(std::vector<double>& theta, const std::vector<double>& grad, AdamState& state,
                 const TrainConfig& cfg);

/// A training batch as the model sees it.
struct Batch {
  RealTensor x_obs;  // zeros where mask == 0
  MaskTensor mask;
  MaskTensor input_mask;  // subset of mask fed to the network; empty = mask
};

/// Network input of a batch: observed values under the input mask with the
/// remaining entries batch-mean filled. `view` is the mean-imputed batch
/// under the full mask (reused when no entries are dropped).
ImputerInput network_input(const Batch& batch, const MeanImputedView& view);

/// Hides round(drop * visible) uniformly chosen visible entries of the batch
/// from the network input (whole-batch draw).
MaskTensor drop_inputs(const MaskTensor& mask, double drop, Rng& rng);

struct AdversaryBatch {
  RealTensor Z;        // (B, D, T)
  RealTensor anchors;  // per-sample mean-imputed trajectories
  double transport_cost = 0.0;
  std::vector<double> objective_trace;  // J(Z_0), J(Z_1), ..., J(Z_K)
};

struct LossReport {
  double recon = 0.0;
  double sinkhorn_term = 0.0;
  double total = 0.0;
  std::size_t epoch = 0;
  std::size_t batch_index = 0;
};

struct DualBoundSpec {
  double rho = 0.1;
  std::vector<double> gamma_grid;
  std::size_t ascent_steps = 100;
  std::size_t restarts = 4;  // anchor init, imputed init, then random
  std::uint64_t seed = 0;

  void validate() const;
};

/// sum M (x_obs - g_raw)^2 / sum M over the whole batch.
double reconstruction_error(const Batch& batch, const ImputerOutput& out);

/// (1/B) sum_i ||anchors_i - Z_i||_F^2.
double transport_cost(const RealTensor& Z, const RealTensor& anchors);

/// Sinkhorn parameters with epsilon resolved: in adaptive mode it is
/// computed from `anchors` (the batch's mean-imputed cloud).
SinkhornParams resolve_sinkhorn(const SinkhornParams& p, const RealTensor& anchors);

/// Every Z_i set to the batch mean table; transport cost filled in.
AdversaryBatch init_adversary(const MeanImputedView& view);

/// J(Z) = S(Q_Z, P_theta) - gamma * C_Z with P_theta held fixed.
double objective_J(const AdversaryBatch& adv, const PointCloud& imputed, const TrainConfig& cfg);

/// K steps of plain gradient ascent on J starting from adv.Z.
AdversaryBatch inner_ascent(AdversaryBatch adv, const PointCloud& imputed, const TrainConfig& cfg);

/// Loss alpha R + (1 - alpha) S(Q_Z, P_theta) and its parameter gradient.
/// `z` may be null only when alpha == 1 (no transport term).
struct OuterLoss {
  LossAndGrad lg;
  double recon = 0.0;
  double sinkhorn_term = 0.0;
};
OuterLoss outer_loss_grad(const Batch& batch, const MeanImputedView& view, const RealTensor* z,
                          const ImputerParams& params, const TrainConfig& cfg);

/// outer_loss_grad followed by one optimizer step.
LossReport outer_step(const Batch& batch, const MeanImputedView& view, const RealTensor* z, ImputerParams& params,
                      AdamState& state, const TrainConfig& cfg);

struct TrainResult {
  ImputerParams params;
  std::vector<LossReport> history;
};

/// Robust training on the visible mask of `train`.
TrainResult train(const TimeSeriesDataset& train, const TrainConfig& cfg, const BackboneSpec& spec);

/// Same batching and optimizer, reconstruction loss only and no transport
/// computations at all. Reference for the alpha = 1 endpoint.
TrainResult train_reconstruction_only(const TimeSeriesDataset& train, const TrainConfig& cfg,
                                      const BackboneSpec& spec);

/// min over gamma in the grid of gamma * rho + (estimated) sup_Z J(Z).
/// The sup is a multi-restart ascent estimate. Small instances only.
double dual_bound_estimate(const RealTensor& anchors, const PointCloud& imputed, const DualBoundSpec& spec,
                           const TrainConfig& cfg);

}  // namespace drio
