#include "drio/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "drio/error.hpp"
#include "drio/random.hpp"

namespace drio {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("train config: alpha must lie in [0, 1]");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("train config: gamma must be >= 0");
  if (!(inner_lr > 0.0)) throw ValidationError("train config: inner_lr must be > 0");
  if (!(lr > 0.0)) throw ValidationError("train config: lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be >= 0");
  if (!(input_drop >= 0.0 && input_drop < 1.0)) throw ValidationError("train config: input_drop must lie in [0, 1)");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw ValidationError("train config: bad adam constants");
  }
  sinkhorn.validate();
}

void DualBoundSpec::validate() const {
  if (!(rho > 0.0)) throw ValidationError("dual bound: rho must be > 0");
  if (gamma_grid.empty()) throw ValidationError("dual bound: empty gamma grid");
  for (double g : gamma_grid) {
    if (!(g >= 0.0)) throw ValidationError("dual bound: gamma must be >= 0");
  }
  if (restarts < 1) throw ValidationError("dual bound: restarts must be >= 1");
}

void adam_update(std::vector<double>& theta, const std::vector<double>& grad, AdamState& state,
                 const TrainConfig& cfg) {
  if (state.m.size() != theta.size()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double b1 = cfg.adam.beta1, b2 = cfg.adam.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    state.m[k] = b1 * state.m[k] + (1.0 - b1) * grad[k];
    state.v[k] = b2 * state.v[k] + (1.0 - b2) * grad[k] * grad[k];
    const double mh = state.m[k] / c1, vh = state.v[k] / c2;
    theta[k] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.adam.eps) + cfg.weight_decay * theta[k]);
  }
}

ImputerInput network_input(const Batch& batch, const MeanImputedView& view) {
  if (batch.input_mask.empty()) return ImputerInput{view.values, batch.mask};
  const MeanImputedView in = batch_mean_impute(apply_mask(batch.x_obs, batch.input_mask), batch.input_mask);
  return ImputerInput{in.values, batch.input_mask};
}

MaskTensor drop_inputs(const MaskTensor& mask, double drop, Rng& rng) {
  std::vector<std::size_t> visible;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) visible.push_back(k);
  }
  const auto hide = static_cast<std::size_t>(std::llround(drop * static_cast<double>(visible.size())));
  MaskTensor out = mask;
  // Partial Fisher-Yates: the first `hide` slots become the hidden set.
  for (std::size_t k = 0; k < hide && k < visible.size(); ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, visible.size() - 1);
    std::swap(visible[k], visible[pick(rng)]);
    out[visible[k]] = 0;
  }
  return out;
}

double reconstruction_error(const Batch& batch, const ImputerOutput& out) {
  require_binary(batch.mask, "reconstruction_error");
  if (!(batch.x_obs.shape() == out.g_raw.shape()) || !(batch.mask.shape() == out.g_raw.shape())) {
    throw ValidationError("reconstruction_error: shape mismatch");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < out.g_raw.size(); ++k) {
    if (!batch.mask[k]) continue;
    const double e = batch.x_obs[k] - out.g_raw[k];
    sum += e * e;
    ++count;
  }
  if (count == 0) throw ValidationError("reconstruction_error: batch has no observed entries");
  return sum / static_cast<double>(count);
}

double transport_cost(const RealTensor& Z, const RealTensor& anchors) {
  if (!(Z.shape() == anchors.shape())) throw ValidationError("transport_cost: shape mismatch");
  if (Z.n() == 0) throw ValidationError("transport_cost: empty batch");
  double sum = 0.0;
  for (std::size_t k = 0; k < Z.size(); ++k) {
    const double e = anchors[k] - Z[k];
    sum += e * e;
  }
  return sum / static_cast<double>(Z.n());
}

SinkhornParams resolve_sinkhorn(const SinkhornParams& p, const RealTensor& anchors) {
  SinkhornParams out = p;
  if (p.epsilon_mode == EpsilonMode::kAdaptive) {
    out.epsilon = adaptive_epsilon(PointCloud::from_samples(anchors));
    out.epsilon_mode = EpsilonMode::kFixed;
  }
  return out;
}

AdversaryBatch init_adversary(const MeanImputedView& view) {
  AdversaryBatch adv;
  adv.anchors = view.values;
  adv.Z = RealTensor(view.values.shape());
  for (std::size_t i = 0; i < adv.Z.n(); ++i) {
    auto zi = adv.Z.sample(i);
    auto mean = view.mean_table.sample(0);
    std::copy(mean.begin(), mean.end(), zi.begin());
  }
  adv.transport_cost = transport_cost(adv.Z, adv.anchors);
  return adv;
}

namespace {

struct JValue {
  double value = 0.0;
  std::vector<double> grad;
};

JValue eval_J(const RealTensor& Z, const RealTensor& anchors, const FixedTargetDivergence& div, double gamma,
              bool with_grad) {
  const DivergenceWithGrad s = div.evaluate(PointCloud::from_samples(Z), with_grad);
  JValue out;
  out.value = s.value - gamma * transport_cost(Z, anchors);
  if (with_grad) {
    out.grad = s.grad;
    const double scale = 2.0 * gamma / static_cast<double>(Z.n());
    for (std::size_t k = 0; k < Z.size(); ++k) out.grad[k] += scale * (anchors[k] - Z[k]);
    for (double g : out.grad) {
      if (!std::isfinite(g)) throw Error("inner ascent: non-finite gradient of J");
    }
  }
  if (!std::isfinite(out.value)) throw Error("inner ascent: non-finite objective J");
  return out;
}

// Gradient ascent with optional halving on decrease. `grow` > 1 lets the
// step recover after accepted moves (used by the dual-bound search).
void ascend(AdversaryBatch& adv, const FixedTargetDivergence& div, double gamma, std::size_t steps, double lr,
            bool halving, int max_halvings, double grow) {
  JValue cur = eval_J(adv.Z, adv.anchors, div, gamma, true);
  adv.objective_trace.push_back(cur.value);
  for (std::size_t k = 0; k < steps; ++k) {
    double step = lr;
    bool accepted = false;
    RealTensor trial = adv.Z;
    JValue next;
    for (int h = 0; h <= max_halvings; ++h) {
      for (std::size_t e = 0; e < trial.size(); ++e) trial[e] = adv.Z[e] + step * cur.grad[e];
      next = eval_J(trial, adv.anchors, div, gamma, true);
      if (!halving || next.value >= cur.value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (accepted) {
      adv.Z = std::move(trial);
      cur = std::move(next);
      if (halving) lr = step * grow;
    }
    adv.objective_trace.push_back(cur.value);
  }
  adv.transport_cost = transport_cost(adv.Z, adv.anchors);
}

Batch make_batch(const TimeSeriesDataset& ds, std::span<const std::size_t> idx, const TrainConfig& cfg,
                 std::size_t epoch, std::size_t b) {
  Batch batch;
  batch.mask = gather_samples(ds.visible_mask(), idx);
  batch.x_obs = apply_mask(gather_samples(ds.values, idx), batch.mask);
  if (cfg.input_drop > 0.0) {
    Rng rng = make_rng(cfg.seed, (std::uint64_t{epoch} << 32) + b + 1);
    batch.input_mask = drop_inputs(batch.mask, cfg.input_drop, rng);
  }
  return batch;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0xE90C0000ULL + epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  }
  return out;
}

void check_train_split(const TimeSeriesDataset& ds, const BackboneSpec& spec) {
  if (ds.n() == 0) throw ValidationError("train: empty training split");
  ds.validate();
  if (ds.shape().d != spec.n_features) throw ValidationError("train: backbone n_features does not match dataset");
}

}  // namespace

double objective_J(const AdversaryBatch& adv, const PointCloud& imputed, const TrainConfig& cfg) {
  const FixedTargetDivergence div(imputed, resolve_sinkhorn(cfg.sinkhorn, adv.anchors));
  return eval_J(adv.Z, adv.anchors, div, cfg.gamma, false).value;
}

AdversaryBatch inner_ascent(AdversaryBatch adv, const PointCloud& imputed, const TrainConfig& cfg) {
  adv.objective_trace.clear();
  if (cfg.inner_steps == 0) {
    adv.objective_trace.push_back(objective_J(adv, imputed, cfg));
    adv.transport_cost = transport_cost(adv.Z, adv.anchors);
    return adv;
  }
  const FixedTargetDivergence div(imputed, resolve_sinkhorn(cfg.sinkhorn, adv.anchors));
  ascend(adv, div, cfg.gamma, cfg.inner_steps, cfg.inner_lr, cfg.step_halving, 10, 1.0);
  return adv;
}

OuterLoss outer_loss_grad(const Batch& batch, const MeanImputedView& view, const RealTensor* z,
                          const ImputerParams& params, const TrainConfig& cfg) {
  const double alpha = cfg.alpha;
  const bool with_transport = z != nullptr;
  if (!with_transport && alpha != 1.0) throw ValidationError("outer step: adversary batch required when alpha < 1");
  const SinkhornParams sk = resolve_sinkhorn(cfg.sinkhorn, view.values);

  OuterLoss res;
  const LossClosure closure = [&](const ImputerOutput& out) {
    OutputLoss loss;
    res.recon = reconstruction_error(batch, out);
    double count = 0.0;
    for (std::size_t k = 0; k < batch.mask.size(); ++k) count += batch.mask[k];
    loss.d_g_raw = RealTensor(out.g_raw.shape(), 0.0);
    for (std::size_t k = 0; k < out.g_raw.size(); ++k) {
      if (batch.mask[k]) loss.d_g_raw[k] = alpha * 2.0 * (out.g_raw[k] - batch.x_obs[k]) / count;
    }
    res.sinkhorn_term = 0.0;
    if (with_transport) {
      const PointCloud q = PointCloud::from_samples(*z);
      const PointCloud p = PointCloud::from_samples(out.x_hat);
      if (1.0 - alpha != 0.0) {
        const DivergenceWithGrad s = sinkhorn_divergence_grad(q, p, sk, CloudSide::kSecond);
        res.sinkhorn_term = s.value;
        loss.d_x_hat = RealTensor(out.x_hat.shape());
        for (std::size_t k = 0; k < s.grad.size(); ++k) loss.d_x_hat[k] = (1.0 - alpha) * s.grad[k];
      } else {
        res.sinkhorn_term = sinkhorn_divergence(q, p, sk);
      }
    }
    loss.value = alpha * res.recon + (1.0 - alpha) * res.sinkhorn_term;
    if (!std::isfinite(loss.value)) throw Error("outer step: non-finite loss");
    return loss;
  };
  res.lg = loss_grad(params, network_input(batch, view), closure);
  return res;
}

LossReport outer_step(const Batch& batch, const MeanImputedView& view, const RealTensor* z, ImputerParams& params,
                      AdamState& state, const TrainConfig& cfg) {
  const OuterLoss ol = outer_loss_grad(batch, view, z, params, cfg);
  adam_update(params.flat, ol.lg.grad, state, cfg);
  LossReport rep;
  rep.recon = ol.recon;
  rep.sinkhorn_term = ol.sinkhorn_term;
  rep.total = ol.lg.loss;
  return rep;
}

TrainResult train(const TimeSeriesDataset& data, const TrainConfig& cfg, const BackboneSpec& spec) {
  cfg.validate();
  check_train_split(data, spec);
  TrainResult result{init_params(spec), {}};
  AdamState state;
  const bool adversary = cfg.alpha != 1.0 && cfg.inner_steps > 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(data.n(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(data, batches[b], cfg, epoch, b);
      const MeanImputedView view = batch_mean_impute(batch.x_obs, batch.mask);
      AdversaryBatch adv = init_adversary(view);
      if (adversary) {
        const ImputerOutput out = forward(result.params, network_input(batch, view));
        adv = inner_ascent(std::move(adv), PointCloud::from_samples(out.x_hat), cfg);
      }
      LossReport rep = outer_step(batch, view, &adv.Z, result.params, state, cfg);
      rep.epoch = epoch;
      rep.batch_index = b;
      result.history.push_back(rep);
    }
  }
  return result;
}

TrainResult train_reconstruction_only(const TimeSeriesDataset& data, const TrainConfig& cfg,
                                      const BackboneSpec& spec) {
  cfg.validate();
  check_train_split(data, spec);
  TrainConfig recon_cfg = cfg;
  recon_cfg.alpha = 1.0;
  TrainResult result{init_params(spec), {}};
  AdamState state;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(data.n(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch batch = make_batch(data, batches[b], cfg, epoch, b);
      const MeanImputedView view = batch_mean_impute(batch.x_obs, batch.mask);
      LossReport rep = outer_step(batch, view, nullptr, result.params, state, recon_cfg);
      rep.epoch = epoch;
      rep.batch_index = b;
      result.history.push_back(rep);
    }
  }
  return result;
}

double dual_bound_estimate(const RealTensor& anchors, const PointCloud& imputed, const DualBoundSpec& spec,
                           const TrainConfig& cfg) {
  spec.validate();
  if (anchors.n() > 8 || anchors.shape().sample_size() > 16) {
    throw ValidationError("dual bound: instance too large (B <= 8, D*T <= 16)");
  }
  if (imputed.dim != anchors.shape().sample_size()) throw ValidationError("dual bound: dimension mismatch");
  const FixedTargetDivergence div(imputed, resolve_sinkhorn(cfg.sinkhorn, anchors));

  // Spread used for random restarts.
  double spread = 0.0;
  for (std::size_t k = 0; k < anchors.size(); ++k) spread += anchors[k] * anchors[k];
  spread = std::sqrt(spread / static_cast<double>(anchors.size())) + 0.1;

  double best = std::numeric_limits<double>::infinity();
  for (double gamma : spec.gamma_grid) {
    double sup = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < spec.restarts; ++r) {
      AdversaryBatch adv;
      adv.anchors = anchors;
      adv.Z = anchors;
      if (r == 1 && imputed.size() == anchors.n()) {
        adv.Z.storage() = imputed.coords;
      } else if (r >= 1) {
        Rng rng = make_rng(spec.seed, r);
        std::normal_distribution<double> noise(0.0, 0.5 * spread);
        for (std::size_t k = 0; k < adv.Z.size(); ++k) adv.Z[k] += noise(rng);
      }
      ascend(adv, div, gamma, spec.ascent_steps, cfg.inner_lr, true, 30, 1.5);
      sup = std::max(sup, adv.objective_trace.back());
    }
    best = std::min(best, gamma * spec.rho + sup);
  }
  return best;
}

}  // namespace drio
