#include <benchmark/benchmark.h>

#include "drio/masking.hpp"
#include "drio/train.hpp"

namespace {

drio::TimeSeriesDataset data(std::size_t n) {
  drio::SynthSpec s;
  s.n_samples = n;
  drio::TimeSeriesDataset ds = drio::synth_generate(s);
  ds.gt_mask = drio::apply_missingness(ds, drio::MissingSpec{}).gt_mask;
  return ds;
}

drio::BackboneSpec backbone(int kind) {
  drio::BackboneSpec b;
  b.kind = kind ? drio::BackboneKind::kBiRnn : drio::BackboneKind::kMlp;
  b.n_features = 4;
  b.hidden_dim = 32;
  return b;
}

void BM_ImputerForwardBackward(benchmark::State& state) {
  const drio::TimeSeriesDataset ds = data(32);
  const drio::ImputerParams p = drio::init_params(backbone(static_cast<int>(state.range(0))));
  const drio::MeanImputedView view = drio::batch_mean_impute(ds.values, ds.gt_mask);
  const drio::ImputerInput in{view.values, ds.gt_mask};
  const drio::LossClosure closure = [](const drio::ImputerOutput& out) {
    drio::OutputLoss l;
    l.d_g_raw = out.g_raw;
    for (double v : out.g_raw.storage()) l.value += 0.5 * v * v;
    return l;
  };
  for (auto _ : state) benchmark::DoNotOptimize(drio::loss_grad(p, in, closure).loss);
}
BENCHMARK(BM_ImputerForwardBackward)->Arg(0)->Arg(1);

// One robust training epoch over a single batch of 32: inner ascent plus
// the outer update.
void BM_TrainEpoch(benchmark::State& state) {
  const drio::TimeSeriesDataset ds = data(32);
  drio::TrainConfig cfg;
  cfg.epochs = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(drio::train(ds, cfg, backbone(static_cast<int>(state.range(0)))).history.size());
  }
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
