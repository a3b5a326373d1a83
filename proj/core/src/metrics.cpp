#include "drio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "drio/error.hpp"
#include "drio/masking.hpp"

namespace drio {

std::string_view to_string(Split s) { return s == Split::kVal ? "val" : "test"; }

double mse_missing(const RealTensor& truth, const RealTensor& imputed, const MaskTensor& eval_mask) {
  if (!(truth.shape() == imputed.shape()) || !(truth.shape() == eval_mask.shape())) {
    throw ValidationError("mse_missing: shape mismatch");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (!eval_mask[k]) continue;
    const double e = truth[k] - imputed[k];
    sum += e * e;
    ++count;
  }
  if (count == 0) throw ValidationError("mse_missing: no evaluation entries");
  return sum / static_cast<double>(count);
}

double w2_1d(std::vector<double> truth, std::vector<double> imputed) {
  if (truth.empty()) throw ValidationError("w2_1d: empty input");
  if (truth.size() != imputed.size()) throw ValidationError("w2_1d: length mismatch");
  std::sort(truth.begin(), truth.end());
  std::sort(imputed.begin(), imputed.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double e = imputed[k] - truth[k];
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(truth.size()));
}

double w2_bruteforce_oracle(std::span<const double> a, std::span<const double> b) {
  if (a.empty()) throw ValidationError("w2 oracle: empty input");
  if (a.size() != b.size()) throw ValidationError("w2 oracle: length mismatch");
  if (a.size() > 7) throw ValidationError("w2 oracle: n must be <= 7");
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double e = a[k] - b[perm[k]];
      sum += e * e;
    }
    best = std::min(best, sum);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.size()));
}

ImputerOutput impute_dataset(const TimeSeriesDataset& ds, const ImputerParams& params) {
  const MaskTensor& mask = ds.visible_mask();
  const RealTensor x_obs = apply_mask(ds.values, mask);
  const MeanImputedView view = batch_mean_impute(x_obs, mask);
  return forward(params, ImputerInput{view.values, mask});
}

MeanImputedView impute_mean(const TimeSeriesDataset& ds) {
  const MaskTensor& mask = ds.visible_mask();
  return batch_mean_impute(apply_mask(ds.values, mask), mask);
}

double recon_mse_observed(const TimeSeriesDataset& ds, const ImputerParams& params) {
  if (ds.n() == 0) throw ValidationError("recon_mse_observed: empty split");
  const ImputerOutput out = impute_dataset(ds, params);
  const MaskTensor& mask = ds.visible_mask();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) continue;
    const double e = out.g_raw[k] - ds.values[k];
    sum += e * e;
    ++count;
  }
  if (count == 0) throw ValidationError("recon_mse_observed: no observed entries");
  return sum / static_cast<double>(count);
}

EvalReport evaluate_imputation(const TimeSeriesDataset& ds, const RealTensor& imputed, double recon, Split split) {
  if (!ds.has_gt_mask()) throw ValidationError("no artificial mask");
  const MaskTensor eval_mask = compose_training_mask(ds.raw_mask, ds.gt_mask).eval_mask;
  EvalReport r;
  r.split = split;
  r.recon_mse_observed = recon;
  r.mse_missing = mse_missing(ds.values, imputed, eval_mask);
  std::vector<double> truth, guess;
  for (std::size_t k = 0; k < eval_mask.size(); ++k) {
    if (!eval_mask[k]) continue;
    truth.push_back(ds.values[k]);
    guess.push_back(imputed[k]);
  }
  r.n_eval_entries = truth.size();
  r.w2 = w2_1d(std::move(truth), std::move(guess));
  return r;
}

EvalReport evaluate(const TimeSeriesDataset& ds, const ImputerParams& params, Split split) {
  if (!ds.has_gt_mask()) throw ValidationError("no artificial mask");
  const ImputerOutput out = impute_dataset(ds, params);
  return evaluate_imputation(ds, out.x_hat, recon_mse_observed(ds, params), split);
}

EvalReport evaluate_mean_baseline(const TimeSeriesDataset& ds, Split split) {
  if (!ds.has_gt_mask()) throw ValidationError("no artificial mask");
  const MeanImputedView view = impute_mean(ds);
  const MaskTensor& mask = ds.visible_mask();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t d = 0; d < ds.shape().d; ++d) {
      for (std::size_t t = 0; t < ds.shape().t; ++t) {
        if (!mask(i, d, t)) continue;
        const double e = view.mean_table(0, d, t) - ds.values(i, d, t);
        sum += e * e;
        ++count;
      }
    }
  }
  if (count == 0) throw ValidationError("recon_mse_observed: no observed entries");
  return evaluate_imputation(ds, view.values, sum / static_cast<double>(count), split);
}

std::vector<ParetoRow> pareto_table(const std::vector<std::pair<std::string, EvalReport>>& reports) {
  std::vector<ParetoRow> rows;
  for (const auto& [name, rep] : reports) rows.push_back(ParetoRow{name, rep, false});
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < rows.size(); ++b) {
      if (a == b) continue;
      const EvalReport& x = rows[b].report;
      const EvalReport& y = rows[a].report;
      const bool weakly = x.mse_missing <= y.mse_missing && x.w2 <= y.w2;
      const bool strictly = x.mse_missing < y.mse_missing || x.w2 < y.w2;
      if (weakly && strictly) {
        rows[a].dominated = true;
        break;
      }
    }
  }
  return rows;
}

namespace {
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string pareto_markdown(const std::vector<ParetoRow>& rows) {
  std::string out = "| method | split | mse_missing | w2 | pareto |\n|---|---|---|---|---|\n";
  for (const ParetoRow& r : rows) {
    out += "| " + r.method + " | " + std::string(to_string(r.report.split)) + " | " + fmt_short(r.report.mse_missing) +
           " | " + fmt_short(r.report.w2) + " | " + (r.dominated ? "dominated" : "front") + " |\n";
  }
  return out;
}

std::string eval_csv_header() { return "method,split,mse_missing,w2,recon_mse_observed,n_eval_entries"; }

std::string eval_csv_row(const std::string& method, const EvalReport& r) {
  return method + "," + std::string(to_string(r.split)) + "," + fmt(r.mse_missing) + "," + fmt(r.w2) + "," +
         fmt(r.recon_mse_observed) + "," + std::to_string(r.n_eval_entries);
}

}  // namespace drio
