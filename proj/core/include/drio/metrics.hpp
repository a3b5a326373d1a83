#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "drio/data_model.hpp"
#include "drio/imputer.hpp"

namespace drio {

enum class Split { kVal, kTest };
std::string_view to_string(Split s);

/// Mean squared error over the entries flagged in eval_mask.
double mse_missing(const RealTensor& truth, const RealTensor& imputed, const MaskTensor& eval_mask);

/// Closed-form 1-D W2 between two equally long samples (sorted pairing).
double w2_1d(std::vector<double> truth, std::vector<double> imputed);

/// Minimum RMS pairing cost over all permutations; n <= 7.
double w2_bruteforce_oracle(std::span<const double> a, std::span<const double> b);

/// g_raw vs observations at the visible entries of `ds`.
double recon_mse_observed(const TimeSeriesDataset& ds, const ImputerParams& params);

/// Imputer output on the whole split as one batch, fed with the visible mask.
ImputerOutput impute_dataset(const TimeSeriesDataset& ds, const ImputerParams& params);

/// Per-(d, t) mean over the split's visible entries, used for hidden entries.
MeanImputedView impute_mean(const TimeSeriesDataset& ds);

struct EvalReport {
  double mse_missing = 0.0;
  double w2 = 0.0;
  double recon_mse_observed = 0.0;
  std::size_t n_eval_entries = 0;
  Split split = Split::kTest;
};

/// Metrics on the artificially hidden entries (raw & !gt) of `ds`.
/// Throws ValidationError("no artificial mask") when ds has no gt_mask.
EvalReport evaluate(const TimeSeriesDataset& ds, const ImputerParams& params, Split split);

/// Same metrics for the batch-mean baseline.
EvalReport evaluate_mean_baseline(const TimeSeriesDataset& ds, Split split);

/// Building block: metrics of a given imputation.
EvalReport evaluate_imputation(const TimeSeriesDataset& ds, const RealTensor& imputed, double recon, Split split);

struct ParetoRow {
  std::string method;
  EvalReport report;
  bool dominated = false;
};

/// A row is dominated iff another row is <= in both mse_missing and w2 and
/// strictly better in at least one.
std::vector<ParetoRow> pareto_table(const std::vector<std::pair<std::string, EvalReport>>& reports);
std::string pareto_markdown(const std::vector<ParetoRow>& rows);

/// CSV header and row for `method,split,mse_missing,w2,recon_mse_observed,n_eval_entries`.
std::string eval_csv_header();
std::string eval_csv_row(const std::string& method, const EvalReport& r);

}  // namespace drio
