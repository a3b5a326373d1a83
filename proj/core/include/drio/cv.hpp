#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "drio/train.hpp"

namespace drio {

enum class CvMode { kReconstruction, kOracle };
CvMode parse_cv_mode(std::string_view name);
std::string_view to_string(CvMode mode);

struct GridSpec {
  std::vector<double> alphas{0.01, 0.25, 0.5, 0.75, 0.99};
  std::vector<double> gammas{0.1, 1.0, 5.0, 10.0};
  TrainConfig base{};
  BackboneSpec backbone{};

  void validate() const;
};

struct CellRecord {
  double alpha = 0.0;
  double gamma = 0.0;
  double recon_val_mse = 0.0;
  double oracle_val_mse = 0.0;  // NaN when the validation split has no artificial mask
  bool ok = false;
  std::string status;  // "ok" or the failure message
  ImputerParams params;
};

struct CVResult {
  std::vector<CellRecord> cells;  // alphas outer, gammas inner
  std::size_t selected = 0;
  CvMode mode = CvMode::kReconstruction;
};

double criterion(const CellRecord& cell, CvMode mode);

/// Trains every (alpha, gamma) cell once with the base seed and records both
/// criteria. Cell failures are kept in the record. `threads` > 1 trains cells
/// concurrently; results do not depend on it.
CVResult grid_search(const TimeSeriesDataset& train, const TimeSeriesDataset& val, const GridSpec& spec, CvMode mode,
                     std::size_t threads = 1);

/// Lowest criterion, ties to larger alpha, then larger gamma.
/// Throws Error if every cell failed.
const CellRecord& select_best(const CVResult& result);
std::size_t select_best_index(const std::vector<CellRecord>& cells, CvMode mode);

std::string cv_csv(const CVResult& result);

}  // namespace drio
