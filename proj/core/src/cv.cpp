#include "drio/cv.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "drio/error.hpp"
#include "drio/masking.hpp"
#include "drio/metrics.hpp"

namespace drio {

CvMode parse_cv_mode(std::string_view name) {
  if (name == "reconstruction") return CvMode::kReconstruction;
  if (name == "oracle") return CvMode::kOracle;
  throw ValidationError("unknown cv mode '" + std::string(name) + "'");
}

std::string_view to_string(CvMode mode) { return mode == CvMode::kOracle ? "oracle" : "reconstruction"; }

void GridSpec::validate() const {
  if (alphas.empty() || gammas.empty()) throw ValidationError("grid: alphas and gammas must be nonempty");
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    if (!(alphas[a] >= 0.0 && alphas[a] <= 1.0)) throw ValidationError("grid: alpha outside [0, 1]");
    for (std::size_t b = 0; b < a; ++b) {
      if (alphas[a] == alphas[b]) throw ValidationError("grid: duplicate alpha");
    }
  }
  for (std::size_t a = 0; a < gammas.size(); ++a) {
    if (!(gammas[a] >= 0.0)) throw ValidationError("grid: gamma must be >= 0");
    for (std::size_t b = 0; b < a; ++b) {
      if (gammas[a] == gammas[b]) throw ValidationError("grid: duplicate gamma");
    }
  }
  backbone.validate();
}

double criterion(const CellRecord& cell, CvMode mode) {
  return mode == CvMode::kOracle ? cell.oracle_val_mse : cell.recon_val_mse;
}

namespace {

void run_cell(const TimeSeriesDataset& train_split, const TimeSeriesDataset& val, const GridSpec& spec,
              CellRecord& cell) {
  try {
    TrainConfig cfg = spec.base;
    cfg.alpha = cell.alpha;
    cfg.gamma = cell.gamma;
    cell.params = train(train_split, cfg, spec.backbone).params;
    cell.recon_val_mse = recon_mse_observed(val, cell.params);
    cell.oracle_val_mse = std::numeric_limits<double>::quiet_NaN();
    if (val.has_gt_mask()) {
      const MaskTensor eval_mask = compose_training_mask(val.raw_mask, val.gt_mask).eval_mask;
      if (count_ones(eval_mask) > 0) {
        cell.oracle_val_mse = mse_missing(val.values, impute_dataset(val, cell.params).x_hat, eval_mask);
      }
    }
    if (!std::isfinite(cell.recon_val_mse)) throw Error("non-finite validation loss");
    cell.ok = true;
    cell.status = "ok";
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.status = e.what();
  }
}

}  // namespace

CVResult grid_search(const TimeSeriesDataset& train_split, const TimeSeriesDataset& val, const GridSpec& spec,
                     CvMode mode, std::size_t threads) {
  spec.validate();
  if (train_split.n() == 0 || val.n() == 0) throw ValidationError("cv: empty split");
  if (mode == CvMode::kOracle && !val.has_gt_mask()) throw ValidationError("cv: oracle mode needs an artificial mask");
  CVResult result;
  result.mode = mode;
  for (double a : spec.alphas) {
    for (double g : spec.gammas) {
      CellRecord cell;
      cell.alpha = a;
      cell.gamma = g;
      result.cells.push_back(std::move(cell));
    }
  }
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, result.cells.size()));
  if (workers == 1) {
    for (CellRecord& cell : result.cells) run_cell(train_split, val, spec, cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < result.cells.size(); k = next++) {
          run_cell(train_split, val, spec, result.cells[k]);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  result.selected = result.cells.size();
  try {
    result.selected = select_best_index(result.cells, mode);
  } catch (const Error&) {
    // Every cell failed; select_best reports it.
  }
  return result;
}

std::size_t select_best_index(const std::vector<CellRecord>& cells, CvMode mode) {
  std::size_t best = cells.size();
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const CellRecord& c = cells[k];
    if (!c.ok || !std::isfinite(criterion(c, mode))) continue;
    if (best == cells.size()) {
      best = k;
      continue;
    }
    const CellRecord& b = cells[best];
    const double cc = criterion(c, mode), cb = criterion(b, mode);
    if (cc < cb || (cc == cb && (c.alpha > b.alpha || (c.alpha == b.alpha && c.gamma > b.gamma)))) best = k;
  }
  if (best == cells.size()) throw Error("cv: every grid cell failed");
  return best;
}

const CellRecord& select_best(const CVResult& result) {
  return result.cells.at(select_best_index(result.cells, result.mode));
}

std::string cv_csv(const CVResult& result) {
  std::string out = "alpha,gamma,recon_val_mse,oracle_val_mse,status\n";
  char buf[160];
  for (const CellRecord& c : result.cells) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,", c.alpha, c.gamma, c.recon_val_mse, c.oracle_val_mse);
    std::string status = c.status;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out += buf + status + "\n";
  }
  return out;
}

}  // namespace drio
