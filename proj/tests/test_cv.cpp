#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "drio/cv.hpp"
#include "drio/error.hpp"
#include "drio/masking.hpp"

using namespace drio;

namespace {

CellRecord cell(double a, double g, double recon, double oracle, bool ok = true) {
  CellRecord c;
  c.alpha = a;
  c.gamma = g;
  c.recon_val_mse = recon;
  c.oracle_val_mse = oracle;
  c.ok = ok;
  c.status = ok ? "ok" : "boom";
  return c;
}

struct Splits {
  TimeSeriesDataset train, val;
};

Splits small_splits() {
  SynthSpec s;
  s.n_samples = 12;
  s.n_features = 2;
  s.n_timesteps = 4;
  s.seed = 4;
  TimeSeriesDataset ds = synth_generate(s);
  MissingSpec m;
  m.ratio = 0.3;
  ds.gt_mask = apply_missingness(ds, m).gt_mask;
  const auto idx = split_indices(ds.n(), SplitSpec{});
  return {subset(ds, idx.train), subset(ds, idx.val)};
}

GridSpec small_grid() {
  GridSpec g;
  g.alphas = {0.5, 1.0};
  g.gammas = {0.1, 1.0};
  g.base.epochs = 2;
  g.base.batch_size = 4;
  g.base.inner_steps = 2;
  g.backbone.n_features = 2;
  g.backbone.hidden_dim = 4;
  g.backbone.layers = 1;
  return g;
}

}  // namespace

TEST(Cv, ModeNames) {
  EXPECT_EQ(parse_cv_mode("oracle"), CvMode::kOracle);
  EXPECT_EQ(to_string(CvMode::kReconstruction), "reconstruction");
  EXPECT_THROW(parse_cv_mode("val"), ValidationError);
}

TEST(Cv, GridValidation) {
  GridSpec g = small_grid();
  EXPECT_NO_THROW(g.validate());
  g.alphas = {0.5, 0.5};
  EXPECT_THROW(g.validate(), ValidationError);
  g = small_grid();
  g.gammas = {};
  EXPECT_THROW(g.validate(), ValidationError);
  g = small_grid();
  g.alphas = {1.5};
  EXPECT_THROW(g.validate(), ValidationError);
}

TEST(Cv, SelectionAndTieBreaks) {
  std::vector<CellRecord> cells{cell(0.5, 1, 0.3, 0.9), cell(0.75, 1, 0.2, 0.8), cell(0.75, 5, 0.2, 0.1),
                                cell(0.25, 10, 0.2, 0.1)};
  // Recon: three-way tie at 0.2, larger alpha wins, then larger gamma.
  EXPECT_EQ(select_best_index(cells, CvMode::kReconstruction), 2u);
  // Oracle: tie at 0.1 between alpha 0.75 and 0.25.
  EXPECT_EQ(select_best_index(cells, CvMode::kOracle), 2u);
  cells[2].ok = false;
  EXPECT_EQ(select_best_index(cells, CvMode::kReconstruction), 1u);
  EXPECT_EQ(select_best_index(cells, CvMode::kOracle), 3u);
  cells[3].oracle_val_mse = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(select_best_index(cells, CvMode::kOracle), 1u);
  for (auto& c : cells) c.ok = false;
  EXPECT_THROW(select_best_index(cells, CvMode::kReconstruction), Error);
}

TEST(Cv, GridSearchRecordsBothCriteria) {
  const Splits sp = small_splits();
  const GridSpec g = small_grid();
  const CVResult r = grid_search(sp.train, sp.val, g, CvMode::kReconstruction);
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(r.cells[1].alpha, 0.5);
  EXPECT_EQ(r.cells[1].gamma, 1.0);
  for (const CellRecord& c : r.cells) {
    EXPECT_TRUE(c.ok) << c.status;
    EXPECT_TRUE(std::isfinite(c.recon_val_mse));
    EXPECT_TRUE(std::isfinite(c.oracle_val_mse));
  }
  EXPECT_EQ(r.selected, select_best_index(r.cells, CvMode::kReconstruction));
  // Gamma is irrelevant at alpha = 1, so those two cells coincide.
  EXPECT_EQ(r.cells[2].params.flat, r.cells[3].params.flat);

  const std::string csv = cv_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,gamma,recon_val_mse,oracle_val_mse,status");
}

TEST(Cv, ThreadCountDoesNotChangeResults) {
  const Splits sp = small_splits();
  const GridSpec g = small_grid();
  const CVResult one = grid_search(sp.train, sp.val, g, CvMode::kOracle, 1);
  const CVResult three = grid_search(sp.train, sp.val, g, CvMode::kOracle, 3);
  EXPECT_EQ(cv_csv(one), cv_csv(three));
  EXPECT_EQ(one.selected, three.selected);
  for (std::size_t k = 0; k < one.cells.size(); ++k) EXPECT_EQ(one.cells[k].params.flat, three.cells[k].params.flat);
}

TEST(Cv, FailedCellsAreRecorded) {
  const Splits sp = small_splits();
  GridSpec g = small_grid();
  g.backbone.activation = Activation::kRelu;
  g.base.lr = 1e300;  // first step overflows every cell
  g.base.epochs = 3;
  const CVResult r = grid_search(sp.train, sp.val, g, CvMode::kReconstruction);
  for (const CellRecord& c : r.cells) {
    EXPECT_FALSE(c.ok);
    EXPECT_NE(c.status, "ok");
  }
  EXPECT_EQ(r.selected, r.cells.size());
  EXPECT_THROW(select_best(r), Error);
}

TEST(Cv, OracleModeNeedsArtificialMask) {
  Splits sp = small_splits();
  sp.val.gt_mask = MaskTensor{};
  EXPECT_THROW(grid_search(sp.train, sp.val, small_grid(), CvMode::kOracle), ValidationError);
  const CVResult r = grid_search(sp.train, sp.val, small_grid(), CvMode::kReconstruction);
  EXPECT_TRUE(std::isnan(r.cells[0].oracle_val_mse));
}
