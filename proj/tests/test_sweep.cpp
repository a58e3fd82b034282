#include <gtest/gtest.h>

#include "dprobe/sweep.hpp"
#include "support.hpp"

using namespace dprobe;
using namespace dprobe::testing;

namespace {

SweepReport grid_2x3() {
  SweepReport r;
  r.sweep = "lambda";
  r.unit = "ms";
  r.repetitions = 10;
  r.aggregation = "trimmed_mean";
  r.highlight_minima = true;
  r.rows = {"lambda2", {"0.5", "1"}};
  r.cols = {"lambda1", {"1", "2", "3"}};
  r.cells = {4.0, 2.5, std::nullopt, 1.25, 7.0, 3.0};
  r.notes = {"a note"};
  return r;
}

struct SeedPool {
  std::vector<Sample> seeds;
  std::vector<std::size_t> ids;
  SeedSet set() const { return {seeds, ids}; }
};

SeedPool toy_pool(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SeedPool p;
  for (std::size_t i = 0; i < n; ++i) {
    p.seeds.push_back({random_tensor({4, 4, 1}, rng, 0.3, 0.9), 0});
    p.ids.push_back(i);
  }
  return p;
}

}  // namespace

TEST(Sweep, TrimmedMean) {
  EXPECT_DOUBLE_EQ(trimmed_mean({10, 20, 90}), 20.0);
  EXPECT_DOUBLE_EQ(trimmed_mean({1, 2, 3, 4, 100}), 3.0);
  EXPECT_DOUBLE_EQ(trimmed_mean({4, 8}), 6.0);
  EXPECT_DOUBLE_EQ(trimmed_mean({5}), 5.0);
  EXPECT_THROW(trimmed_mean({}), UsageError);
}

TEST(Sweep, Minima) {
  const SweepReport r = grid_2x3();
  const auto rows = r.row_minima();
  EXPECT_EQ(rows[0], 1u);
  EXPECT_EQ(rows[1], 0u);
  const auto cols = r.col_minima();
  EXPECT_EQ(cols[0], 1u);
  EXPECT_EQ(cols[1], 0u);
  EXPECT_FALSE(cols[2]);  // one filled cell
}

TEST(Sweep, SingleCellHasNoHighlight) {
  SweepReport r = grid_2x3();
  r.rows.labels = {"1"};
  r.cols.labels = {"1"};
  r.cells = {3.0};
  EXPECT_FALSE(r.row_minima()[0]);
  EXPECT_FALSE(r.col_minima()[0]);
  EXPECT_EQ(format_table(r).find('*'), std::string::npos);
}

TEST(Sweep, TableMarksMinimaAndFailures) {
  const std::string t = format_table(grid_2x3());
  EXPECT_NE(t.find("failed"), std::string::npos);
  EXPECT_NE(t.find('*'), std::string::npos);
  EXPECT_NE(t.find('+'), std::string::npos);
}

TEST(Sweep, CsvAndJsonRoundTrip) {
  const SweepReport r = grid_2x3();
  for (const SweepReport& back : {sweep_from_csv(to_csv(r)), sweep_from_json(to_json(r))}) {
    EXPECT_EQ(back.sweep, r.sweep);
    EXPECT_EQ(back.unit, r.unit);
    EXPECT_EQ(back.repetitions, r.repetitions);
    EXPECT_EQ(back.aggregation, r.aggregation);
    EXPECT_EQ(back.highlight_minima, r.highlight_minima);
    EXPECT_EQ(back.rows.name, r.rows.name);
    EXPECT_EQ(back.rows.labels, r.rows.labels);
    EXPECT_EQ(back.cols.labels, r.cols.labels);
    EXPECT_EQ(back.cells, r.cells);
  }
  EXPECT_EQ(to_csv(sweep_from_csv(to_csv(r))), to_csv(r));
}

TEST(Sweep, FormatNumberIsShortest) {
  EXPECT_EQ(format_number(0.03), "0.03");
  EXPECT_EQ(format_number(2.5), "2.5");
  EXPECT_EQ(format_number(1.0), "1");
}

TEST(Sweep, ThresholdSweepIsMonotoneAndZeroAtOne) {
  const Ensemble ens = toy_ensemble();
  const auto pool = toy_pool(10, 1);
  GenerationConfig cfg;
  cfg.max_iters = 30;
  const auto r = sweep_threshold(ens, pool.set(), cfg, {1.0, 0.5, 0.0, 0.1, 0.5});
  EXPECT_EQ(r.cols.labels, (std::vector<std::string>{"0", "0.1", "0.5", "1"}));
  for (std::size_t i = 1; i < r.cells.size(); ++i) EXPECT_LE(*r.cells[i], *r.cells[i - 1]);
  EXPECT_EQ(*r.cells.back(), 0.0);
  EXPECT_GT(*r.cells.front(), 0.0);
  EXPECT_THROW(sweep_threshold(ens, pool.set(), cfg, {1.5}), UsageError);
}

TEST(Sweep, SeedSweepIsNonDecreasingAndWarnsOnDuplicates) {
  const Ensemble ens = toy_ensemble();
  const auto pool = toy_pool(12, 2);
  GenerationConfig cfg;
  cfg.max_iters = 30;
  std::vector<std::string> warnings;
  const auto r = sweep_seeds(ens, pool.set(), cfg, {4, 0, 12, 4, 8}, 2, &warnings);
  EXPECT_EQ(r.cols.labels, (std::vector<std::string>{"0", "4", "8", "12"}));
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(*r.cells[0], 0.0);
  for (std::size_t i = 1; i < r.cells.size(); ++i) EXPECT_GE(*r.cells[i], *r.cells[i - 1]);
  // The full prefix equals an independent campaign over all twelve seeds.
  const auto camp = run_campaign(ens, pool.seeds, pool.ids, cfg);
  EXPECT_DOUBLE_EQ(*r.cells.back(), 100.0 * camp.coverage.ratio());
  EXPECT_THROW(sweep_seeds(ens, pool.set(), cfg, {13}), UsageError);
}

TEST(Sweep, LambdaGridShapeAndFailedCells) {
  const Ensemble ens = toy_ensemble();
  const auto pool = toy_pool(4, 3);
  GenerationConfig cfg;
  cfg.max_iters = 20;
  const auto r = sweep_lambda(ens, pool.set(), cfg, {1.0, 2.5}, {0.0, 2.0}, 3, 2);
  EXPECT_EQ(r.rows.labels, (std::vector<std::string>{"0", "2"}));
  EXPECT_EQ(r.cols.labels, (std::vector<std::string>{"1", "2.5"}));
  ASSERT_EQ(r.cells.size(), 4u);
  for (const auto& c : r.cells)
    if (c) EXPECT_GE(*c, 0.0);

  const Model m = toy_model(1.0, 0.5, 0.0);
  const Ensemble same({m, m, m});
  const auto none = sweep_lambda(same, pool.set(), cfg, {1.0}, {1.0}, 2);
  EXPECT_FALSE(none.cells[0]);
  EXPECT_THROW(sweep_lambda(ens, pool.set(), cfg, {}, {1.0}), UsageError);
  EXPECT_THROW(sweep_lambda(ens, pool.set(), cfg, {1.0}, {1.0}, 0), UsageError);
}
