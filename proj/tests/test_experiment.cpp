#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "adpmac/compare.hpp"
#include "adpmac/experiment.hpp"

using namespace adpmac;
using namespace adpmac::experiment;

namespace {

std::string csv_of(const std::vector<Row>& rows) {
  std::ostringstream os;
  write_csv(os, rows);
  return os.str();
}

// Synthetic rows: energy and delay follow the given slopes in the interval.
void add_block(std::vector<Row>& rows, Fidelity f, ArrivalKind a, PollingKind p, double e0,
               double e_slope, double d0, double d_slope, int runs = 2, int max_x = 10) {
  for (int x = 1; x <= max_x; ++x)
    for (int r = 0; r < runs; ++r) {
      Row row;
      row.fidelity = f;
      row.arrival = a;
      row.polling = p;
      row.interval_s = x;
      row.run = r;
      row.energy_mJ = e0 + e_slope * x + 0.01 * r;
      row.mean_delay_s = d0 + d_slope * x + 0.01 * r;
      rows.push_back(row);
    }
}

std::vector<Row> synthetic_high() {
  std::vector<Row> h;
  for (auto a : {ArrivalKind::CBR, ArrivalKind::Poisson}) {
    add_block(h, Fidelity::High, a, PollingKind::Deterministic, 1000, -50, 0, 0.5);
    add_block(h, Fidelity::High, a, PollingKind::Exponential, 900, -50, 0, 1.0);
  }
  return h;
}

std::vector<Row> synthetic_low(bool with_bursty = true) {
  std::vector<Row> l;
  std::vector<ArrivalKind> arrivals{ArrivalKind::CBR, ArrivalKind::Poisson};
  if (with_bursty) arrivals.push_back(ArrivalKind::Bursty);
  for (auto a : arrivals)
    for (auto p : {PollingKind::Deterministic, PollingKind::Exponential, PollingKind::Dynamic}) {
      const double bonus = p == compare::matched_kind(a) ? 0.0 : 100.0;
      add_block(l, Fidelity::Low, a, p, 1000 + bonus, 100, 0.1 + bonus / 100, 0.5);
    }
  return l;
}

}  // namespace

TEST(Sweep, HighClosedFormCells) {
  auto c = ExperimentConfig::defaults(Fidelity::High);
  c.arrivals = {ArrivalKind::CBR};
  c.polling_kinds = {PollingKind::Deterministic};
  c.interval_grid_s = {5, 10};
  const auto rows = run_sweep(c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].energy_mJ, 36500.0);
  EXPECT_EQ(rows[1].energy_mJ, 30750.0);
}

TEST(Sweep, LowCountsAndDistinctSeeds) {
  auto c = ExperimentConfig::defaults(Fidelity::Low);
  c.arrivals = {ArrivalKind::CBR};
  c.interval_grid_s = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  c.low.packets_per_node = 2;
  const auto rows = run_sweep(c);
  for (auto p : c.polling_kinds) {
    std::set<std::uint64_t> seeds;
    int n = 0;
    for (const auto& r : rows)
      if (r.polling == p) {
        ++n;
        seeds.insert(r.seed);
      }
    EXPECT_EQ(n, 40);
    EXPECT_EQ(seeds.size(), 40u);
  }
}

TEST(Sweep, ByteIdenticalAcrossRunsAndWorkerCounts) {
  auto c = ExperimentConfig::defaults(Fidelity::Low);
  c.interval_grid_s = {1, 3, 6};
  c.low.packets_per_node = 3;
  c.workers = 1;
  const auto a = csv_of(run_sweep(c));
  c.workers = 4;
  const auto b = csv_of(run_sweep(c));
  EXPECT_EQ(a, b);
  auto h = ExperimentConfig::defaults(Fidelity::High);
  h.interval_grid_s = {2, 4};
  h.high.horizon_s = 500;
  EXPECT_EQ(csv_of(run_sweep(h)), csv_of(run_sweep(h)));
}

TEST(Sweep, RunsPerCellDefaults) {
  const auto h = ExperimentConfig::defaults(Fidelity::High);
  EXPECT_EQ(h.runs_for(ArrivalKind::CBR, PollingKind::Deterministic), 1);
  EXPECT_EQ(h.runs_for(ArrivalKind::CBR, PollingKind::Exponential), 20);
  EXPECT_EQ(h.runs_for(ArrivalKind::Poisson, PollingKind::Deterministic), 20);
  EXPECT_EQ(ExperimentConfig::defaults(Fidelity::Low).runs_for(ArrivalKind::CBR,
                                                               PollingKind::Dynamic),
            4);
}

TEST(Sweep, GridValidation) {
  auto c = ExperimentConfig::defaults(Fidelity::High);
  c.interval_grid_s = {};
  EXPECT_THROW(c.validate(), ParameterError);
  c.interval_grid_s = {1, 3, 2};
  EXPECT_THROW(c.validate(), ParameterError);
  c.interval_grid_s = {1, 2};
  c.runs_per_cell = 0;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Csv, HeaderAndRoundTrip) {
  auto c = ExperimentConfig::defaults(Fidelity::High);
  c.interval_grid_s = {1, 2.5};
  c.high.horizon_s = 200;
  const auto rows = run_sweep(c);
  const auto text = csv_of(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "fidelity,arrival,polling,mean_poll_interval_s,run,seed,energy_mJ,mean_delay_s,"
            "delivered,dropped,collisions,retransmissions");
  std::istringstream in(text);
  const auto back = read_csv(in);
  EXPECT_EQ(csv_of(back), text);
  for (std::size_t i = 1; i < back.size(); ++i) EXPECT_LT(back[i - 1].key(), back[i].key());
}

TEST(Ini, OverridesAndRejectsUnknownKeys) {
  auto c = ExperimentConfig::defaults(Fidelity::Low);
  std::istringstream good(
      "[experiment]\nmaster_seed = 9\ngrid = 2, 4, 6\n[low]\nnode_count = 4\n"
      "[mac]\nmax_retries = 3\n[frames]\nmax_concat = 3\n");
  apply_ini(c, good);
  EXPECT_EQ(c.master_seed, 9u);
  EXPECT_EQ(c.interval_grid_s, (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(c.low.node_count, 4);
  EXPECT_EQ(c.low.mac.max_retries, 3);
  EXPECT_EQ(c.high.frames.max_concat, 3);

  auto d = ExperimentConfig::defaults(Fidelity::Low);
  std::istringstream bad("[low]\nnode_cuont = 4\n");
  EXPECT_THROW(apply_ini(d, bad), ParameterError);
  std::istringstream bursty("[bursty]\nrate_factor = 3\n");
  EXPECT_THROW(apply_ini(d, bursty), ParameterError);
}

TEST(Ini, ShippedDefaultsMatchBuiltIns) {
  for (auto f : {Fidelity::High, Fidelity::Low}) {
    auto c = ExperimentConfig::defaults(f);
    apply_ini_file(c, ADPMAC_SOURCE_DIR "/configs/defaults.ini");
    const auto d = ExperimentConfig::defaults(f);
    EXPECT_EQ(c.arrivals, d.arrivals);
    EXPECT_EQ(c.polling_kinds, d.polling_kinds);
    EXPECT_EQ(c.interval_grid_s, d.interval_grid_s);
    EXPECT_EQ(c.low.mac.poll_listen_s, d.low.mac.poll_listen_s);
    EXPECT_EQ(c.high.horizon_s, d.high.horizon_s);
  }
}

TEST(Compare, SyntheticAllPass) {
  const auto rep = compare::compare(synthetic_high(), synthetic_low());
  EXPECT_TRUE(rep.all_pass());
  for (const auto& v : rep.verdicts)
    if (v.status != compare::Status::NotEvaluated) EXPECT_FALSE(v.cells.empty()) << v.claim;
  ASSERT_NE(rep.find("C6", ArrivalKind::Bursty), nullptr);
  EXPECT_EQ(rep.find("C6", ArrivalKind::Bursty)->status, compare::Status::Pass);
}

TEST(Compare, SwappedInputsFailC1) {
  const auto rep = compare::compare(synthetic_low(), synthetic_high());
  EXPECT_FALSE(rep.all_pass());
  EXPECT_EQ(rep.find("C1", ArrivalKind::CBR)->status, compare::Status::Fail);
}

TEST(Compare, MissingBurstyBlockNotEvaluated) {
  const auto full = compare::compare(synthetic_high(), synthetic_low(true));
  const auto rep = compare::compare(synthetic_high(), synthetic_low(false));
  EXPECT_EQ(rep.find("C6", ArrivalKind::Bursty), nullptr);
  for (auto a : {ArrivalKind::CBR, ArrivalKind::Poisson})
    for (auto claim : {"C1", "C2", "C3", "C4", "C5", "C6"})
      EXPECT_EQ(rep.find(claim, a)->status, full.find(claim, a)->status);

  // A bursty block with only some polling kinds leaves C6 unevaluated.
  auto low = synthetic_low(false);
  add_block(low, Fidelity::Low, ArrivalKind::Bursty, PollingKind::Dynamic, 1000, 100, 0, 0.5);
  const auto part = compare::compare(synthetic_high(), low);
  EXPECT_EQ(part.find("C6", ArrivalKind::Bursty)->status, compare::Status::NotEvaluated);
  EXPECT_TRUE(part.all_pass());
}

TEST(Compare, MissingCellsListed) {
  auto low = synthetic_low();
  std::erase_if(low, [](const Row& r) {
    return r.arrival == ArrivalKind::Poisson && r.polling == PollingKind::Dynamic &&
           r.interval_s == 7;
  });
  try {
    compare::compare(synthetic_high(), low);
    FAIL() << "expected MissingCells";
  } catch (const compare::MissingCells& e) {
    ASSERT_EQ(e.cells().size(), 1u);
    EXPECT_EQ(e.cells()[0], "low/poisson/dynamic@7");
  }
}

TEST(Compare, NoSharedArrivalRejected) {
  std::vector<Row> low;
  add_block(low, Fidelity::Low, ArrivalKind::Bursty, PollingKind::Dynamic, 1000, 100, 0, 0.5);
  EXPECT_THROW(compare::compare(synthetic_high(), low), ParameterError);
}

TEST(Compare, BurstyWithinCiOfBest) {
  auto low = synthetic_low(false);
  // Dynamic slightly worse than deterministic but inside its interval.
  add_block(low, Fidelity::Low, ArrivalKind::Bursty, PollingKind::Deterministic, 1000, 100, 0,
            0.5, 4);
  add_block(low, Fidelity::Low, ArrivalKind::Bursty, PollingKind::Exponential, 2000, 100, 5,
            0.5, 4);
  add_block(low, Fidelity::Low, ArrivalKind::Bursty, PollingKind::Dynamic, 1000.005, 100,
            0.005, 0.5, 4);
  const auto rep = compare::compare(synthetic_high(), low);
  EXPECT_EQ(rep.find("C6", ArrivalKind::Bursty)->status, compare::Status::Pass);
  // The same gap is a failure for CBR, where the matched kind must be best.
  auto cbr = synthetic_low(false);
  std::erase_if(cbr, [](const Row& r) { return r.arrival == ArrivalKind::CBR; });
  add_block(cbr, Fidelity::Low, ArrivalKind::CBR, PollingKind::Deterministic, 1000.005, 100,
            0.005, 0.5, 4);
  add_block(cbr, Fidelity::Low, ArrivalKind::CBR, PollingKind::Exponential, 2000, 100, 5, 0.5, 4);
  add_block(cbr, Fidelity::Low, ArrivalKind::CBR, PollingKind::Dynamic, 1000, 100, 0, 0.5, 4);
  EXPECT_EQ(compare::compare(synthetic_high(), cbr).find("C6", ArrivalKind::CBR)->status,
            compare::Status::Fail);
}
