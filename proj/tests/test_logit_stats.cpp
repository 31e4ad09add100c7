#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "logitbal/bank.hpp"
#include "logitbal/bias.hpp"
#include "logitbal/logit_matrix.hpp"
#include "support/approx.hpp"
#include "support/oracles.hpp"

using namespace logitbal;

namespace {
LogitRecord rec(std::vector<double> logits, int label, Domain d = Domain::kSource, double q = 1.0) {
  return {std::move(logits), label, d, q};
}

CellSamples empty_round(int c) {
  CellSamples s;
  s.num_classes = c;
  s.n_sample = 0;
  s.cells.resize(static_cast<std::size_t>(c) * static_cast<std::size_t>(c));
  s.skipped.assign(s.cells.size(), true);
  return s;
}
}  // namespace

TEST_CASE("accumulate routes logits into label rows") {
  LogitSetMatrix m(2);
  LogitBatch batch{{rec({1.5, -0.5}, 0)}, 2};
  accumulate(m, batch);
  REQUIRE(m.cell(0, 0).size() == 1);
  REQUIRE(m.cell(0, 1).size() == 1);
  CHECK(m.cell(0, 0)[0] == 1.5);
  CHECK(m.cell(0, 1)[0] == -0.5);
  CHECK(m.cell(1, 0).empty());
  CHECK(m.cell(1, 1).empty());

  accumulate(m, LogitBatch{{rec({0.0, 2.0}, 0)}, 2});
  CHECK(m.cell(0, 0).size() == 2);
  CHECK(m.cell(0, 1).size() == 2);
}

TEST_CASE("accumulate applies pseudo-labeling and quality gating") {
  LogitSetMatrix m(2);
  LogitBatch batch{{
                       rec({0.2, 1.2}, -1, Domain::kTarget, 1.0),  // argmax -> label 1
                       rec({3.0, 0.0}, 1, Domain::kTarget, 0.0),   // zero quality: dropped
                       rec({3.0, 0.0}, 1, Domain::kSource, 0.0),   // source is never gated
                   },
                   2};
  accumulate(m, batch);
  CHECK(m.cell(1, 0).size() == 2);
  CHECK(m.cell(0, 0).empty());

  LogitSetMatrix filtered(2);
  accumulate(filtered, batch, Domain::kTarget);
  CHECK(filtered.cell(1, 0).size() == 1);
}

TEST_CASE("reservoir keeps caps and an unbiased sample") {
  const std::size_t cap = 100;
  LogitSetMatrix m(2, cap, /*seed=*/7);
  RandomEngine rng(99);
  double stream_sum = 0.0, stream_sq = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(2.0, 1.5);
    stream_sum += v;
    stream_sq += v * v;
    m.add(0, {v, rng.normal(-1.0, 1.0)});
  }
  CHECK(m.cell(0, 0).size() == cap);
  CHECK(m.cell(0, 1).size() == cap);
  CHECK(m.seen(0, 0) == static_cast<std::uint64_t>(n));
  const double stream_mean = stream_sum / n;
  const double stream_std = std::sqrt(stream_sq / n - stream_mean * stream_mean);
  const double kept_mean =
      std::accumulate(m.cell(0, 0).begin(), m.cell(0, 0).end(), 0.0) / static_cast<double>(cap);
  CHECK(std::abs(kept_mean - stream_mean) <= 3.0 * stream_std / std::sqrt(static_cast<double>(cap)));
}

TEST_CASE("matrix streams are deterministic under a fixed seed") {
  LogitSetMatrix a(2, 50, 11), b(2, 50, 11);
  RandomEngine feed(3);
  for (int i = 0; i < 400; ++i) {
    const std::vector<double> v = {feed.normal(), feed.normal()};
    a.add(0, v);
    b.add(0, v);
  }
  CHECK(a.cell(0, 0) == b.cell(0, 0));
}

TEST_CASE("sample_cells honors counts, skipping and provenance") {
  LogitSetMatrix m(2, 10000, 1);
  RandomEngine rng(5);
  for (int i = 0; i < 200; ++i) m.add(0, {rng.normal(), rng.normal()});
  for (int i = 0; i < 50; ++i) m.add(1, {rng.normal(), rng.normal()});

  const auto s = sample_cells(m, /*n_min=*/100, /*n_sample=*/100, /*seed=*/42);
  CHECK(s.at(0, 0).size() == 100);
  CHECK(s.at(0, 1).size() == 100);
  CHECK(s.is_skipped(1, 0));
  CHECK(s.is_skipped(1, 1));
  for (double v : s.at(0, 0))
    CHECK(std::find(m.cell(0, 0).begin(), m.cell(0, 0).end(), v) != m.cell(0, 0).end());

  // default draw count: smallest nonempty cell floored at n_min
  const auto d = sample_cells(m, 100, std::nullopt, 42);
  CHECK(d.n_sample == 100);  // min nonempty is 50, floored up to n_min
  const auto d2 = sample_cells(m, 30, std::nullopt, 42);
  CHECK(d2.n_sample == 50);
  CHECK(d2.at(1, 1).size() == 50);

  // with replacement when the buffer is between n_min and n_sample
  const auto r = sample_cells(m, 40, 120, 42);
  CHECK(r.at(1, 0).size() == 120);
}

TEST_CASE("update_bank merges with the staleness exponent") {
  EmConfig cfg;
  cfg.components = 2;
  GmmBank bank(2, cfg);
  RandomEngine rng(13);

  for (int i = 0; i < 3; ++i) update_bank(bank, Domain::kSource, empty_round(2), cfg);
  CHECK(bank.staleness(Domain::kSource, 0, 0) == 3);
  CHECK_FALSE(bank.estimated(Domain::kSource, 0, 0));

  CellSamples s = empty_round(2);
  auto& cell = s.cells[0];
  for (int i = 0; i < 300; ++i) cell.push_back(rng.normal(1.0, 0.5));
  s.skipped[0] = false;

  const GaussianMixture before = bank.mixture(Domain::kSource, 0, 0);
  const GaussianMixture expect = momentum_merge(before, em_fit(before, cell, cfg), cfg.momentum, 4);
  update_bank(bank, Domain::kSource, s, cfg);
  const GaussianMixture& got = bank.mixture(Domain::kSource, 0, 0);
  for (std::size_t j = 0; j < got.size(); ++j) {
    CHECK(got.components()[j].mean == expect.components()[j].mean);
    CHECK(got.components()[j].std_dev == expect.components()[j].std_dev);
    CHECK(got.components()[j].weight == expect.components()[j].weight);
  }
  CHECK(bank.staleness(Domain::kSource, 0, 0) == 0);
  CHECK(bank.estimated(Domain::kSource, 0, 0));
  // untouched cells only age; their parameters stay put
  CHECK(bank.staleness(Domain::kSource, 1, 1) == 4);
  CHECK(bank.mixture(Domain::kSource, 1, 1).components()[0].mean ==
        GmmBank::default_mixture(cfg).components()[0].mean);
}

TEST_CASE("accumulate rejects mismatched class counts") {
  LogitSetMatrix m(3);
  LogitBatch batch{{rec({1.0, 2.0}, 0)}, 2};
  CHECK_THROWS_AS(accumulate(m, batch), std::invalid_argument);
  CHECK_THROWS_AS(m.add(0, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(m.add(5, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("repeated identical samples pull the cell mean in monotonically") {
  EmConfig cfg;
  cfg.components = 1;
  GmmBank bank(1, cfg);
  RandomEngine rng(17);
  CellSamples s = empty_round(1);
  double sum = 0.0;
  for (int i = 0; i < 400; ++i) {
    const double v = rng.normal(3.0, 0.4);
    s.cells[0].push_back(v);
    sum += v;
  }
  s.skipped[0] = false;
  const double target = sum / 400.0;
  double prev = std::abs(bank.mixture(Domain::kSource, 0, 0).components()[0].mean - target);
  for (int round = 0; round < 30; ++round) {
    update_bank(bank, Domain::kSource, s, cfg);
    const double d = std::abs(bank.mixture(Domain::kSource, 0, 0).components()[0].mean - target);
    CHECK(d <= prev + 1e-12);
    prev = d;
  }
}

TEST_CASE("anchors come from pooled source samples only") {
  EmConfig cfg;
  cfg.components = 1;
  GmmBank bank(2, cfg);
  RandomEngine rng(19);

  CellSamples s = empty_round(2);
  for (std::size_t idx : {std::size_t{0}, std::size_t{3}})  // diagonal cells
    for (int i = 0; i < 200; ++i) s.cells[idx].push_back(rng.normal(4.0, 0.5));
  for (std::size_t idx : {std::size_t{1}, std::size_t{2}})  // off-diagonal cells
    for (int i = 0; i < 200; ++i) s.cells[idx].push_back(rng.normal(-4.0, 0.5));
  s.skipped.assign(4, false);

  // manual expectation follows the library's own pooling order
  std::vector<double> pos_pool, neg_pool;
  pos_pool.insert(pos_pool.end(), s.cells[0].begin(), s.cells[0].end());
  pos_pool.insert(pos_pool.end(), s.cells[3].begin(), s.cells[3].end());
  neg_pool.insert(neg_pool.end(), s.cells[1].begin(), s.cells[1].end());
  neg_pool.insert(neg_pool.end(), s.cells[2].begin(), s.cells[2].end());
  const GaussianMixture expect_pos =
      momentum_merge(bank.anchor_pos(), em_fit(bank.anchor_pos(), pos_pool, cfg), cfg.momentum, 1);

  update_bank(bank, Domain::kSource, s, cfg);
  CHECK(bank.anchors_estimated());
  CHECK(bank.anchor_pos().components()[0].mean == expect_pos.components()[0].mean);

  const GaussianMixture pos_before = bank.anchor_pos();
  const GaussianMixture neg_before = bank.anchor_neg();
  update_bank(bank, Domain::kTarget, s, cfg);
  CHECK(bank.anchor_pos().components()[0].mean == pos_before.components()[0].mean);
  CHECK(bank.anchor_neg().components()[0].mean == neg_before.components()[0].mean);
}

TEST_CASE("empirical bias") {
  SUBCASE("perfect predictions have zero bias") {
    LogitBatch batch{{}, 3};
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 5; ++i) {
        std::vector<double> v(3, 0.0);
        v[static_cast<std::size_t>(c)] = 4.0;
        batch.records.push_back(rec(std::move(v), c));
      }
    for (double b : empirical_bias(batch, 3)) CHECK(b == APPROX_ABS(0.0, 1e-12));
  }

  SUBCASE("a degenerate scorer concentrates all bias") {
    LogitBatch batch{{rec({0.0, 9.0}, 0), rec({0.0, 9.0}, 1)}, 2};
    const auto b = empirical_bias(batch, 2);
    CHECK(b[0] == APPROX_ABS(-0.5, 1e-12));
    CHECK(b[1] == APPROX_ABS(0.5, 1e-12));
  }

  SUBCASE("random scorer on balanced data stays within sampling error") {
    RandomEngine rng(23);
    const int c = 4, per_class = 2000;
    LogitBatch batch{{}, c};
    for (int y = 0; y < c; ++y)
      for (int i = 0; i < per_class; ++i) {
        std::vector<double> v(static_cast<std::size_t>(c));
        for (auto& x : v) x = rng.normal();
        batch.records.push_back(rec(std::move(v), y));
      }
    // each row frequency has binomial std sqrt(p(1-p)/n) with p = 1/C; the
    // bias entry averages C independent rows
    const double se = std::sqrt((1.0 / c) * (1.0 - 1.0 / c) / per_class / c);
    for (double b : empirical_bias(batch, c)) CHECK(std::abs(b) <= 3.0 * se);
  }

  SUBCASE("bias sums to zero and survives duplication") {
    RandomEngine rng(29);
    LogitBatch batch{{}, 3};
    for (int y = 0; y < 3; ++y)
      for (int i = 0; i < 40; ++i) {
        std::vector<double> v = {rng.normal(), rng.normal(), rng.normal()};
        batch.records.push_back(rec(std::move(v), y));
      }
    const auto b = empirical_bias(batch, 3);
    CHECK(std::abs(b[0] + b[1] + b[2]) <= 1e-9);

    LogitBatch tripled{{}, 3};
    for (int k = 0; k < 3; ++k)
      for (const auto& r : batch.records) tripled.records.push_back(r);
    const auto b3 = empirical_bias(tripled, 3);
    for (std::size_t l = 0; l < 3; ++l) CHECK(b3[l] == APPROX_ABS(b[l], 1e-12));
  }

  SUBCASE("absent class is reported by name") {
    LogitBatch batch{{rec({1.0, 0.0}, 0)}, 2};
    CHECK_THROWS_WITH_AS(empirical_bias(batch, 2), doctest::Contains("class 1"),
                         std::invalid_argument);
  }
}

namespace {
GmmBank bank_with_cells(int c, const std::vector<std::vector<GaussianComponent>>& cells) {
  EmConfig cfg;
  cfg.components = 1;
  GmmBank bank(c, cfg);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j)
      for (Domain d : {Domain::kSource, Domain::kTarget})
        bank.set_mixture(d, i, j,
                         GaussianMixture(cells[static_cast<std::size_t>(i * c + j)]), true, 0);
  return bank;
}
}  // namespace

TEST_CASE("distributional bias") {
  SUBCASE("identical cells are unbiased") {
    const std::vector<GaussianComponent> same = {{0.6, 0.5, 1.0}, {0.4, -0.5, 0.8}};
    GmmBank bank = bank_with_cells(3, std::vector<std::vector<GaussianComponent>>(9, same));
    for (double b : distributional_bias(bank, Domain::kSource, 50000, 7))
      CHECK(b == APPROX_ABS(0.0, 0.01));
  }

  SUBCASE("fully separated cells concentrate the bias") {
    std::vector<std::vector<GaussianComponent>> cells(4);
    cells[0] = {{1.0, -5.0, 0.1}};  // (0,0)
    cells[1] = {{1.0, 5.0, 0.1}};   // (0,1)
    cells[2] = {{1.0, -5.0, 0.1}};  // (1,0)
    cells[3] = {{1.0, 5.0, 0.1}};   // (1,1)
    GmmBank bank = bank_with_cells(2, cells);
    const auto b = distributional_bias(bank, Domain::kSource, 50000, 7);
    CHECK(b[0] == APPROX_ABS(-0.5, 0.01));
    CHECK(b[1] == APPROX_ABS(0.5, 0.01));
  }

  SUBCASE("sum is zero and the estimate is stable in the sample count") {
    RandomEngine rng(31);
    std::vector<std::vector<GaussianComponent>> cells(9);
    for (auto& cell : cells)
      cell = {{0.5, rng.uniform(-2, 2), rng.uniform(0.4, 1.2)},
              {0.5, rng.uniform(-2, 2), rng.uniform(0.4, 1.2)}};
    GmmBank bank = bank_with_cells(3, cells);
    const auto b50 = distributional_bias(bank, Domain::kSource, 50000, 7);
    const auto b100 = distributional_bias(bank, Domain::kSource, 100000, 7);
    CHECK(std::abs(b50[0] + b50[1] + b50[2]) <= 1e-9);
    for (std::size_t l = 0; l < 3; ++l) CHECK(b100[l] == APPROX_ABS(b50[l], 0.01));
  }

  SUBCASE("unestimated cells are listed") {
    EmConfig cfg;
    cfg.components = 1;
    GmmBank bank(2, cfg);
    bank.set_mixture(Domain::kSource, 0, 0, GaussianMixture({{1.0, 0.0, 1.0}}), true, 0);
    CHECK_THROWS_WITH_AS(distributional_bias(bank, Domain::kSource, 100, 7),
                         doctest::Contains("(0,1)"), std::runtime_error);
  }
}

TEST_CASE("the two bias estimators agree on an independence-enforcing generator") {
  RandomEngine rng(37);
  const int c = 3;
  std::vector<std::vector<GaussianComponent>> cells(9);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      const double mu = (i == j) ? rng.uniform(0.5, 2.5) : rng.uniform(-2.5, -0.5);
      cells[static_cast<std::size_t>(i * c + j)] = {{0.7, mu, rng.uniform(0.5, 1.0)},
                                                    {0.3, mu + rng.uniform(-1, 1), rng.uniform(0.5, 1.0)}};
    }
  GmmBank bank = bank_with_cells(c, cells);

  // draw each class-conditional logit independently from the bank's own cells
  LogitBatch batch{{}, c};
  RandomEngine gen(41);
  std::vector<double> w;
  for (int n = 0; n < 50000; ++n) {
    const int y = static_cast<int>(gen.below(c));
    std::vector<double> v(static_cast<std::size_t>(c));
    for (int l = 0; l < c; ++l) {
      const auto& comps = bank.mixture(Domain::kSource, y, l).components();
      w.clear();
      for (const auto& comp : comps) w.push_back(comp.weight);
      const auto& pickd = comps[gen.pick(w)];
      v[static_cast<std::size_t>(l)] = gen.normal(pickd.mean, pickd.std_dev);
    }
    batch.records.push_back(rec(std::move(v), y));
  }
  const auto emp = empirical_bias(batch, c);
  const auto dist = distributional_bias(bank, Domain::kSource, 50000, 43);
  for (std::size_t l = 0; l < static_cast<std::size_t>(c); ++l)
    CHECK(dist[l] == APPROX_ABS(emp[l], 0.05));
}
