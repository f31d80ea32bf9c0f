#include <gtest/gtest.h>

#include <numeric>

#include "emlab/analysis/concordance.hpp"
#include "emlab/analysis/fisher_llc.hpp"
#include "emlab/analysis/floors.hpp"
#include "emlab/analysis/leadlag.hpp"
#include "emlab/analysis/metric_sweep.hpp"
#include "support/fixtures.hpp"

using namespace emlab;

namespace {

std::vector<double> white_noise(int n, Rng& rng) {
  std::vector<double> x;
  for (int i = 0; i < n; ++i) x.push_back(rng.normal());
  return x;
}

std::vector<double> random_walk(int n, Rng& rng) {
  std::vector<double> x{0.0};
  for (int i = 1; i < n; ++i) x.push_back(x.back() + rng.normal());
  return x;
}

// Reference CCF: explicit slicing and a textbook Pearson on each lag, scanning
// lags by increasing |k|, negative first, keeping strict improvements.
LeadLagResult reference_ccf(const std::vector<double>& g, const std::vector<double>& b, int max_lag, double thr) {
  std::vector<double> dg, db;
  for (std::size_t i = 1; i < g.size(); ++i) {
    dg.push_back(g[i] - g[i - 1]);
    db.push_back(b[i] - b[i - 1]);
  }
  const int n = static_cast<int>(dg.size());
  auto corr = [](const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double a = 0, bx = 0, by = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      a += (x[i] - mx) * (y[i] - my);
      bx += (x[i] - mx) * (x[i] - mx);
      by += (y[i] - my) * (y[i] - my);
    }
    return a / std::sqrt(bx * by);
  };
  LeadLagResult best{0, 0.0, LeadLagClass::None};
  bool first = true;
  std::vector<int> order{0};
  for (int k = 1; k <= max_lag; ++k) {
    order.push_back(-k);
    order.push_back(k);
  }
  for (int k : order) {
    std::vector<double> x, y;
    for (int t = 0; t < n; ++t)
      if (t - k >= 0 && t - k < n) {
        x.push_back(dg[static_cast<std::size_t>(t)]);
        y.push_back(db[static_cast<std::size_t>(t - k)]);
      }
    const double r = corr(x, y);
    if (first || std::abs(r) > std::abs(best.r)) {
      best.lag = k;
      best.r = r;
      first = false;
    }
  }
  best.cls = std::abs(best.r) > thr ? (best.lag < 0 ? LeadLagClass::Precursor
                                                    : (best.lag == 0 ? LeadLagClass::Synchronous : LeadLagClass::Lagging))
                                    : LeadLagClass::None;
  return best;
}

Series series_of(const std::vector<double>& values, std::int64_t stride = 100) {
  Series s;
  for (std::size_t i = 0; i < values.size(); ++i) s.push(stride * static_cast<std::int64_t>(i), values[i]);
  return s;
}

}  // namespace

TEST(LeadLag, ShiftPropertyExact) {
  Rng rng(1);
  for (int k = 1; k <= 20; ++k) {
    const auto base = random_walk(120 + k, rng);
    // behavior repeats geometry k checkpoints later
    std::vector<double> geo(base.begin() + k, base.end());
    std::vector<double> beh(base.begin(), base.end() - k);
    const auto r = ccf_lead_lag(geo, beh, 20, 0.3);
    EXPECT_EQ(r.lag, -k) << k;
    EXPECT_NEAR(r.r, 1.0, 1e-12);
    EXPECT_EQ(r.cls, LeadLagClass::Precursor);
  }
}

TEST(LeadLag, IdentityIsSynchronous) {
  Rng rng(2);
  const auto x = random_walk(80, rng);
  const auto r = ccf_lead_lag(x, x);
  EXPECT_EQ(r.lag, 0);
  EXPECT_NEAR(r.r, 1.0, 1e-12);
  EXPECT_EQ(r.cls, LeadLagClass::Synchronous);
}

TEST(LeadLag, LaggingAndErrors) {
  Rng rng(3);
  const auto base = random_walk(100, rng);
  std::vector<double> g(base.begin(), base.end() - 2), b(base.begin() + 2, base.end());
  EXPECT_EQ(ccf_lead_lag(g, b).lag, 2);
  EXPECT_EQ(ccf_lead_lag(g, b).cls, LeadLagClass::Lagging);
  std::vector<double> lin;
  for (int i = 0; i < 50; ++i) lin.push_back(2.0 * i);
  EXPECT_THROW(ccf_lead_lag(lin, base), AnalysisError);
  EXPECT_THROW(ccf_lead_lag(std::vector<double>(22, 1.0), std::vector<double>(22, 1.0)), AnalysisError);
  EXPECT_THROW(ccf_lead_lag(g, std::vector<double>(g.size() + 1, 0.0)), AnalysisError);
}

TEST(LeadLag, MatchesReferenceImplementation) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const int n = 30 + static_cast<int>(rng.uniform_int(0, 120));
    const auto g = random_walk(n, rng);
    auto b = random_walk(n, rng);
    if (t % 2 == 0)
      for (int i = 3; i < n; ++i) b[static_cast<std::size_t>(i)] += 0.8 * g[static_cast<std::size_t>(i - 3)];
    const auto got = ccf_lead_lag(g, b);
    const auto want = reference_ccf(g, b, 20, 0.3);
    EXPECT_EQ(got.lag, want.lag);
    EXPECT_NEAR(got.r, want.r, 1e-10);
    EXPECT_EQ(got.cls, want.cls);
  }
}

TEST(LeadLag, WhiteNoiseNullRateMatchesMonteCarloOracle) {
  // the oracle rate comes from the reference implementation on independent draws
  auto none_rate = [](int n, int trials, std::uint64_t seed, bool reference) {
    Rng rng(seed);
    int none = 0;
    for (int t = 0; t < trials; ++t) {
      const auto g = white_noise(n, rng);
      const auto b = white_noise(n, rng);
      const auto r = reference ? reference_ccf(g, b, 20, 0.3) : ccf_lead_lag(g, b, 20, 0.3);
      none += r.cls == LeadLagClass::None;
    }
    return static_cast<double>(none) / trials;
  };
  const double oracle100 = none_rate(100, 2000, 11, true);
  const double got100 = none_rate(100, 2000, 12, false);
  EXPECT_NEAR(got100, oracle100, 4.0 * std::sqrt(oracle100 * (1 - oracle100) / 1000.0));
  // at length 100 forty-one lags give many chances to pass |r| > 0.3; longer series are quiet
  EXPECT_GT(oracle100, 0.40);
  EXPECT_LT(oracle100, 0.65);
  EXPECT_GE(none_rate(200, 1000, 13, false), 0.95);
}

TEST(LeadLag, ThresholdSensitivityOnlyFlipsBand) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const auto g = random_walk(60, rng);
    auto b = random_walk(60, rng);
    for (std::size_t i = 2; i < b.size(); ++i) b[i] += 0.3 * (t % 5) * g[i - 2];
    const auto lo = ccf_lead_lag(g, b, 20, 0.2);
    const auto hi = ccf_lead_lag(g, b, 20, 0.4);
    if (lo.cls != hi.cls) {
      EXPECT_GT(std::abs(lo.r), 0.2);
      EXPECT_LE(std::abs(lo.r), 0.4);
    }
    EXPECT_EQ(lo.lag, hi.lag);
  }
}

TEST(PrecursorRate, Counting) {
  std::vector<LabeledLeadLag> v;
  const LeadLagClass cls[] = {LeadLagClass::Precursor, LeadLagClass::Precursor, LeadLagClass::Synchronous,
                              LeadLagClass::Precursor};
  const Task tasks[] = {Task::ADD, Task::MOD, Task::COPY, Task::MUL};
  for (int i = 0; i < 4; ++i) v.push_back({tasks[i], Level::L3, "nano", {-1, 0.5, cls[i]}});
  EXPECT_DOUBLE_EQ(precursor_rate(v).value(), 0.75);
  EXPECT_EQ(precursor_rate(v, TaskFilter::Hard).hits, 3);
  EXPECT_EQ(precursor_rate(v, TaskFilter::Hard).total, 3);
  EXPECT_EQ(precursor_rate(v, TaskFilter::Easy).hits, 0);
  v.pop_back();
  v.erase(v.begin(), v.begin() + 2);
  EXPECT_THROW(precursor_rate(v, TaskFilter::Hard), AnalysisError);
}

TEST(Floors, DirectStatistics) {
  const auto s = floor_stats_from_values({2.0, 2.1, 2.3, 2.0, 2.2});
  EXPECT_NEAR(s.mean, 2.12, 1e-12);
  // population standard deviation oracle: sqrt(0.068 / 5)
  EXPECT_NEAR(s.stdev, std::sqrt(0.068 / 5.0), 1e-12);
  EXPECT_NEAR(s.cv, std::sqrt(0.068 / 5.0) / 2.12, 1e-12);
  EXPECT_NEAR(s.cv, 0.057, 0.003);
  EXPECT_THROW(floor_stats_from_values({2.0}), AnalysisError);
  EXPECT_THROW(floor_stats_from_values({2.0, 0.0}), AnalysisError);
}

TEST(Floors, IdenticalSeriesZeroCvAndFloorBound) {
  const auto s = series_of({10, 6, 3, 2.5, 4, 7, 9, 9.5});
  std::map<std::string, std::vector<Series>> per{{"MOD_L3", {s, s, s}}};
  const auto st = collapse_floor_stats(per);
  EXPECT_EQ(st.at("MOD_L3").cv, 0.0);
  EXPECT_DOUBLE_EQ(st.at("MOD_L3").floors[0], 2.5);
  EXPECT_DOUBLE_EQ(st.at("MOD_L3").init_over_floor[0], 4.0);
  for (double v : s.values) EXPECT_LE(st.at("MOD_L3").floors[0], v);
  // restricted search window ignores late dips
  auto late = series_of({10, 6, 5, 5.5, 6, 7, 1.0, 9.5});
  EXPECT_DOUBLE_EQ(collapse_floor(late, 0.25).value, 6);
  EXPECT_DOUBLE_EQ(collapse_floor(late, 1.0).value, 1.0);
}

TEST(TopDown, Examples) {
  const auto a = topdown_check({8.2, 5.0, 3.1, 1.7});
  EXPECT_TRUE(a.top_down);
  EXPECT_DOUBLE_EQ(a.fraction, 1.0);
  const auto b = topdown_check({3, 3, 3});
  EXPECT_FALSE(b.top_down);
  EXPECT_DOUBLE_EQ(b.fraction, 0.0);
  const auto c = topdown_check({3, 4, 2});
  EXPECT_FALSE(c.top_down);
  EXPECT_DOUBLE_EQ(c.fraction, 0.5);
  EXPECT_THROW(topdown_check({1.0}), AnalysisError);
}

TEST(Spearman, Examples) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-12);
  EXPECT_THROW(spearman({1, 2}, {1, 2}), AnalysisError);
  EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), AnalysisError);
  EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), AnalysisError);
  // ties get average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3)
  EXPECT_NEAR(spearman({5, 5, 9}, {1, 2, 3}), 0.8660254037844386, 1e-12);
}

TEST(Spearman, MonotoneTransformInvariance) {
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> x, y, fx, gy;
    for (int i = 0; i < 25; ++i) {
      x.push_back(rng.normal());
      y.push_back(x.back() + rng.normal());
      fx.push_back(std::exp(x.back()));
      gy.push_back(std::pow(y.back(), 3.0));
    }
    const double r = spearman(x, y);
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
    EXPECT_NEAR(spearman(fx, gy), r, 1e-12);
  }
}

TEST(Bootstrap, ContainsPointAndShrinks) {
  Rng rng(7);
  std::vector<double> outcomes;
  for (int i = 0; i < 320; ++i) outcomes.push_back(rng.uniform() < 0.7 ? 1.0 : 0.0);
  double prev_width = 2.0;
  for (std::size_t n : {20u, 80u, 320u}) {
    const std::vector<double> sub(outcomes.begin(), outcomes.begin() + static_cast<std::ptrdiff_t>(n));
    const auto ci = bootstrap_mean_ci(sub, 10000, 0.95, 3);
    const double point = mean_of(sub);
    EXPECT_LE(ci.lo, point);
    EXPECT_GE(ci.hi, point);
    EXPECT_LT(ci.hi - ci.lo, prev_width);
    prev_width = ci.hi - ci.lo;
  }
  for (const auto& deg : {std::vector<double>(9, 1.0), std::vector<double>(9, 0.0)}) {
    const auto ci = bootstrap_mean_ci(deg);
    EXPECT_EQ(ci.lo, deg[0]);
    EXPECT_EQ(ci.hi, deg[0]);
  }
  EXPECT_THROW(bootstrap_mean_ci({}), AnalysisError);
}

TEST(Concordance, PerfectAndInverted) {
  std::vector<ConcordanceItem> items;
  std::int64_t step = 100;
  for (Task t : kAllTasks) {
    items.push_back({t, Level::L3, "nano", static_cast<double>(step), step});
    step += 100;
  }
  auto rep = concordance_suite(items, {Level::L3, Level::L2, 2000, 1});
  ASSERT_TRUE(rep.cross_class.rate.has_value());
  EXPECT_EQ(*rep.cross_class.rate, 1.0);
  EXPECT_EQ(rep.cross_class.total, 15);
  EXPECT_EQ(*rep.within_easy.rate, 1.0);
  EXPECT_EQ(rep.within_easy.total, 10);
  EXPECT_EQ(rep.within_hard.total, 3);
  EXPECT_FALSE(rep.swap.rate.has_value());
  EXPECT_EQ(rep.swap_pairs, 0);
  for (auto& it : items) it.value = -*it.value;
  rep = concordance_suite(items, {Level::L3, Level::L2, 2000, 1});
  EXPECT_EQ(*rep.cross_class.rate, 0.0);
  EXPECT_EQ(*rep.within_hard.rate, 0.0);
  EXPECT_LE(rep.cross_class.ci->lo, 0.0);
}

TEST(Concordance, SwapTrialsPerSize) {
  // ADD before MOD in nano, after it in micro; values predict nano only
  std::vector<ConcordanceItem> items = {
      {Task::ADD, Level::L2, "nano", 1.0, 1000}, {Task::MOD, Level::L2, "nano", 2.0, 2000},
      {Task::ADD, Level::L2, "micro", 1.0, 3000}, {Task::MOD, Level::L2, "micro", 2.0, 2000},
      {Task::MUL, Level::L2, "nano", 5.0, 9000}, {Task::MUL, Level::L2, "micro", 5.0, 9000},
  };
  const auto rep = concordance_suite(items, {Level::L3, Level::L2, 1000, 1});
  EXPECT_EQ(rep.swap_pairs, 1);
  EXPECT_EQ(rep.swap.total, 2);
  EXPECT_EQ(rep.swap.hits, 1);
  EXPECT_FALSE(rep.cross_class.rate.has_value());
}

TEST(Concordance, FrozenPublishedInputsReproduceCounts) {
  const auto items = fixtures::emergence_floor_items();
  ASSERT_EQ(items.size(), 120u);
  const auto rep = concordance_suite(items);
  EXPECT_EQ(rep.cross_class.hits, 65);
  EXPECT_EQ(rep.cross_class.total, 70);
  EXPECT_EQ(rep.within_hard.hits, 9);
  EXPECT_EQ(rep.within_hard.total, 13);
  EXPECT_EQ(rep.within_easy.hits, 23);
  EXPECT_EQ(rep.within_easy.total, 44);
  EXPECT_EQ(rep.swap.hits, 9);
  EXPECT_EQ(rep.swap.total, 35);
  EXPECT_EQ(std::lround(100 * *rep.cross_class.rate), 93);
  EXPECT_EQ(std::lround(100 * *rep.within_hard.rate), 69);
  EXPECT_EQ(std::lround(100 * *rep.within_easy.rate), 52);
  EXPECT_EQ(std::lround(100 * *rep.swap.rate), 26);
  for (const auto* c : {&rep.cross_class, &rep.within_hard, &rep.within_easy, &rep.swap}) {
    EXPECT_LE(c->ci->lo, *c->rate);
    EXPECT_GE(c->ci->hi, *c->rate);
  }
}

TEST(FisherLlc, IdentityAndNull) {
  std::map<std::string, std::vector<FisherLlcPoint>> per;
  Rng rng(8);
  for (const std::string task : {"ADD_L3", "MOD_L3"})
    for (int s = 0; s < 30; ++s) {
      FisherLlcPoint p;
      p.step = 100 * s;
      for (int k = 0; k < 20; ++k) p.fisher_top.push_back(std::exp(-0.3 * k + 0.2 * rng.normal()));
      std::sort(p.fisher_top.begin(), p.fisher_top.end(), std::greater<>());
      p.fisher_effrank = 5.0 + rng.normal();
      p.llc = p.fisher_effrank;
      per[task].push_back(p);
    }
  const auto same = fisher_llc_compare(per);
  ASSERT_EQ(same.size(), 10u);
  EXPECT_EQ(same[0].strategy, "raw");
  EXPECT_NEAR(*same[0].rho, 1.0, 1e-12);
  EXPECT_EQ(same[0].points, 60);

  int small = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    for (auto& [task, pts] : per)
      for (auto& p : pts) p.llc = rng.normal();
    const auto r = fisher_llc_compare(per, MpContext{200, 1e5});
    small += std::abs(*r[0].rho) < 0.2;
    for (const auto& s : r) ASSERT_TRUE(s.rho.has_value()) << s.strategy;
  }
  EXPECT_GE(small, trials * 8 / 10);

  per["ADD_L3"][3].step = per["ADD_L3"][2].step;
  EXPECT_THROW(fisher_llc_compare(per), AnalysisError);
}

TEST(FisherLlc, StrategyValues) {
  FisherLlcPoint p;
  p.fisher_top = {4, 2, 1, 1};
  p.fisher_effrank = 3.5;
  const MpContext mp{200, 1e6};
  EXPECT_DOUBLE_EQ(detail::fisher_statistic("raw", p, mp), 3.5);
  EXPECT_DOUBLE_EQ(detail::fisher_statistic("spectral_gap", p, mp), 2.0);
  EXPECT_DOUBLE_EQ(detail::fisher_statistic("normalized_trace", p, mp), 2.0);
  EXPECT_DOUBLE_EQ(detail::fisher_statistic("participation", p, mp), 64.0 / 22.0);
  EXPECT_NEAR(detail::fisher_statistic("entropy", p, mp), std::log(effective_rank({4, 2, 1, 1})), 1e-12);
  // MP edge ~ mean 2.0: only the top eigenvalue survives
  EXPECT_DOUBLE_EQ(detail::fisher_statistic("mp_threshold", p, mp), 1.0);
  EXPECT_EQ(detail::moving_average({1, 2, 3, 4, 5}, 5), (std::vector<double>{2, 2.5, 3, 3.5, 4}));
  const auto pts = align_fisher_llc({{0, {1.0}}, {200, {1.0}}}, {{0, 2.0}, {100, 3.0}, {200, 4.0}}, {{0, 1.0}, {200, 2.0}});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[1].step, 200);
  EXPECT_EQ(pts[1].fisher_effrank, 4.0);
}

TEST(MetricSweep, ScalarHelpers) {
  EXPECT_DOUBLE_EQ(spectral_gap({4, 2, 1}), 2.0);
  EXPECT_DOUBLE_EQ(eigen_concentration({5, 3, 2}), 0.5);
  EXPECT_DOUBLE_EQ(layer_slope({8, 6, 4, 2}), -2.0);
  EXPECT_THROW(spectral_gap({1}), AnalysisError);
  EXPECT_THROW(layer_slope({1}), AnalysisError);
  EXPECT_EQ(sweep_metrics().size(), 13u);
}

TEST(MetricSweep, SyntheticRunClassifiesLeadingRankme) {
  Rng rng(9);
  const int n = 60;
  RunGeometry g;
  std::map<std::string, Series> acc;
  std::map<std::string, std::optional<std::int64_t>> em;
  for (const std::string combo : {"ADD_L3", "COPY_L1", "MOD_L2"}) {
    std::vector<double> rank(n), a(n);
    // rank collapses to a floor at checkpoint 10 then recovers; accuracy follows 3 checkpoints later
    for (int i = 0; i < n; ++i) {
      const double t = i;
      rank[i] = 10.0 - 8.0 * std::exp(-0.5 * (t - 10) * (t - 10) / 9.0) + 0.01 * t + 0.02 * rng.normal();
    }
    for (int i = 0; i < n; ++i) a[i] = i >= 3 ? 1.0 - rank[i - 3] / 10.0 : 0.0;
    for (int i = 0; i < n; ++i) a[i] += 0.001 * rng.normal();
    g.at("rankme", combo) = series_of(rank);
    acc[combo] = series_of(a);
    em[combo] = 1000;
  }
  const auto out = metric_sweep(g, acc, em);
  EXPECT_EQ(out.rows.size(), 13u * 3u);
  EXPECT_EQ(out.summary.size(), 13u);
  bool found = false;
  for (const auto& row : out.rows) {
    if (row.metric == "floor_value" || row.metric == "recovery_magnitude") {
      EXPECT_TRUE(row.ok) << row.metric << " " << row.note;
    }
    if (row.metric == "llc_value") {
      EXPECT_FALSE(row.ok);
      EXPECT_EQ(row.note, "missing llc");
    }
    if (row.metric == "recovery_magnitude" && row.ok) {
      found = true;
      EXPECT_EQ(row.result.cls, LeadLagClass::Precursor) << row.combo << " lag " << row.result.lag;
    }
  }
  EXPECT_TRUE(found);
  for (const auto& s : out.summary)
    if (s.metric == "llc_value") EXPECT_EQ(s.skipped, 3);
}

TEST(MetricSweep, SeriesDefinitions) {
  RunGeometry g;
  g.at("rankme", "ADD_L3") = series_of({10, 4, 2, 3, 5, 6});
  g.at("llc", "ADD_L3") = series_of({1, 1.1, 3.0, 3.1, 3.2, 3.3});
  for (int l = 0; l < 3; ++l) g.at("layer_rankme", "ADD_L3", l) = series_of(std::vector<double>(6, 8.0 - 2.0 * l));
  g.at("fisher_top1", "ADD_L3") = series_of({4, 4, 4, 4, 4, 4});
  g.at("fisher_top2", "ADD_L3") = series_of({2, 2, 1, 1, 1, 1});
  std::string note;
  const std::vector<std::string> combos{"ADD_L3"};
  const auto ct = metric_series("collapse_timing", "ADD_L3", g, combos, note);
  EXPECT_EQ(ct->values, (std::vector<double>{0, 1, 1, 1, 1, 1}));
  const auto fv = metric_series("floor_value", "ADD_L3", g, combos, note);
  EXPECT_EQ(fv->values, (std::vector<double>{10, 4, 2, 2, 2, 2}));
  const auto rm = metric_series("recovery_magnitude", "ADD_L3", g, combos, note, SweepOptions{"rankme", 20, 0.3, 1.0});
  EXPECT_EQ(rm->values, (std::vector<double>{0, 0, 0, 1, 3, 4}));
  const auto lt = metric_series("llc_transition", "ADD_L3", g, combos, note);
  EXPECT_EQ(lt->values, (std::vector<double>{0, 0, 1, 1, 1, 1}));
  const auto sl = metric_series("layer_rankme_slope", "ADD_L3", g, combos, note);
  for (double v : sl->values) EXPECT_DOUBLE_EQ(v, -2.0);
  const auto gap = metric_series("spectral_gap", "ADD_L3", g, combos, note);
  EXPECT_EQ(gap->values, (std::vector<double>{2, 2, 4, 4, 4, 4}));
  EXPECT_FALSE(metric_series("gradient_alignment", "ADD_L3", g, combos, note).has_value());
  EXPECT_EQ(note, "missing grad_align");
}
