#include <gtest/gtest.h>

#include <numeric>

#include "emlab/geometry/gradients.hpp"
#include "emlab/geometry/lanczos.hpp"
#include "emlab/geometry/llc.hpp"
#include "emlab/geometry/representation.hpp"

using namespace emlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.name = "tiny";
  c.layers = 2;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  return c;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, rng));
  return qr.householderQ();
}

// Independent entropy oracle written directly from the definition.
double entropy_rank_oracle(const std::vector<double>& s) {
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  double h = 0.0;
  for (double v : s)
    if (v > 0) h -= (v / total) * std::log(v / total);
  return std::exp(h);
}

}  // namespace

TEST(EffectiveRank, Trivials) {
  EXPECT_DOUBLE_EQ(effective_rank({1, 1, 1, 1}), 4.0);
  EXPECT_DOUBLE_EQ(effective_rank({5, 0, 0}), 1.0);
  EXPECT_NEAR(effective_rank({2, 1, 1}), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_THROW(effective_rank({0, 0}), GeometryError);
  EXPECT_THROW(effective_rank({1, -1}), GeometryError);
}

TEST(EffectiveRank, ScaleInvarianceAndBounds) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> s;
    int positive = 0;
    for (int i = 0; i < 12; ++i) {
      const double v = rng.uniform() < 0.2 ? 0.0 : std::exp(3.0 * rng.normal());
      positive += v > 0;
      s.push_back(v);
    }
    if (positive == 0) continue;
    const double r = effective_rank(s);
    EXPECT_NEAR(r, entropy_rank_oracle(s), 1e-10);
    EXPECT_GE(r, 1.0 - 1e-12);
    EXPECT_LE(r, positive + 1e-12);
    std::vector<double> scaled;
    for (double v : s) scaled.push_back(v * 37.5);
    EXPECT_NEAR(effective_rank(scaled), r, 1e-12 * r);
  }
}

TEST(Spectrum, CleanAndSummary) {
  const auto s = summarize_spectrum({1.0, -1e-12, 3.0}, SpectrumSource::Fisher);
  EXPECT_EQ(s.values, (std::vector<double>{3.0, 1.0, 0.0}));
  EXPECT_EQ(s.source, SpectrumSource::Fisher);
  EXPECT_THROW(summarize_spectrum({1.0, -0.5}, SpectrumSource::Fisher), GeometryError);
  const auto z = summarize_spectrum({0.0, 0.0}, SpectrumSource::GradCov);
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.effective_rank, 1.0);
}

TEST(RankMe, IdenticalRowsDegenerate) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(10, 6) * 0.3;
  const auto r = rankme(x);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 1.0);
}

TEST(RankMe, OrthogonalRowsGiveRowCount) {
  Rng rng(2);
  const auto q = random_orthogonal(8, rng);
  EXPECT_NEAR(rankme(q.topRows(5), false).value, 5.0, 1e-9);
  EXPECT_NEAR(rankme(q, false).value, 8.0, 1e-9);
}

TEST(RankMe, MatchesSvdOracle) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd x = random_matrix(7 + t, 12 - t / 2, rng);
    Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
    std::vector<double> sv(svd.singularValues().data(), svd.singularValues().data() + svd.singularValues().size());
    for (double& v : sv)
      if (v < 1e-10) v = 0;
    EXPECT_NEAR(rankme(x).value, entropy_rank_oracle(sv), 1e-8);
  }
}

TEST(RankMe, TaskRankmePermutationInvariant) {
  const auto m = init_model<float>(named_config("nano"), 1);
  auto diag = make_fixed_set(task_spec(Task::ADD, Level::L2), 40, 77);
  const double a = task_rankme<float>(m, diag).value;
  Rng rng(3);
  shuffle(diag, rng);
  const double b = task_rankme<float>(m, diag).value;
  EXPECT_NEAR(a, b, 1e-9 * a + 1e-6);
  EXPECT_GT(a, 1.0);
  EXPECT_THROW(task_rankme<float>(m, diag, 5), GeometryError);
}

TEST(RankMe, AnswerPositionsExcludeSpacesAndEos) {
  const auto ex = render_example(task_spec(Task::COPY, Level::L1), std::vector<int>{1, 2, 3});
  const auto pos = content_answer_positions(ex);
  ASSERT_EQ(pos.size(), 3u);
  for (const auto& p : pos) {
    EXPECT_NE(p.label, Vocabulary::kSpace);
    EXPECT_NE(p.label, Vocabulary::kEos);
    EXPECT_EQ(ex.tokens[static_cast<std::size_t>(p.position) + 1], p.label);
  }
}

TEST(SpectralDecay, PowerLaws) {
  std::vector<double> inv, flat, sq;
  Rng rng(12);
  for (int i = 1; i <= 60; ++i) {
    inv.push_back(1.0 / i);
    flat.push_back(2.0);
    sq.push_back(std::pow(i, -2.0) * (1.0 + 0.01 * rng.normal()));
  }
  EXPECT_NEAR(spectral_decay_exponent(inv), 1.0, 1e-6);
  EXPECT_NEAR(spectral_decay_exponent(flat), 0.0, 1e-6);
  EXPECT_NEAR(spectral_decay_exponent(sq), 2.0, 0.1);
  EXPECT_THROW(spectral_decay_exponent({1, 0.5, 0.2, 0.1}), GeometryError);
}

TEST(Fisher, OrthonormalRowsAndRankOne) {
  Rng rng(5);
  const auto q = random_orthogonal(30, rng);
  const auto f = fisher_spectrum(q.topRows(6));
  for (double v : f.values) EXPECT_NEAR(v, 1.0, 1e-10);
  EXPECT_NEAR(f.effective_rank, 6.0, 1e-9);
  Eigen::MatrixXd same(5, 40);
  const Eigen::RowVectorXd row = random_matrix(1, 40, rng);
  for (int i = 0; i < 5; ++i) same.row(i) = row;
  const auto r1 = fisher_spectrum(same);
  EXPECT_NEAR(r1.effective_rank, 1.0, 1e-9);
  EXPECT_GT(r1.values[0], 0.0);
  EXPECT_EQ(r1.values[1], 0.0);
  Eigen::MatrixXd bad = same;
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fisher_spectrum(bad), GeometryError);
}

TEST(Fisher, GramTrickMatchesDenseParameterSpace) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_int(0, 14));
    const Eigen::Index p = 20 + static_cast<Eigen::Index>(rng.uniform_int(0, 180));
    const Eigen::MatrixXd g = random_matrix(n, p, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.transpose() * g, Eigen::EigenvaluesOnly);
    std::vector<double> big(es.eigenvalues().data(), es.eigenvalues().data() + p);
    std::sort(big.begin(), big.end(), std::greater<>());
    big.resize(static_cast<std::size_t>(std::min(n, p)));
    const auto f = fisher_spectrum(g);
    for (std::size_t i = 0; i < big.size(); ++i) EXPECT_NEAR(f.values[i], big[i], 1e-8 * big[0]);
    EXPECT_NEAR(f.effective_rank, entropy_rank_oracle(big), 1e-6);
  }
}

TEST(Fisher, ModelPerSampleGradients) {
  const auto m = init_model<float>(tiny_config(), 3);
  const auto ex = make_fixed_set(task_spec(Task::CMP, Level::L1), 12, 5);
  const auto f = fisher_spectrum<float>(m, ex);
  EXPECT_EQ(f.values.size(), 12u);
  EXPECT_GE(f.effective_rank, 1.0);
  EXPECT_LE(f.effective_rank, 12.0);
}

TEST(GradCov, IdenticalOrthogonalAndPrefix) {
  Rng rng(7);
  Eigen::MatrixXd same(6, 30);
  const Eigen::RowVectorXd row = random_matrix(1, 30, rng);
  for (int i = 0; i < 6; ++i) same.row(i) = row;
  const auto s = grad_cov_spectrum(same);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.effective_rank, 1.0);

  // centered orthonormal vectors: Gram = I - J/n, spectrum 1 (x n-1) and 0
  const auto q = random_orthogonal(20, rng);
  EXPECT_NEAR(grad_cov_rank(q.topRows(8)), 7.0, 1e-9);

  const Eigen::MatrixXd g = random_matrix(5, 40, rng);
  EXPECT_DOUBLE_EQ(grad_cov_rank(g, 1000), grad_cov_rank(g, 40));
  Eigen::MatrixXd cut = g.leftCols(10);
  EXPECT_NEAR(grad_cov_rank(g, 10), grad_cov_rank(cut, 10), 1e-12);
  EXPECT_THROW(grad_cov_rank(g.topRows(1)), GeometryError);
}

TEST(Lanczos, DiagonalToy) {
  const int n = 40;
  Eigen::VectorXd d(n);
  d << 3, 2, 1, 0.5;
  for (int i = 4; i < n; ++i) d[i] = 0.4 * std::pow(0.9, i);
  auto op = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return d.cwiseProduct(v); };
  const auto r = lanczos(op, n, 20, 1);
  EXPECT_NEAR(r.ritz[0], 3.0, 0.03);
  EXPECT_NEAR(r.ritz[1], 2.0, 0.02);
  EXPECT_NEAR(r.ritz[2], 1.0, 0.01);
}

TEST(Lanczos, FullKrylovRecoversSpectrum) {
  Rng rng(8);
  const auto q = random_orthogonal(10, rng);
  Eigen::VectorXd ev(10);
  for (int i = 0; i < 10; ++i) ev[i] = 0.7 * i - 2.0;
  const Eigen::MatrixXd a = q * ev.asDiagonal() * q.transpose();
  const auto r = lanczos([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, 10, 10, 3);
  std::vector<double> want(ev.data(), ev.data() + 10);
  std::sort(want.begin(), want.end(), std::greater<>());
  ASSERT_EQ(r.ritz.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(r.ritz[static_cast<std::size_t>(i)], want[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Lanczos, SaddleToy) {
  Rng rng(10);
  const int n = 60;
  const auto q = random_orthogonal(n, rng);
  Eigen::VectorXd ev(n);
  ev[0] = 4.0;
  ev[1] = -3.0;
  for (int i = 2; i < n; ++i) ev[i] = 0.2 * rng.normal();
  const Eigen::MatrixXd a = q * ev.asDiagonal() * q.transpose();
  const auto r = lanczos([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, n, 20, 2);
  EXPECT_NEAR(r.ritz.front(), 4.0, 0.04);
  EXPECT_NEAR(r.ritz.back(), -3.0, 0.03);
}

TEST(Lanczos, BreakdownFlagged) {
  // rank-2 operator: the Krylov space is exhausted after 2 steps
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6);
  a(0, 0) = 2;
  a(1, 1) = 1;
  const auto r = lanczos([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, 6, 5, 4);
  EXPECT_TRUE(r.breakdown);
  EXPECT_NEAR(r.ritz.front(), 2.0, 1e-9);
  EXPECT_THROW(lanczos([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, 6, 7, 4), GeometryError);
}

TEST(Hessian, TinyModelTopKIsFinite) {
  const auto m = init_model<float>(tiny_config(), 4);
  Rng rng(1);
  const auto batch = make_training_batch(8, rng);
  const auto h = hessian_topk<float>(m, batch, 5, 1);
  ASSERT_EQ(h.ritz.size(), 5u);
  for (double v : h.ritz) EXPECT_TRUE(std::isfinite(v));
  EXPECT_TRUE(std::is_sorted(h.ritz.begin(), h.ritz.end(), std::greater<>()));
  EXPECT_GT(h.ritz.front(), 0.0);
}

namespace {

// Gibbs average of L(theta) = a theta^2 / 2 under exp(-n beta L - gamma theta^2 / 2),
// by trapezoid quadrature.
double gibbs_quadratic_mean(double a, double nbeta, double gamma) {
  const double prec = nbeta * a + gamma;
  const double width = 12.0 / std::sqrt(prec);
  const int steps = 200001;
  double z = 0.0, m = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double th = -width + 2.0 * width * i / (steps - 1);
    const double w = std::exp(-0.5 * prec * th * th);
    z += w;
    m += w * 0.5 * a * th * th;
  }
  return m / z;
}

}  // namespace

TEST(Llc, QuadratureOracleOnQuadratic) {
  const double a = 2.0;
  SgldConfig cfg;
  cfg.steps = 200000;
  cfg.burn_in = 2000;
  cfg.eta = 1e-3;
  cfg.n = 100;
  cfg.beta = 1.0;
  cfg.gamma = 10.0;
  SgldLossFn<double> fn = [&](const Vec<double>& th, int, Vec<double>* g) {
    if (g) *g = a * th;
    return 0.5 * a * th.squaredNorm();
  };
  const auto est = run_sgld<double>(fn, Vec<double>::Zero(1), cfg, 5);
  const double want = gibbs_quadratic_mean(a, cfg.n * cfg.beta, cfg.gamma);
  EXPECT_NEAR(est.raw_elevation, want, 0.1 * want);
  EXPECT_NEAR(est.lambda_hat, cfg.n * est.raw_elevation, 1e-12);
  EXPECT_EQ(est.trace.size(), static_cast<std::size_t>(cfg.steps));
}

TEST(Llc, FlatLossGivesZero) {
  SgldConfig cfg;
  cfg.steps = 300;
  cfg.burn_in = 50;
  SgldLossFn<double> fn = [](const Vec<double>& th, int, Vec<double>* g) {
    if (g) *g = Vec<double>::Zero(th.size());
    return 1.25;
  };
  const auto est = run_sgld<double>(fn, Vec<double>::Zero(50), cfg, 1);
  EXPECT_EQ(est.raw_elevation, 0.0);
  EXPECT_EQ(est.lambda_hat, 0.0);
}

TEST(Llc, DivergenceDetectedAndConfigValidated) {
  SgldConfig cfg;
  cfg.steps = 200;
  cfg.burn_in = 10;
  cfg.eta = 1.0;
  cfg.gamma = 0.0;
  // gradient pointing uphill: the chain runs away
  SgldLossFn<double> up = [](const Vec<double>& th, int, Vec<double>* g) {
    if (g) *g = -5.0 * th;
    return 1.0 + 10.0 * th.squaredNorm();
  };
  EXPECT_THROW(run_sgld<double>(up, Vec<double>::Ones(4), cfg, 1), GeometryError);
  SgldConfig bad;
  bad.burn_in = bad.steps;
  EXPECT_THROW(bad.validate(), GeometryError);
}

TEST(Llc, ModelChainIsDeterministicAndFinite) {
  const auto m = init_model<float>(tiny_config(), 2);
  SgldConfig cfg;
  cfg.steps = 30;
  cfg.burn_in = 10;
  cfg.batch_size = 8;
  const auto spec = task_spec(Task::ADD, Level::L1);
  const auto a = estimate_llc<float>(m, spec, cfg, 9);
  const auto b = estimate_llc<float>(m, spec, cfg, 9);
  EXPECT_TRUE(std::isfinite(a.lambda_hat));
  EXPECT_EQ(a.lambda_hat, b.lambda_hat);
  EXPECT_EQ(a.trace.front(), 0.0);
  const auto reps = estimate_llc_repeats<float>(m, spec, cfg, 9, 3);
  EXPECT_EQ(reps.size(), 3u);
  EXPECT_GE(llc_cv(reps), 0.0);
}
