#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrefine/errors.hpp"
#include "mrefine/ncc.hpp"
#include "mrefine/synthgen.hpp"
#include "rank_oracle.hpp"
#include "test_util.hpp"

namespace mrefine {
namespace {

using testing::random_tensor;

DenseTensor gaussian_base(std::size_t d, std::size_t n, std::uint64_t seed) {
  DenseTensor t({d, n});
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

TEST(BuildBasis, ZeroNoiseIsIdentity) {
  const auto base = random_tensor({6, 4}, 1);
  EXPECT_EQ(build_basis(base, 0, 7), base);
  EXPECT_THROW(build_basis(base, -1, 7), InvalidArgument);
}

TEST(BuildBasis, AppendsSeededGaussianColumns) {
  const auto base = random_tensor({256, 60}, 2);
  const auto b = build_basis(base, 20, 11);
  ASSERT_EQ(b.dims(), (std::vector<std::size_t>{256, 80}));
  for (std::size_t k = 0; k < 256; ++k)
    for (std::size_t j = 0; j < 60; ++j) ASSERT_EQ(b.at(k, j), base.at(k, j));
  EXPECT_EQ(b, build_basis(base, 20, 11));
  EXPECT_NE(b, build_basis(base, 20, 12));
  // Standard normal noise: sample moments over 5120 draws.
  double sum = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < 256; ++k)
    for (std::size_t j = 60; j < 80; ++j) {
      sum += b.at(k, j);
      sq += double(b.at(k, j)) * b.at(k, j);
    }
  EXPECT_NEAR(sum / 5120, 0.0, 0.06);
  EXPECT_NEAR(sq / 5120, 1.0, 0.08);
}

TEST(BuildBasis, NormalizedNoiseHasUnitColumns) {
  const auto b = build_basis(random_tensor({32, 3}, 3), 5, 4, true);
  for (std::size_t j = 3; j < 8; ++j) {
    double n = 0.0;
    for (std::size_t k = 0; k < 32; ++k) n += double(b.at(k, j)) * b.at(k, j);
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
}

TEST(BuildBasis, FullColumnRankAcrossSeeds) {
  int full_svd = 0, full_elim = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto b = build_basis(gaussian_base(256, 60, 100 + s), 20, 200 + s);
    full_svd += oracle::svd_rank(b) == 80;
    full_elim += oracle::elimination_rank(b) == 80;
  }
  EXPECT_EQ(full_svd, 20);
  EXPECT_EQ(full_elim, 20);
}

TEST(RankOracle, DetectsDependentColumns) {
  auto base = gaussian_base(40, 6, 5);
  for (std::size_t k = 0; k < 40; ++k) base.at(k, 5) = base.at(k, 0) - 2.0f * base.at(k, 3);
  EXPECT_EQ(oracle::elimination_rank(base, 1e-5), 5u);
  EXPECT_EQ(oracle::svd_rank(base), 5u);
}

TEST(Compose, HandValues) {
  const DenseTensor basis({2, 2}, std::vector<float>{1, 1, 1, -1});
  const DenseTensor alpha({2, 1}, std::vector<float>{0.5f, 0.5f});
  const auto t = compose(basis, alpha);
  EXPECT_FLOAT_EQ(t[0], 1.0f);
  EXPECT_FLOAT_EQ(t[1], 0.0f);
  const auto b = random_tensor({5, 3}, 6);
  DenseTensor onehot({3, 1});
  onehot[2] = 1.0f;
  const auto sel = compose(b, onehot);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(sel[k], b.at(k, 2));
  const auto zero = compose(b, DenseTensor({3, 4}));
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(compose(b, DenseTensor({4, 1})), InvalidArgument);
}

TEST(Compose, LinearInAlpha) {
  const auto b = random_tensor({16, 7}, 7);
  const auto a1 = random_tensor({7, 3}, 8);
  const auto a2 = random_tensor({7, 3}, 9);
  DenseTensor sum({7, 3});
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0f * a1[i] - 0.5f * a2[i];
  const auto lhs = compose(b, sum);
  const auto c1 = compose(b, a1), c2 = compose(b, a2);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = 2.0 * c1[i] - 0.5 * c2[i];
    EXPECT_NEAR(lhs[i], rhs, 1e-6 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(ComposedClassifier, ParameterCount) {
  ComposedClassifier cc;
  cc.theta_base = random_tensor({256, 60}, 10);
  cc.noise = random_tensor({256, 20}, 11);
  cc.alpha = DenseTensor({80, 20});
  cc.d = 256;
  EXPECT_EQ(cc.trainable_parameters(), 1600u);
  EXPECT_LT(cc.trainable_parameters(), 256u * 20u);
  EXPECT_EQ(cc.basis().dims(), (std::vector<std::size_t>{256, 80}));
  EXPECT_EQ(cc.classifiers().dims(), (std::vector<std::size_t>{256, 20}));
}

TEST(FitAlpha, ZeroIterationsReturnsSeededInit) {
  const auto basis = random_tensor({8, 5}, 12);
  const std::vector<NccSample> data{{std::vector<float>(8, 0.1f), 0}, {std::vector<float>(8, -0.1f), 1}};
  NccFitConfig cfg;
  cfg.iterations = 0;
  const auto a = fit_alpha(basis, data, 2, cfg, 42);
  const auto b = fit_alpha(basis, data, 2, cfg, 42);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_TRUE(a.loss_trace.empty());
  Rng rng(42);
  for (std::size_t i = 0; i < a.alpha.size(); ++i)
    EXPECT_EQ(a.alpha[i], static_cast<float>(1e-2 * rng.normal()));
  EXPECT_NE(a.alpha, fit_alpha(basis, data, 2, cfg, 43).alpha);
}

TEST(FitAlpha, RejectsBadData) {
  const auto basis = random_tensor({4, 3}, 13);
  NccFitConfig cfg;
  EXPECT_THROW(fit_alpha(basis, {}, 2, cfg, 0), InvalidArgument);
  EXPECT_THROW(fit_alpha(basis, {{std::vector<float>(4), 2}}, 2, cfg, 0), InvalidArgument);
  EXPECT_THROW(fit_alpha(basis, {{std::vector<float>(3), 0}}, 2, cfg, 0), InvalidArgument);
}

TEST(FitAlpha, DeterministicIncludingMixup) {
  NccProblemConfig pc;
  pc.d = 32;
  pc.n_base = 8;
  pc.r = 4;
  pc.n_novel = 3;
  pc.shots = 4;
  const auto prob = make_ncc_problem(pc, 5);
  NccFitConfig cfg;
  cfg.iterations = 40;
  cfg.loss = NccLoss::kMixupFocal;
  const auto a = fit_alpha(prob.basis, prob.samples, 3, cfg, 9);
  const auto b = fit_alpha(prob.basis, prob.samples, 3, cfg, 9);
  EXPECT_EQ(a.alpha, b.alpha);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_NE(a.alpha, fit_alpha(prob.basis, prob.samples, 3, cfg, 10).alpha);
}

TEST(FitAlpha, LossTraceStartsAtInitObjective) {
  NccProblemConfig pc;
  pc.d = 16;
  pc.n_base = 6;
  pc.r = 2;
  pc.n_novel = 2;
  pc.shots = 5;
  const auto prob = make_ncc_problem(pc, 6);
  NccFitConfig cfg;
  cfg.iterations = 0;
  const auto init = fit_alpha(prob.basis, prob.samples, 2, cfg, 3);
  cfg.iterations = 25;
  const auto fit = fit_alpha(prob.basis, prob.samples, 2, cfg, 3);
  ASSERT_EQ(fit.loss_trace.size(), 25u);
  EXPECT_NEAR(fit.loss_trace.front(), ncc_focal_objective(prob.basis, init.alpha, prob.samples, cfg), 1e-9);
  EXPECT_LT(fit.final_loss, fit.loss_trace.front());
}

TEST(FitAlpha, RecoversSeparableTargets) {
  const auto prob = make_ncc_problem(NccProblemConfig{}, 21);
  EXPECT_EQ(ncc_accuracy(prob.theta_star, prob.samples), 1.0);
  const auto fit = fit_alpha(prob.basis, prob.samples, 20, NccFitConfig{}, 22);
  EXPECT_EQ(fit.trainable_parameters, 1600u);
  EXPECT_EQ(fit.train_accuracy, 1.0);
  EXPECT_LT(fit.final_loss, 1e-2);
}

TEST(NccProblem, TargetsGiveOnePositiveLogitWithMargin) {
  NccProblemConfig pc;
  pc.d = 64;
  pc.n_base = 12;
  pc.r = 4;
  pc.n_novel = 5;
  pc.shots = 6;
  const auto prob = make_ncc_problem(pc, 30);
  ASSERT_EQ(prob.samples.size(), 30u);
  EXPECT_EQ(prob.basis.dims(), (std::vector<std::size_t>{64, 16}));
  for (const auto& s : prob.samples) {
    double norm = 0.0;
    for (float v : s.feature) norm += double(v) * v;
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < 5; ++c) {
      double z = 0.0;
      for (std::size_t k = 0; k < 64; ++k) z += double(prob.theta_star.at(k, c)) * s.feature[k];
      EXPECT_GE((c == s.label ? z : -z), pc.min_margin * norm);
    }
  }
  EXPECT_EQ(prob.samples.front().feature, make_ncc_problem(pc, 30).samples.front().feature);
  pc.n_novel = 17;  // more targets than basis columns
  EXPECT_THROW(make_ncc_problem(pc, 30), InvalidArgument);
}

TEST(NccAccuracy, CountsArgmaxHits) {
  const DenseTensor eye({2, 2}, std::vector<float>{1, 0, 0, 1});
  const std::vector<NccSample> data{{{1.0f, 0.2f}, 0}, {{0.1f, 0.9f}, 1}, {{0.9f, 0.1f}, 1}};
  EXPECT_NEAR(ncc_accuracy(eye, data), 2.0 / 3.0, 1e-12);
}

TEST(ExportAlpha, TopKMatchesSortOracle) {
  const DenseTensor alpha({3, 2}, std::vector<float>{0.1f, 0.4f, 0.9f, -1.0f, 0.2f, 0.3f});
  const auto ex = export_alpha(alpha, {"a", "b", "c"}, {"x", "y"}, 2);
  // Row maxima 0.4, 0.9, 0.3.
  std::vector<std::size_t> order{0, 1, 2};
  const float maxima[3] = {0.4f, 0.9f, 0.3f};
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return maxima[i] > maxima[j]; });
  order.resize(2);
  EXPECT_EQ(ex.top_base, order);
  EXPECT_EQ(ex.rows.size(), 6u);
  EXPECT_EQ(ex.to_csv().substr(0, 18), "base,novel,weight\n");
  EXPECT_EQ(ex.top_csv(), "base,novel,weight\nb,x,0.9\nb,y,-1\na,x,0.1\na,y,0.4\n");
}

TEST(ExportAlpha, NoiseRowsAndZeroAlpha) {
  const auto ex = export_alpha(DenseTensor({4, 1}), {"a", "b"}, {"n"}, 5);
  EXPECT_EQ(ex.basis_names, (std::vector<std::string>{"a", "b", "noise_0", "noise_1"}));
  EXPECT_EQ(ex.top_base, (std::vector<std::size_t>{0, 1}));
  for (const auto& r : ex.rows) EXPECT_EQ(r.weight, 0.0f);
  EXPECT_THROW(export_alpha(DenseTensor({1, 1}), {"a", "b"}, {"n"}, 1), InvalidArgument);
}

}  // namespace
}  // namespace mrefine
