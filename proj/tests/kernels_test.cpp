#include <gtest/gtest.h>

#include <omp.h>

#include <cmath>
#include <vector>

#include "mrefine/kernels.hpp"
#include "mrefine/rng.hpp"

namespace mrefine {
namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

// Symmetric H x W x 8 weights with roughly a third of the edges absent.
std::vector<float> symmetric_weights(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> nbr(h * w * 8, 0.0f);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < 8; ++k) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + kernels::kNeighbourOffsets[k][0];
        const auto nx = static_cast<std::ptrdiff_t>(x) + kernels::kNeighbourOffsets[k][1];
        if (ny < 0 || nx < 0 || ny >= std::ptrdiff_t(h) || nx >= std::ptrdiff_t(w)) continue;
        const std::size_t p = y * w + x;
        const std::size_t q = std::size_t(ny) * w + std::size_t(nx);
        if (q < p) continue;
        const float v = rng.uniform() < 0.33 ? 0.0f : static_cast<float>(rng.uniform(0.5, 1.0));
        nbr[p * 8 + k] = v;
        nbr[q * 8 + kernels::kReverseSlot[k]] = v;
      }
    }
  }
  return nbr;
}

class ThreadCount : public ::testing::TestWithParam<int> {};

TEST(Kernels, ReverseSlotsNegateOffsets) {
  for (std::size_t k = 0; k < 8; ++k) {
    const auto r = kernels::kReverseSlot[k];
    EXPECT_EQ(kernels::kNeighbourOffsets[r][0], -kernels::kNeighbourOffsets[k][0]);
    EXPECT_EQ(kernels::kNeighbourOffsets[r][1], -kernels::kNeighbourOffsets[k][1]);
  }
}

TEST_P(ThreadCount, ForwardBitIdenticalToSerial) {
  omp_set_num_threads(GetParam());
  const std::size_t pixels = 96 * 96, cin = 10, cout = 8;
  const auto in = random_values(pixels * cin, 1);
  const auto w = random_values(cin * cout, 2);
  const auto b = random_values(cout, 3);
  for (Activation act : {Activation::kNone, Activation::kRelu, Activation::kSigmoid}) {
    std::vector<float> par(pixels * cout), ser(pixels * cout);
    kernels::conv1x1_forward(in, pixels, cin, w, b, cout, act, par);
    kernels::serial::conv1x1_forward(in, pixels, cin, w, b, cout, act, ser);
    EXPECT_EQ(par, ser);
  }
}

TEST_P(ThreadCount, BackwardMatchesSerial) {
  omp_set_num_threads(GetParam());
  const std::size_t pixels = 80 * 80 + 7, cin = 8, cout = 8;
  const auto in = random_values(pixels * cin, 4);
  const auto w = random_values(cin * cout, 5);
  const auto g = random_values(pixels * cout, 6);
  std::vector<float> gi(pixels * cin), gw(cin * cout), gb(cout);
  std::vector<float> si(pixels * cin), sw(cin * cout), sb(cout);
  kernels::conv1x1_backward(in, pixels, cin, w, cout, g, gi, gw, gb);
  kernels::serial::conv1x1_backward(in, pixels, cin, w, cout, g, si, sw, sb);
  EXPECT_EQ(gi, si);
  for (std::size_t k = 0; k < gw.size(); ++k) EXPECT_NEAR(gw[k], sw[k], 1e-5 * std::max(1.0f, std::abs(sw[k])));
  for (std::size_t k = 0; k < gb.size(); ++k) EXPECT_NEAR(gb[k], sb[k], 1e-5 * std::max(1.0f, std::abs(sb[k])));
}

TEST_P(ThreadCount, MrfEnergyMatchesSerial) {
  omp_set_num_threads(GetParam());
  const std::size_t h = 70, w = 65, n = h * w;
  const auto mask = random_values(n, 7, 0.0, 1.0);
  const auto fg = random_values(n, 8, 0.0, 1.0);
  const auto bg = random_values(n, 9, 0.0, 1.0);
  const auto nbr = symmetric_weights(h, w, 10);
  std::vector<float> gp(n), gs(n);
  double up = 0, pp = 0, us = 0, ps = 0;
  const double ep = kernels::mrf_energy(mask, h, w, fg, bg, nbr, 0.05, 5.0, gp, &up, &pp);
  const double es = kernels::serial::mrf_energy(mask, h, w, fg, bg, nbr, 0.05, 5.0, gs, &us, &ps);
  EXPECT_NEAR(ep, es, 1e-10 * std::abs(es));
  EXPECT_NEAR(up, us, 1e-9 * std::abs(us));
  EXPECT_NEAR(pp, ps, 1e-10 * std::abs(ps));
  for (std::size_t p = 0; p < n; ++p) EXPECT_NEAR(gp[p], gs[p], 1e-5 * std::max(1.0f, std::abs(gs[p])));
}

INSTANTIATE_TEST_SUITE_P(Threads, ThreadCount, ::testing::Values(1, 2, 4, 8));

TEST(Kernels, ParallelResultIndependentOfThreadCount) {
  const std::size_t pixels = 100 * 100, cin = 10, cout = 8;
  const auto in = random_values(pixels * cin, 11);
  const auto w = random_values(cin * cout, 12);
  const auto g = random_values(pixels * cout, 13);
  const auto mask = random_values(pixels, 14, 0.0, 1.0);
  const auto fg = random_values(pixels, 15, 0.0, 1.0);
  const auto bg = random_values(pixels, 16, 0.0, 1.0);
  const auto nbr = symmetric_weights(100, 100, 17);

  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<float> gw(cin * cout), gb(cout), gm(pixels);
    kernels::conv1x1_backward(in, pixels, cin, w, cout, g, {}, gw, gb);
    const double e = kernels::mrf_energy(mask, 100, 100, fg, bg, nbr, 0.05, 5.0, gm);
    return std::make_tuple(gw, gb, gm, e);
  };
  const auto reference = run(1);
  for (int t : {2, 3, 8}) EXPECT_EQ(run(t), reference) << t << " threads";
}

TEST(Kernels, MrfGradientMatchesFiniteDifference) {
  const std::size_t h = 5, w = 6, n = h * w;
  const auto mask = random_values(n, 20, 0.1, 0.9);
  const auto fg = random_values(n, 21, 0.0, 1.0);
  const auto bg = random_values(n, 22, 0.0, 1.0);
  const auto nbr = symmetric_weights(h, w, 23);
  std::vector<float> grad(n), scratch(n);
  kernels::mrf_energy(mask, h, w, fg, bg, nbr, 0.3, 2.0, grad);
  // Energy is quadratic in the mask, so central differences are exact up to rounding.
  for (std::size_t p = 0; p < n; ++p) {
    auto plus = mask, minus = mask;
    plus[p] += 0.01f;
    minus[p] -= 0.01f;
    const double ep = kernels::serial::mrf_energy(plus, h, w, fg, bg, nbr, 0.3, 2.0, scratch);
    const double em = kernels::serial::mrf_energy(minus, h, w, fg, bg, nbr, 0.3, 2.0, scratch);
    const double fd = (ep - em) / (double(plus[p]) - double(minus[p]));
    EXPECT_NEAR(grad[p], fd, 1e-4) << "pixel " << p;
  }
}

TEST(Kernels, ConstantMaskHasNoPairwiseEnergy) {
  const std::size_t h = 6, w = 6, n = h * w;
  const std::vector<float> mask(n, 0.7f), zero(n, 0.0f);
  const auto nbr = symmetric_weights(h, w, 30);
  std::vector<float> grad(n);
  double unary = -1, pairwise = -1;
  kernels::mrf_energy(mask, h, w, zero, zero, nbr, 1.0, 1.0, grad, &unary, &pairwise);
  EXPECT_EQ(pairwise, 0.0);
  EXPECT_EQ(unary, 0.0);
  for (float g : grad) EXPECT_EQ(g, 0.0f);
}

}  // namespace
}  // namespace mrefine
