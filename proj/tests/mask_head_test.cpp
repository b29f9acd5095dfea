#include <gtest/gtest.h>

#include <cmath>

#include "head_oracle.hpp"
#include "mrefine/errors.hpp"
#include "mrefine/mask_head.hpp"
#include "test_util.hpp"

namespace mrefine {
namespace {

using testing::random_tensor;

MaskHeadParams random_head(std::uint64_t seed, double sigma) {
  MaskHeadParams p;
  Rng rng(seed);
  for (float& v : p.values()) v = static_cast<float>(rng.normal(0.0, sigma));
  return p;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<double> head_input(const DenseTensor& mf, const DenseTensor& rc) {
  const std::size_t n = mf.dim(0) * mf.dim(1);
  std::vector<double> in(n * 10);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 8; ++c) in[p * 10 + c] = mf[p * 8 + c];
    for (std::size_t c = 0; c < 2; ++c) in[p * 10 + 8 + c] = rc[p * 2 + c];
  }
  return in;
}

TEST(MaskHeadParams, LayoutHas169Parameters) {
  EXPECT_EQ(MaskHeadParams::size(), 169u);
  MaskHeadParams p;
  EXPECT_EQ(p.layer1_w().size(), 80u);
  EXPECT_EQ(p.layer1_b().size(), 8u);
  EXPECT_EQ(p.layer2_w().size(), 64u);
  EXPECT_EQ(p.layer2_b().size(), 8u);
  EXPECT_EQ(p.layer3_w().size(), 8u);
  EXPECT_EQ(p.layer3_b().size(), 1u);
  EXPECT_EQ(&p.layer3_b()[0], &p.values()[168]);
}

TEST(MaskHeadParams, TensorRoundTrip) {
  const MaskHeadParams p = random_head(1, 1.0);
  const DenseTensor t = p.to_tensor();
  EXPECT_EQ(t.dims(), std::vector<std::size_t>{169});
  EXPECT_EQ(MaskHeadParams::from_tensor(t), p);
  EXPECT_THROW(MaskHeadParams::from_tensor(DenseTensor({168})), InvalidArgument);
}

TEST(RelCoords, CentredOnBox) {
  const DenseTensor rc = make_rel_coords(4, 8, Box{2, 0, 4, 4});
  // Box centre (3, 2); pixel (y=1, x=2) has centre (2.5, 1.5); max(H, W) = 8.
  EXPECT_FLOAT_EQ(rc.at(1, 2, 0), -0.5f / 8);
  EXPECT_FLOAT_EQ(rc.at(1, 2, 1), -0.5f / 8);
  EXPECT_FLOAT_EQ(rc.at(3, 7, 0), 4.5f / 8);
}

TEST(HeadForward, ZeroParamsGiveHalf) {
  const auto mf = random_tensor({5, 6, 8}, 2);
  const auto rc = make_rel_coords(5, 6, Box{1, 1, 4, 4});
  const auto out = head_forward(MaskHeadParams{}, mf, rc);
  for (float v : out.mask.values()) EXPECT_EQ(v, 0.5f);
  EXPECT_EQ(out.first_layer_features.dims(), (std::vector<std::size_t>{5, 6, 8}));
}

TEST(HeadForward, MatchesDoubleOracle) {
  const auto mf = random_tensor({8, 8, 8}, 3);
  const auto rc = make_rel_coords(8, 8, Box{2, 1, 6, 7});
  const MaskHeadParams p = random_head(4, 0.5);
  const auto out = head_forward(p, mf, rc);
  const auto ref = oracle::head(to_double(p.values()), head_input(mf, rc), 64);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_NEAR(out.mask[i], ref.mask[i], 1e-6);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out.first_layer_features[i * 8 + c], ref.first_layer[i][c], 1e-5);
  }
}

TEST(HeadForward, OutputBoundedAndMonotoneInLastBias) {
  const auto mf = random_tensor({6, 6, 8}, 5);
  const auto rc = make_rel_coords(6, 6, Box{0, 0, 6, 6});
  MaskHeadParams p = random_head(6, 0.3);
  const auto base = head_forward(p, mf, rc).mask;
  for (float v : base.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  p.layer3_b()[0] += 0.25f;
  const auto raised = head_forward(p, mf, rc).mask;
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_GT(raised[i], base[i]);
}

TEST(HeadForward, RejectsShapeMismatch) {
  const auto mf = random_tensor({4, 4, 8}, 7);
  EXPECT_THROW(head_forward(MaskHeadParams{}, mf, make_rel_coords(4, 5, Box{0, 0, 2, 2})), InvalidArgument);
  EXPECT_THROW(head_forward(MaskHeadParams{}, random_tensor({4, 4, 7}, 8), make_rel_coords(4, 4, Box{0, 0, 2, 2})),
               InvalidArgument);
}

TEST(HeadBackward, ZeroAndScaledUpstream) {
  const auto mf = random_tensor({6, 6, 8}, 9);
  const auto rc = make_rel_coords(6, 6, Box{1, 1, 5, 5});
  const MaskHeadParams p = random_head(10, 0.5);
  const auto zero = head_backward(p, mf, rc, DenseTensor({6, 6}));
  for (float g : zero.values()) EXPECT_EQ(g, 0.0f);

  const auto up = random_tensor({6, 6}, 11);
  DenseTensor up2 = up;
  for (float& v : up2.values()) v *= 2.0f;
  const auto g1 = head_backward(p, mf, rc, up);
  const auto g2 = head_backward(p, mf, rc, up2);
  for (std::size_t i = 0; i < 169; ++i) EXPECT_FLOAT_EQ(g2[i], 2.0f * g1[i]);
  EXPECT_THROW(head_backward(p, mf, rc, DenseTensor({6, 5})), InvalidArgument);
}

// Central differences on the double oracle of L = sum(upstream * mask).
TEST(HeadBackward, MatchesFiniteDifferencesOnRandomScenes) {
  constexpr double kStep = 1e-3;
  int checked = 0, kinked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mf = random_tensor({8, 8, 8}, 100 + seed);
    const auto rc = make_rel_coords(8, 8, Box{1.0, 2.0, 7.0, 6.5});
    const MaskHeadParams p = random_head(200 + seed, 0.5);
    const auto up = random_tensor({8, 8}, 300 + seed);
    const auto grad = head_backward(p, mf, rc, up);
    const auto input = head_input(mf, rc);
    auto loss = [&](const std::vector<double>& params) {
      const auto e = oracle::head(params, input, 64);
      double s = 0.0;
      for (std::size_t i = 0; i < 64; ++i) s += up[i] * e.mask[i];
      return s;
    };
    auto pattern = [&](const std::vector<double>& params) { return oracle::head(params, input, 64).active; };
    const auto base = to_double(p.values());
    for (std::size_t k = 0; k < 169; ++k) {
      const auto fd = oracle::central_difference(loss, pattern, base, k, kStep);
      const double a = grad[k];
      EXPECT_LE(std::abs(a - fd.value), 1e-3 * std::max(std::abs(a), std::abs(fd.value)) + 1e-6)
          << "seed " << seed << " param " << k << " analytic " << a << " numeric " << fd.value;
      ++checked;
      if (fd.kinked) ++kinked;
    }
  }
  // Most stencils stay on one linear piece of the ReLUs.
  EXPECT_LT(kinked, checked / 4);
  EXPECT_EQ(checked, 20 * 169);
}

}  // namespace
}  // namespace mrefine
