#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mrefine/errors.hpp"
#include "mrefine/losses.hpp"
#include "mrefine/rng.hpp"
#include "test_util.hpp"

namespace mrefine {
namespace {

using testing::random_tensor;

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Direct transcription of the sigmoid focal loss, no clamping needed for the
// moderate logits used here.
double focal_ref(double logit, int y, double alpha, double gamma) {
  const double p = sig(logit);
  const double pt = y == 1 ? p : 1.0 - p;
  const double at = y == 1 ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

TEST(DiceLoss, HandValues) {
  const std::vector<float> a{1, 1, 0}, b{1, 0, 0}, c{0, 0, 1};
  EXPECT_NEAR(dice_loss(a, b), 1.0 / 3.0, 1e-8);
  EXPECT_NEAR(dice_loss(a, a), 0.0, 1e-8);
  EXPECT_NEAR(dice_loss(a, c), 1.0, 1e-12);
  EXPECT_THROW(dice_loss(a, std::vector<float>{1, 0}), InvalidArgument);
}

TEST(DiceLoss, BoundedAndSymmetric) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = random_tensor({5, 7}, s, 0.0, 1.0);
    const auto q = random_tensor({5, 7}, s + 1000, 0.0, 1.0);
    const double d = dice_loss(p, q);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_DOUBLE_EQ(d, dice_loss(q, p));
  }
}

TEST(DiceLoss, GradientMatchesFiniteDifferences) {
  const auto p = random_tensor({4, 4}, 3, 0.1, 0.9);
  const auto q = random_tensor({4, 4}, 4, 0.0, 1.0);
  std::vector<float> grad(16);
  const double value = dice_loss_grad(p.values(), q.values(), grad);
  EXPECT_DOUBLE_EQ(value, dice_loss(p, q));
  std::vector<double> pd(p.values().begin(), p.values().end());
  auto dice_d = [&](const std::vector<double>& x) {
    double pq = 0, pp = 0, qq = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      pq += x[i] * q[i];
      pp += x[i] * x[i];
      qq += double(q[i]) * q[i];
    }
    return 1.0 - 2.0 * pq / (pp + qq + 1e-8);
  };
  for (std::size_t i = 0; i < 16; ++i) {
    auto plus = pd, minus = pd;
    plus[i] += 1e-5;
    minus[i] -= 1e-5;
    EXPECT_NEAR(grad[i], (dice_d(plus) - dice_d(minus)) / 2e-5, 1e-5);
  }
}

TEST(FocalLoss, HandValue) {
  EXPECT_NEAR(focal_loss(0.0, 1), 0.25 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_loss(0.0, 1), 0.043322, 1e-6);
}

TEST(FocalLoss, Reductions) {
  for (double z : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    for (int y : {0, 1}) {
      const double bce = bce_loss(sig(z), y);
      EXPECT_NEAR(focal_loss(z, y, 0.5, 0.0), 0.5 * bce, 1e-9);
      EXPECT_NEAR(focal_loss(z, y, 0.25, 2.0), focal_ref(z, y, 0.25, 2.0), 1e-12);
    }
  }
  EXPECT_LT(focal_loss(30.0, 1), 1e-20);
  EXPECT_LT(focal_loss(-30.0, 0), 1e-20);
}

TEST(FocalLoss, DownWeightsBelowWeightedBce) {
  for (double z = -6.0; z <= 6.0; z += 0.25) {
    for (int y : {0, 1}) {
      const double at = y == 1 ? 0.25 : 0.75;
      EXPECT_LT(focal_loss(z, y), at * bce_loss(sig(z), y));
    }
  }
}

TEST(FocalLoss, GradientMatchesFiniteDifferences) {
  for (double z : {-2.0, -0.3, 0.0, 0.8, 3.0}) {
    for (int y : {0, 1}) {
      const double fd = (focal_ref(z + 1e-6, y, 0.25, 2.0) - focal_ref(z - 1e-6, y, 0.25, 2.0)) / 2e-6;
      EXPECT_NEAR(focal_loss_grad(z, y), fd, 1e-7);
    }
  }
}

TEST(BceLoss, Values) {
  EXPECT_NEAR(bce_loss(0.5, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_loss(1.0, 1.0), -std::log(1.0 - 1e-6), 1e-9);
  for (double p : {0.1, 0.3, 0.77}) EXPECT_NEAR(bce_loss(p, 1.0), bce_loss(1.0 - p, 0.0), 1e-12);
}

TEST(IouBoxLoss, Values) {
  EXPECT_NEAR(iou_box_loss(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), std::log(7.0), 1e-6);
  EXPECT_DOUBLE_EQ(iou_box_loss(Box{1, 2, 4, 5}, Box{1, 2, 4, 5}), 0.0);
  // Nested boxes with area ratio e^-1.
  const double side = std::exp(-0.5);
  EXPECT_NEAR(iou_box_loss(Box{0, 0, side, side}, Box{0, 0, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(iou_box_loss(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}), -std::log(1e-6), 1e-9);
  EXPECT_THROW(iou_box_loss(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), InvalidArgument);
}

TEST(MixupFocalLoss, MatchesDirectFormula) {
  const DenseTensor w({3, 2}, std::vector<float>{0.5f, -1.0f, 0.2f, 0.3f, -0.4f, 0.8f});
  const std::vector<float> fi{1.0f, 0.5f, -0.5f}, fj{-0.2f, 1.0f, 0.3f};
  const std::vector<float> yi{1, 0}, yj{0, 1};
  for (double lam : {0.0, 0.3, 0.5, 1.0}) {
    double h[3];
    for (int k = 0; k < 3; ++k) h[k] = lam * fi[k] + (1 - lam) * fj[k];
    double li = 0, lj = 0;
    for (int c = 0; c < 2; ++c) {
      double z = 0;
      for (int k = 0; k < 3; ++k) z += h[k] * w[k * 2 + c];
      li += focal_ref(z, int(yi[c]), 0.25, 2.0);
      lj += focal_ref(z, int(yj[c]), 0.25, 2.0);
    }
    EXPECT_NEAR(mixup_focal_loss(fi, fj, yi, yj, lam, w), lam * li + (1 - lam) * lj, 1e-6) << lam;
  }
}

TEST(MixupFocalLoss, Reductions) {
  const auto w = random_tensor({4, 3}, 9);
  const auto fi = random_tensor({4}, 10);
  const auto fj = random_tensor({4}, 11);
  const std::vector<float> yi{0, 1, 0}, yj{1, 0, 0};
  auto plain = [&](std::span<const float> f, const std::vector<float>& y) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      double z = 0;
      for (int k = 0; k < 4; ++k) z += f[k] * w[k * 3 + c];
      s += focal_ref(z, int(y[c]), 0.25, 2.0);
    }
    return s;
  };
  EXPECT_NEAR(mixup_focal_loss(fi.values(), fj.values(), yi, yj, 1.0, w), plain(fi.values(), yi), 1e-6);
  EXPECT_NEAR(mixup_focal_loss(fi.values(), fj.values(), yi, yj, 0.0, w), plain(fj.values(), yj), 1e-6);
  // Shared labels: only the feature mixing matters.
  std::vector<float> h(4);
  for (int k = 0; k < 4; ++k) h[k] = static_cast<float>(0.3 * fi[k] + 0.7 * fj[k]);
  EXPECT_NEAR(mixup_focal_loss(fi.values(), fj.values(), yi, yi, 0.3, w), plain(h, yi), 1e-6);
}

TEST(MixupFocalLoss, HalfLambdaWithFixedLogitsIsMidpoint) {
  // Identical features fix the logits, so lambda only mixes the labels.
  const DenseTensor w({2, 2}, std::vector<float>{1.0f, 0.0f, 0.0f, 1.0f});
  const std::vector<float> f{0.7f, -1.2f};
  const std::vector<float> yi{1, 0}, yj{0, 1};
  const double li = focal_ref(0.7, 1, 0.25, 2) + focal_ref(-1.2, 0, 0.25, 2);
  const double lj = focal_ref(0.7, 0, 0.25, 2) + focal_ref(-1.2, 1, 0.25, 2);
  EXPECT_NEAR(mixup_focal_loss(f, f, yi, yj, 0.5, w), 0.5 * (li + lj), 1e-6);
}

TEST(MixupFocalLoss, ContinuousInLambda) {
  const auto w = random_tensor({4, 3}, 12, -0.5, 0.5);
  const auto fi = random_tensor({4}, 13, -0.5, 0.5);
  const auto fj = random_tensor({4}, 14, -0.5, 0.5);
  const std::vector<float> yi{1, 0, 0}, yj{0, 0, 1};
  constexpr int kSteps = 1 << 21;
  double prev = mixup_focal_loss(fi.values(), fj.values(), yi, yj, 0.0, w);
  double max_jump = 0.0;
  for (int i = 1; i <= kSteps; ++i) {
    const double cur = mixup_focal_loss(fi.values(), fj.values(), yi, yj, double(i) / kSteps, w);
    max_jump = std::max(max_jump, std::abs(cur - prev));
    prev = cur;
  }
  EXPECT_LT(max_jump, 1e-6);
}

TEST(MixupFocalLoss, RejectsBadInput) {
  const auto w = random_tensor({2, 2}, 15);
  const std::vector<float> f{1, 1}, y{1, 0};
  EXPECT_THROW(mixup_focal_loss(f, f, y, y, 1.5, w), InvalidArgument);
  EXPECT_THROW(mixup_focal_loss(f, f, y, y, -0.1, w), InvalidArgument);
  EXPECT_THROW(mixup_focal_loss(std::vector<float>{1, 1, 1}, f, y, y, 0.5, w), InvalidArgument);
}

TEST(FullMaskLoss, AveragesForegroundOnly) {
  const DenseTensor a({1, 3}, std::vector<float>{1, 1, 0});
  const DenseTensor b({1, 3}, std::vector<float>{1, 0, 0});
  const DenseTensor c({1, 3}, std::vector<float>{0, 0, 1});
  EXPECT_EQ(full_mask_loss({a, a}, {b, c}, {false, false}), 0.0);
  EXPECT_NEAR(full_mask_loss({a}, {a}, {true}), 0.0, 1e-8);
  EXPECT_NEAR(full_mask_loss({a, a, a}, {b, c, a}, {true, true, false}), 2.0 / 3.0, 1e-8);
  EXPECT_THROW(full_mask_loss({a}, {a, a}, {true}), InvalidArgument);
}

TEST(ProjectionLoss, Values) {
  const DenseTensor box = box_mask(Box{0, 0, 2, 2}, 3, 3);
  EXPECT_NEAR(projection_loss(box, box), 0.0, 1e-8);
  EXPECT_NEAR(projection_loss(DenseTensor({3, 3}), box), 1.0, 1e-8);
  // Strip over the top row of the box: one projection matches, the other
  // is [1,0,0] vs [1,1,0], dice 1/3.
  DenseTensor strip({3, 3});
  strip.at(0, 0) = 1.0f;
  strip.at(0, 1) = 1.0f;
  EXPECT_NEAR(projection_loss(strip, box), 0.5 * (0.0 + 1.0 / 3.0), 1e-8);
}

TEST(PairwiseBoxLoss, Values) {
  const std::size_t h = 6, w = 6;
  const DenseTensor box = box_mask(Box{1, 1, 4, 4}, h, w);
  const DenseTensor flat_color({h, w, 3}, 0.5f);
  EXPECT_NEAR(pairwise_box_loss(DenseTensor({h, w}, 1.0f), flat_color, box), 0.0, 1e-12);
  EXPECT_NEAR(pairwise_box_loss(DenseTensor({h, w}, 0.5f), flat_color, box), std::log(2.0), 1e-9);
  // Colour ramp steep enough that every edge falls below tau.
  DenseTensor ramp({h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      ramp.at(y, x, 0) = 3.0f * x;
      ramp.at(y, x, 1) = 3.0f * y;
    }
  EXPECT_EQ(pairwise_box_loss(DenseTensor({h, w}, 0.5f), ramp, box), 0.0);
}

TEST(PairwiseBoxLoss, InBoxNormalizationCountsAllTouchingEdges) {
  const std::size_t h = 4, w = 4;
  const DenseTensor box = box_mask(Box{0, 0, 2, 4}, h, w);
  DenseTensor color({h, w, 3});
  // Right half far in colour: only edges inside the left half are selected.
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 2; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) color.at(y, x, c) = 3.0f;
  LossConfig cfg;
  const DenseTensor half({h, w}, 0.5f);
  const double selected = pairwise_box_loss(half, color, box, cfg);
  cfg.pair_normalization = PairNormalization::kInBoxEdges;
  const double in_box = pairwise_box_loss(half, color, box, cfg);
  // Directed edge counts by brute force; each undirected edge counted twice.
  std::size_t touching = 0, inside = 0;
  const int off[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (auto& o : off) {
        const int ny = y + o[0], nx = x + o[1];
        if (ny < 0 || nx < 0 || ny >= 4 || nx >= 4) continue;
        if (x < 2 || nx < 2) ++touching;
        if (x < 2 && nx < 2) ++inside;
      }
  EXPECT_NEAR(selected, std::log(2.0), 1e-9);
  EXPECT_NEAR(in_box, std::log(2.0) * double(inside) / double(touching), 1e-9);
}

TEST(WeakMaskLoss, SumsProjectionAndPairwise) {
  const auto pred = random_tensor({5, 5}, 20, 0.0, 1.0);
  const auto color = random_tensor({5, 5, 3}, 21, 0.0, 1.0);
  const DenseTensor box = box_mask(Box{1, 1, 4, 3}, 5, 5);
  EXPECT_DOUBLE_EQ(weak_mask_loss(pred, color, box),
                   projection_loss(pred, box) + pairwise_box_loss(pred, color, box));
}

TEST(TotalLoss, LinearComposition) {
  const LossTerms t{0.5, 0.25, 1.5, 2.0};
  EXPECT_DOUBLE_EQ(total_loss(t), 4.25);
  LossConfig cfg;
  cfg.lambda1 = 2.0;
  cfg.lambda3 = 0.5;
  EXPECT_DOUBLE_EQ(total_loss(t, cfg), 0.5 + 0.5 + 1.5 + 1.0);
}

TEST(LossConfig, Validation) {
  EXPECT_NO_THROW(LossConfig{}.validate());
  LossConfig cfg;
  cfg.pair_tau = 1.5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = LossConfig{};
  cfg.color_kappa = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

}  // namespace
}  // namespace mrefine
