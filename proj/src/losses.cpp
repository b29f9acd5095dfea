#include "mrefine/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mrefine/errors.hpp"
#include "mrefine/kernels.hpp"

namespace mrefine {
namespace {

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_same(const DenseTensor& a, const DenseTensor& b, const char* what) {
  if (!a.same_shape(b))
    throw InvalidArgument(std::string(what) + ": shapes " + shape_string(a.dims()) + " and " +
                          shape_string(b.dims()) + " differ");
}

std::vector<float> axis_max(const DenseTensor& m, int axis) {
  const std::size_t h = m.dim(0);
  const std::size_t w = m.dim(1);
  std::vector<float> out(axis == 0 ? w : h, 0.0f);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float& slot = axis == 0 ? out[x] : out[y];
      slot = std::max(slot, m.at(y, x));
    }
  return out;
}

}  // namespace

void LossConfig::validate() const {
  auto pos = [](double v, const char* n) {
    if (!(v > 0.0)) throw InvalidArgument(std::string("LossConfig.") + n + " must be positive");
  };
  pos(lambda1, "lambda1");
  pos(lambda2, "lambda2");
  pos(lambda3, "lambda3");
  pos(focal_alpha, "focal_alpha");
  pos(focal_gamma, "focal_gamma");
  pos(color_kappa, "color_kappa");
  pos(mixup_beta, "mixup_beta");
  pos(dice_epsilon, "dice_epsilon");
  pos(log_clamp, "log_clamp");
  if (!(pair_tau > 0.0 && pair_tau <= 1.0)) throw InvalidArgument("LossConfig.pair_tau must lie in (0, 1]");
}

double dice_loss(std::span<const float> pred, std::span<const float> target, double epsilon) {
  if (pred.size() != target.size()) throw InvalidArgument("dice_loss: length mismatch");
  double inter = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * target[i];
    pp += static_cast<double>(pred[i]) * pred[i];
    qq += static_cast<double>(target[i]) * target[i];
  }
  return 1.0 - 2.0 * inter / (pp + qq + epsilon);
}

double dice_loss(const DenseTensor& pred, const DenseTensor& target, double epsilon) {
  check_same(pred, target, "dice_loss");
  return dice_loss(pred.values(), target.values(), epsilon);
}

double dice_loss_grad(std::span<const float> pred, std::span<const float> target,
                      std::span<float> grad, double epsilon) {
  if (pred.size() != target.size() || grad.size() != pred.size())
    throw InvalidArgument("dice_loss_grad: length mismatch");
  double inter = 0.0, pp = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * target[i];
    pp += static_cast<double>(pred[i]) * pred[i];
    qq += static_cast<double>(target[i]) * target[i];
  }
  const double denom = pp + qq + epsilon;
  for (std::size_t i = 0; i < pred.size(); ++i)
    grad[i] = static_cast<float>(-2.0 * target[i] / denom + 4.0 * inter * pred[i] / (denom * denom));
  return 1.0 - 2.0 * inter / denom;
}

double focal_loss(double logit, int target, double alpha, double gamma, double log_clamp) {
  const double p = sigmoid_d(logit);
  const double pt = target == 1 ? p : 1.0 - p;
  const double at = target == 1 ? alpha : 1.0 - alpha;
  return -at * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, log_clamp));
}

double focal_loss_grad(double logit, int target, double alpha, double gamma, double log_clamp) {
  const double p = sigmoid_d(logit);
  const double pt = target == 1 ? p : 1.0 - p;
  const double at = target == 1 ? alpha : 1.0 - alpha;
  // d pt / d logit = +-p(1-p); (1-pt) * pt == p(1-p) either way.
  const double dpt = (target == 1 ? 1.0 : -1.0) * p * (1.0 - p);
  const double log_pt = std::log(std::max(pt, log_clamp));
  const double dlog = pt > log_clamp ? dpt / pt : 0.0;
  const double mod = std::pow(1.0 - pt, gamma);
  const double dmod = gamma == 0.0 ? 0.0 : -gamma * std::pow(1.0 - pt, gamma - 1.0) * dpt;
  return -at * (dmod * log_pt + mod * dlog);
}

double bce_loss(double pred, double target, double log_clamp) {
  const double p = std::clamp(pred, log_clamp, 1.0 - log_clamp);
  return -target * std::log(p) - (1.0 - target) * std::log(1.0 - p);
}

double iou_box_loss(const Box& pred, const Box& gt, double log_clamp) {
  if (!pred.valid() || !gt.valid()) throw InvalidArgument("iou_box_loss: degenerate box");
  const double iw = std::max(0.0, std::min(pred.x2, gt.x2) - std::max(pred.x1, gt.x1));
  const double ih = std::max(0.0, std::min(pred.y2, gt.y2) - std::max(pred.y1, gt.y1));
  const double inter = iw * ih;
  const double iou = inter / (pred.area() + gt.area() - inter);
  return -std::log(std::max(iou, log_clamp));
}

double mixup_focal_loss(std::span<const float> feat_i, std::span<const float> feat_j,
                        std::span<const float> y_i, std::span<const float> y_j, double lambda,
                        const DenseTensor& classifier, const LossConfig& config) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("mixup_focal_loss: lambda outside [0, 1]");
  if (classifier.rank() != 2) throw InvalidArgument("mixup_focal_loss: classifier must be d x C");
  const std::size_t d = classifier.dim(0);
  const std::size_t c = classifier.dim(1);
  if (feat_i.size() != d || feat_j.size() != d || y_i.size() != c || y_j.size() != c)
    throw InvalidArgument("mixup_focal_loss: feature or label length does not match classifier " +
                          shape_string(classifier.dims()));
  std::vector<double> h(d);
  for (std::size_t k = 0; k < d; ++k) h[k] = lambda * feat_i[k] + (1.0 - lambda) * feat_j[k];
  double loss = 0.0;
  for (std::size_t cls = 0; cls < c; ++cls) {
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) z += classifier.at(k, cls) * h[k];
    const int ti = y_i[cls] > 0.5f ? 1 : 0;
    const int tj = y_j[cls] > 0.5f ? 1 : 0;
    loss += lambda * focal_loss(z, ti, config.focal_alpha, config.focal_gamma, config.log_clamp) +
            (1.0 - lambda) * focal_loss(z, tj, config.focal_alpha, config.focal_gamma, config.log_clamp);
  }
  return loss;
}

double full_mask_loss(const std::vector<DenseTensor>& pred_masks,
                      const std::vector<DenseTensor>& gt_masks,
                      const std::vector<bool>& foreground, double epsilon) {
  if (pred_masks.size() != gt_masks.size() || pred_masks.size() != foreground.size())
    throw InvalidArgument("full_mask_loss: prediction, target and indicator counts differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred_masks.size(); ++i) {
    if (!foreground[i]) continue;
    sum += dice_loss(pred_masks[i], gt_masks[i], epsilon);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double projection_loss(const DenseTensor& pred_mask, const DenseTensor& gt_box_mask, double epsilon) {
  check_same(pred_mask, gt_box_mask, "projection_loss");
  if (pred_mask.rank() != 2) throw InvalidArgument("projection_loss: expected H x W maps");
  const double lx = dice_loss(axis_max(pred_mask, 0), axis_max(gt_box_mask, 0), epsilon);
  const double ly = dice_loss(axis_max(pred_mask, 1), axis_max(gt_box_mask, 1), epsilon);
  return 0.5 * (lx + ly);
}

double pairwise_box_loss(const DenseTensor& pred_mask, const DenseTensor& color_map,
                         const DenseTensor& gt_box_mask, const LossConfig& config) {
  check_same(pred_mask, gt_box_mask, "pairwise_box_loss");
  if (pred_mask.rank() != 2 || color_map.rank() != 3 || color_map.dim(0) != pred_mask.dim(0) ||
      color_map.dim(1) != pred_mask.dim(1))
    throw InvalidArgument("pairwise_box_loss: colour map " + shape_string(color_map.dims()) +
                          " does not match mask " + shape_string(pred_mask.dims()));
  const std::size_t h = pred_mask.dim(0);
  const std::size_t w = pred_mask.dim(1);
  const std::size_t c = color_map.dim(2);
  double sum = 0.0;
  std::size_t selected = 0;
  std::size_t in_box = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      // Forward half of the neighbourhood so each undirected edge is visited once.
      for (std::size_t k = 4; k < kernels::kNeighbourOffsets.size(); ++k) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + kernels::kNeighbourOffsets[k][0];
        const auto nx = static_cast<std::ptrdiff_t>(x) + kernels::kNeighbourOffsets[k][1];
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) || nx >= static_cast<std::ptrdiff_t>(w))
          continue;
        const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
        if (gt_box_mask[p] < 0.5f && gt_box_mask[q] < 0.5f) continue;
        ++in_box;
        double dist = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double d = static_cast<double>(color_map[p * c + ch]) - color_map[q * c + ch];
          dist += d * d;
        }
        if (std::exp(-dist / config.color_kappa) < config.pair_tau) continue;
        const double mi = pred_mask[p];
        const double mj = pred_mask[q];
        const double pe = mi * mj + (1.0 - mi) * (1.0 - mj);
        sum += std::log(std::max(pe, config.log_clamp));
        ++selected;
      }
    }
  }
  const std::size_t denom = config.pair_normalization == PairNormalization::kSelectedEdges ? selected : in_box;
  return selected == 0 ? 0.0 : -sum / static_cast<double>(denom);
}

double weak_mask_loss(const DenseTensor& pred_mask, const DenseTensor& color_map,
                      const DenseTensor& gt_box_mask, const LossConfig& config) {
  return projection_loss(pred_mask, gt_box_mask, config.dice_epsilon) +
         pairwise_box_loss(pred_mask, color_map, gt_box_mask, config);
}

double total_loss(const LossTerms& terms, const LossConfig& config) {
  return terms.classification + config.lambda1 * terms.centerness +
         config.lambda2 * terms.regression + config.lambda3 * terms.mask;
}

DenseTensor box_mask(const Box& box, std::size_t height, std::size_t width) {
  DenseTensor m({height, width});
  const PixelRect r = pixel_rect(box, height, width);
  for (auto y = r.y0; y <= r.y1; ++y)
    for (auto x = r.x0; x <= r.x1; ++x) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0f;
  return m;
}

}  // namespace mrefine
