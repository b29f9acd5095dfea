#pragma once

#include <span>
#include <vector>

#include "mrefine/box.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

// Which edge count normalises the pairwise box loss.
enum class PairNormalization { kSelectedEdges, kInBoxEdges };

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double pair_tau = 0.3;
  double color_kappa = 2.0;
  double mixup_beta = 2.0;
  double dice_epsilon = 1e-8;
  double log_clamp = 1e-6;
  PairNormalization pair_normalization = PairNormalization::kSelectedEdges;

  void validate() const;
};

// 1 - 2 sum(p q) / (sum p^2 + sum q^2 + eps).
double dice_loss(std::span<const float> pred, std::span<const float> target, double epsilon = 1e-8);
double dice_loss(const DenseTensor& pred, const DenseTensor& target, double epsilon = 1e-8);

// d(dice)/d(pred); writes into `grad`.
double dice_loss_grad(std::span<const float> pred, std::span<const float> target,
                      std::span<float> grad, double epsilon = 1e-8);

// Sigmoid focal loss on one logit against a binary target.
double focal_loss(double logit, int target, double alpha = 0.25, double gamma = 2.0,
                  double log_clamp = 1e-6);
// d(focal_loss)/d(logit).
double focal_loss_grad(double logit, int target, double alpha = 0.25, double gamma = 2.0,
                       double log_clamp = 1e-6);

double bce_loss(double pred, double target, double log_clamp = 1e-6);

// -ln(max(IoU, clamp)). Throws InvalidArgument on a degenerate box.
double iou_box_loss(const Box& pred, const Box& gt, double log_clamp = 1e-6);

// Manifold-Mixup focal loss. feat_* are d-vectors, y_* are one-hot over C
// classes, classifier is d x C. Logits come from the mixed feature
// h = lambda feat_i + (1 - lambda) feat_j, and the per-class focal losses
// against both label sets are mixed with the same lambda.
double mixup_focal_loss(std::span<const float> feat_i, std::span<const float> feat_j,
                        std::span<const float> y_i, std::span<const float> y_j, double lambda,
                        const DenseTensor& classifier, const LossConfig& config = {});

// Mean dice over locations flagged foreground; 0 when there are none.
double full_mask_loss(const std::vector<DenseTensor>& pred_masks,
                      const std::vector<DenseTensor>& gt_masks,
                      const std::vector<bool>& foreground, double epsilon = 1e-8);

// Mean of the dice losses between per-axis max projections.
double projection_loss(const DenseTensor& pred_mask, const DenseTensor& gt_box_mask,
                       double epsilon = 1e-8);

// Colour-affinity pairwise term over 8-connected edges touching the box.
double pairwise_box_loss(const DenseTensor& pred_mask, const DenseTensor& color_map,
                         const DenseTensor& gt_box_mask, const LossConfig& config = {});

double weak_mask_loss(const DenseTensor& pred_mask, const DenseTensor& color_map,
                      const DenseTensor& gt_box_mask, const LossConfig& config = {});

struct LossTerms {
  double classification = 0.0;
  double centerness = 0.0;
  double regression = 0.0;
  double mask = 0.0;
};

// L_cls + lambda1 L_cen + lambda2 L_reg + lambda3 L_mask.
double total_loss(const LossTerms& terms, const LossConfig& config = {});

// Binary H x W mask of the pixels covered by `box`.
DenseTensor box_mask(const Box& box, std::size_t height, std::size_t width);

}  // namespace mrefine
