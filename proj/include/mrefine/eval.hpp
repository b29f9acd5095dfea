#pragma once

#include <array>
#include <string>
#include <vector>

#include "mrefine/box.hpp"
#include "mrefine/scene.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

// One image's worth of annotations and detections.
struct EvalImage {
  std::vector<GroundTruthInstance> ground_truths;
  std::vector<InstancePrediction> predictions;

  friend bool operator==(const EvalImage&, const EvalImage&) = default;
};

enum class IouKind { kBox, kMask };

inline constexpr std::array<double, 10> kCocoIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                           0.75, 0.80, 0.85, 0.90, 0.95};

// Throws InvalidArgument on a degenerate box.
double box_iou(const Box& a, const Box& b);

// IoU of the maps binarised at `threshold` (value >= threshold is foreground).
// Empty union gives 0.
double mask_iou(const DenseTensor& a, const DenseTensor& b, double threshold = 0.5);

struct ClassAP {
  int class_id = 0;
  std::vector<double> ap_per_threshold;  // aligned with the requested thresholds
  double ap = 0.0;                       // mean over thresholds
  double ap50 = 0.0;                     // at IoU 0.5, when 0.5 is among the thresholds
  std::size_t true_positives = 0;        // at the first threshold
  std::size_t positives = 0;             // ground-truth count
};

struct APResult {
  std::vector<ClassAP> per_class;  // classes with at least one ground truth, ascending id
  double ap = 0.0;                 // mean over classes of per-class AP
  double ap50 = 0.0;
};

// COCO-style AP: per class, predictions sorted by score (stable), greedily
// matched to the highest-IoU unmatched same-class ground truth at IoU >=
// threshold; 101-point interpolated precision.
APResult average_precision(const std::vector<EvalImage>& images, IouKind kind,
                           const std::vector<double>& thresholds = {kCocoIouThresholds.begin(),
                                                                    kCocoIouThresholds.end()},
                           double mask_threshold = 0.5);

// 101-point interpolated AP of one ranked TP/FP sequence with `positives` ground truths.
double interpolated_ap(const std::vector<bool>& is_tp, std::size_t positives);

// Class-agnostic AP: every class mapped to 0 before average_precision.
double fg_ap(const std::vector<EvalImage>& images, IouKind kind,
             const std::vector<double>& thresholds = {kCocoIouThresholds.begin(),
                                                      kCocoIouThresholds.end()},
             double mask_threshold = 0.5);

struct TpRatioDiagnostic {
  double pooled = 0.0;      // sum TP / sum P
  double class_mean = 0.0;  // mean of TP_c / P_c
};

TpRatioDiagnostic tp_ratio_diagnostic(const std::vector<std::size_t>& tp,
                                      const std::vector<std::size_t>& positives);

struct AllocationResult {
  std::vector<EvalImage> images;
  std::vector<std::string> diagnostics;
};

// Index of the ground truth with the largest box IoU (lowest index on ties,
// 0 when nothing overlaps).
std::size_t best_gt_index(const Box& box, const std::vector<GroundTruthInstance>& gts);

// Replace each prediction's class with that of its max-box-IoU ground truth.
// With `min_iou` > 0 predictions below the gate are left unchanged. Images
// without ground truth pass through with a diagnostic.
AllocationResult gt_class_allocation(const std::vector<EvalImage>& images, double min_iou = 0.0);

// As gt_class_allocation, replacing the mask instead of the class.
AllocationResult gt_mask_allocation(const std::vector<EvalImage>& images, double min_iou = 0.0);

struct TaskReport {
  APResult ap;
  double fg_ap = 0.0;
};

struct EvalReport {
  TaskReport detection;
  TaskReport segmentation;
  std::vector<std::string> diagnostics;
};

struct EvalOptions {
  std::vector<double> thresholds{kCocoIouThresholds.begin(), kCocoIouThresholds.end()};
  double mask_threshold = 0.5;
};

EvalReport evaluate(const std::vector<EvalImage>& images, const EvalOptions& options = {});

}  // namespace mrefine
