#include "mrefine/eval.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "mrefine/errors.hpp"

namespace mrefine {
namespace {

struct RankedPrediction {
  std::size_t image = 0;
  std::size_t index = 0;
  double score = 0.0;
};

double pair_iou(const InstancePrediction& p, const GroundTruthInstance& g, IouKind kind,
                double mask_threshold) {
  return kind == IouKind::kBox ? box_iou(p.box, g.box) : mask_iou(p.mask, g.mask, mask_threshold);
}

template <typename Replace>
AllocationResult allocate(const std::vector<EvalImage>& images, double min_iou, const char* what,
                          Replace replace) {
  AllocationResult out;
  out.images = images;
  for (std::size_t i = 0; i < out.images.size(); ++i) {
    auto& img = out.images[i];
    if (img.ground_truths.empty()) {
      if (!img.predictions.empty())
        out.diagnostics.push_back(std::string(what) + ": image " + std::to_string(i) +
                                  " has no ground truth; predictions left unchanged");
      continue;
    }
    for (auto& pred : img.predictions) {
      const std::size_t k = best_gt_index(pred.box, img.ground_truths);
      if (min_iou > 0.0 && box_iou(pred.box, img.ground_truths[k].box) < min_iou) continue;
      replace(pred, img.ground_truths[k]);
    }
  }
  return out;
}

}  // namespace

double box_iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw InvalidArgument("box_iou: degenerate box");
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double mask_iou(const DenseTensor& a, const DenseTensor& b, double threshold) {
  if (!a.same_shape(b))
    throw InvalidArgument("mask_iou: shapes " + shape_string(a.dims()) + " and " +
                          shape_string(b.dims()) + " differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a[i] >= threshold;
    const bool fb = b[i] >= threshold;
    inter += (fa && fb) ? 1 : 0;
    uni += (fa || fb) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double interpolated_ap(const std::vector<bool>& is_tp, std::size_t positives) {
  if (positives == 0) return 0.0;
  const std::size_t n = is_tp.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(positives);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

APResult average_precision(const std::vector<EvalImage>& images, IouKind kind,
                           const std::vector<double>& thresholds, double mask_threshold) {
  std::set<int> classes;
  for (const auto& img : images)
    for (const auto& g : img.ground_truths) classes.insert(g.class_id);

  APResult result;
  const auto it50 = std::find(thresholds.begin(), thresholds.end(), 0.5);
  for (int cls : classes) {
    ClassAP entry;
    entry.class_id = cls;
    std::vector<RankedPrediction> ranked;
    for (std::size_t i = 0; i < images.size(); ++i) {
      for (const auto& g : images[i].ground_truths) entry.positives += g.class_id == cls ? 1 : 0;
      for (std::size_t j = 0; j < images[i].predictions.size(); ++j)
        if (images[i].predictions[j].class_id == cls)
          ranked.push_back({i, j, images[i].predictions[j].score});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const RankedPrediction& a, const RankedPrediction& b) { return a.score > b.score; });

    // IoU of each ranked prediction against every same-class GT of its image.
    std::vector<std::vector<std::pair<std::size_t, double>>> candidates(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& img = images[ranked[r].image];
      const auto& pred = img.predictions[ranked[r].index];
      for (std::size_t g = 0; g < img.ground_truths.size(); ++g)
        if (img.ground_truths[g].class_id == cls)
          candidates[r].push_back({g, pair_iou(pred, img.ground_truths[g], kind, mask_threshold)});
    }

    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::vector<std::vector<bool>> matched(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) matched[i].assign(images[i].ground_truths.size(), false);
      std::vector<bool> is_tp(ranked.size(), false);
      for (std::size_t r = 0; r < ranked.size(); ++r) {
        double best = -1.0;
        std::size_t best_g = 0;
        for (const auto& [g, iou] : candidates[r]) {
          if (matched[ranked[r].image][g] || iou < thresholds[t]) continue;
          if (iou > best) {
            best = iou;
            best_g = g;
          }
        }
        if (best >= 0.0) {
          matched[ranked[r].image][best_g] = true;
          is_tp[r] = true;
        }
      }
      if (t == 0) entry.true_positives = static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
      entry.ap_per_threshold.push_back(interpolated_ap(is_tp, entry.positives));
    }
    double s = 0.0;
    for (double v : entry.ap_per_threshold) s += v;
    entry.ap = entry.ap_per_threshold.empty() ? 0.0 : s / static_cast<double>(entry.ap_per_threshold.size());
    if (it50 != thresholds.end())
      entry.ap50 = entry.ap_per_threshold[static_cast<std::size_t>(it50 - thresholds.begin())];
    result.per_class.push_back(std::move(entry));
  }

  if (!result.per_class.empty()) {
    double sa = 0.0, s50 = 0.0;
    for (const auto& c : result.per_class) {
      sa += c.ap;
      s50 += c.ap50;
    }
    result.ap = sa / static_cast<double>(result.per_class.size());
    result.ap50 = s50 / static_cast<double>(result.per_class.size());
  }
  return result;
}

double fg_ap(const std::vector<EvalImage>& images, IouKind kind,
             const std::vector<double>& thresholds, double mask_threshold) {
  std::vector<EvalImage> agnostic = images;
  for (auto& img : agnostic) {
    for (auto& g : img.ground_truths) g.class_id = 0;
    for (auto& p : img.predictions) p.class_id = 0;
  }
  return average_precision(agnostic, kind, thresholds, mask_threshold).ap;
}

TpRatioDiagnostic tp_ratio_diagnostic(const std::vector<std::size_t>& tp,
                                      const std::vector<std::size_t>& positives) {
  if (tp.size() != positives.size()) throw InvalidArgument("tp_ratio_diagnostic: length mismatch");
  TpRatioDiagnostic d;
  std::size_t stp = 0, sp = 0, counted = 0;
  double mean = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    if (tp[c] > positives[c]) throw InvalidArgument("tp_ratio_diagnostic: TP exceeds P");
    stp += tp[c];
    sp += positives[c];
    if (positives[c] == 0) continue;
    mean += static_cast<double>(tp[c]) / static_cast<double>(positives[c]);
    ++counted;
  }
  d.pooled = sp == 0 ? 0.0 : static_cast<double>(stp) / static_cast<double>(sp);
  d.class_mean = counted == 0 ? 0.0 : mean / static_cast<double>(counted);
  return d;
}

std::size_t best_gt_index(const Box& box, const std::vector<GroundTruthInstance>& gts) {
  std::size_t best = 0;
  double best_iou = -1.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const double iou = box_iou(box, gts[i].box);
    if (iou > best_iou) {
      best_iou = iou;
      best = i;
    }
  }
  return best;
}

AllocationResult gt_class_allocation(const std::vector<EvalImage>& images, double min_iou) {
  return allocate(images, min_iou, "gt_class_allocation",
                  [](InstancePrediction& p, const GroundTruthInstance& g) { p.class_id = g.class_id; });
}

AllocationResult gt_mask_allocation(const std::vector<EvalImage>& images, double min_iou) {
  return allocate(images, min_iou, "gt_mask_allocation",
                  [](InstancePrediction& p, const GroundTruthInstance& g) { p.mask = g.mask; });
}

EvalReport evaluate(const std::vector<EvalImage>& images, const EvalOptions& options) {
  EvalReport r;
  r.detection.ap = average_precision(images, IouKind::kBox, options.thresholds, options.mask_threshold);
  r.detection.fg_ap = fg_ap(images, IouKind::kBox, options.thresholds, options.mask_threshold);
  r.segmentation.ap = average_precision(images, IouKind::kMask, options.thresholds, options.mask_threshold);
  r.segmentation.fg_ap = fg_ap(images, IouKind::kMask, options.thresholds, options.mask_threshold);
  return r;
}

}  // namespace mrefine
