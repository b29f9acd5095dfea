#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mrefine/mask_head.hpp"
#include "mrefine/ncc.hpp"
#include "mrefine/scene.hpp"

namespace mrefine {

enum class BlobShape { kEllipse, kRectangle };

struct SynthConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  double min_radius = 4.0;
  double max_radius = 9.0;
  std::vector<BlobShape> shapes{BlobShape::kEllipse, BlobShape::kRectangle};
  int num_classes = 5;
  double separation = 1.0;
  double feature_sigma = 0.05;
  double color_sigma = 0.05;
  // Maximum overlap between two blobs as a fraction of the smaller one.
  double max_overlap = 0.2;
  // Predicted boxes are the ground-truth box grown by this many pixels.
  double box_margin = 2.0;
  bool with_predictions = true;
  std::int64_t head_fit_iterations = 500;
  double head_fit_lr = 0.05;
  double head_init_sigma = 0.1;
  double head_perturb_sigma = 0.8;
  std::size_t num_scenes = 20;

  void validate() const;
};

// The predicted box used for a ground truth: grown by box_margin, clipped to the map.
Box prediction_box(const Box& gt_box, const SynthConfig& config);

// Places blobs, draws embeddings and colours, and (when with_predictions)
// fits and perturbs one reference head per instance. Deterministic in
// (config, seed, scene_id). If fewer instances fit than requested after
// 1000 attempts, a note is appended to `diagnostics`.
Scene generate_scene(const SynthConfig& config, std::uint64_t seed, std::uint64_t scene_id,
                     std::vector<std::string>* diagnostics = nullptr);

// AdamW on the dice loss against the instance's ground-truth mask, from a
// seeded N(0, head_init_sigma) initialisation.
MaskHeadParams fit_reference_head(const Scene& scene, std::size_t instance_index,
                                  std::int64_t iterations, const SynthConfig& config,
                                  std::uint64_t seed);

// Adds i.i.d. N(0, sigma) to all 169 parameters.
MaskHeadParams perturb_head(const MaskHeadParams& params, double sigma, std::uint64_t seed);

struct SeparabilityAudit {
  double mean_inter_distance = 0.0;  // between region embeddings (instances and background)
  double mean_noise_norm = 0.0;      // ||f_x - region mean||, averaged over pixels
};

SeparabilityAudit audit_separability(const Scene& scene);

// One instance prepared for refinement: the fitted reference head, the
// perturbed initial head, and its relative coordinates.
struct RefinementCase {
  Scene scene;
  std::size_t instance = 0;
  MaskHeadParams reference;
  MaskHeadParams initial;
  DenseTensor rel_coords;
  Box box;
};

// Scene `seed` (scene id 0), first instance.
RefinementCase make_refinement_case(const SynthConfig& config, std::uint64_t seed);

// Seeds for the per-instance head fit and perturbation inside generate_scene.
std::uint64_t head_fit_seed(std::uint64_t seed, std::uint64_t scene_id, std::size_t instance);
std::uint64_t head_perturb_seed(std::uint64_t seed, std::uint64_t scene_id, std::size_t instance);

struct NccProblemConfig {
  std::size_t d = 256;
  std::size_t n_base = 60;
  std::int64_t r = 20;
  std::size_t n_novel = 20;
  std::size_t shots = 10;
  // Every target logit is at least this far from zero (positive for the
  // label, negative otherwise), relative to the feature norm.
  double min_margin = 0.05;
};

// Random base classifiers, target novel classifiers inside the basis span,
// and `shots` features per class placed so that the target classifiers give
// exactly one positive logit, the label's. Throws InvalidArgument when
// n_novel exceeds the rank of the targets.
struct NccProblem {
  DenseTensor theta_base;
  DenseTensor basis;
  DenseTensor alpha_star;
  DenseTensor theta_star;
  std::vector<NccSample> samples;
};

NccProblem make_ncc_problem(const NccProblemConfig& config, std::uint64_t seed);

}  // namespace mrefine
