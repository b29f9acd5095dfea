#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrefine/box.hpp"
#include "mrefine/mask_head.hpp"
#include "mrefine/numerics.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

// How the foreground prototype is normalised: by the number of pixels in the
// map (default), or by the soft foreground area sum(m).
enum class PrototypeNormalization { kPixelCount, kSoftArea };

struct IMRConfig {
  double mu1 = 0.05;
  double mu2 = 5.0;
  double eta = 5.0;
  double kappa_proto = 0.05;
  double kappa_pair = 0.2;
  double pair_weight_threshold = 0.5;
  std::size_t bg_topk = 5;
  double gray_divisor = 5.0;
  std::int64_t iterations = 10;
  double lr = 0.05;
  AdamWConfig optimizer{};
  PrototypeNormalization fg_normalization = PrototypeNormalization::kPixelCount;
  // Restrict the energy to the predicted box instead of the whole map.
  bool roi_crop = false;

  // Throws InvalidArgument naming the first bad field.
  void validate() const;
};

struct PixelIndex {
  std::size_t y = 0;
  std::size_t x = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct GrayZone {
  std::vector<std::uint8_t> mask;  // 1 = gray (excluded from the unary term)
  double rho = 0.0;
  DenseTensor g_values;
};

struct UnaryContext {
  std::vector<float> p_fg;
  std::vector<float> p_bg;
  DenseTensor fg_sim;
  DenseTensor bg_sim;
  DenseTensor fg_err;
  DenseTensor bg_err;
  std::vector<std::uint8_t> gray_mask;
  double rho = 0.0;
  DenseTensor g_values;
  std::vector<PixelIndex> edge_pixels;  // box perimeter candidates for p_bg
};

struct PairwiseEdge {
  PixelIndex from;
  PixelIndex to;
  float weight = 0.0f;
};

// Feature-affinity graph over the 8-neighbourhood. neighbour_weights is
// H x W x 8 in kernels::kNeighbourOffsets slot order; absent edges hold 0.
struct PairwiseGraph {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> neighbour_weights;

  // Directed edges with nonzero weight (each undirected pair appears twice).
  std::vector<PairwiseEdge> edges() const;
};

std::vector<float> compute_foreground_prototype(
    const DenseTensor& first_layer_features, const DenseTensor& mask,
    PrototypeNormalization normalization = PrototypeNormalization::kPixelCount);

// 1-pixel-wide ring of the box clipped to the map, row-major, corners once.
std::vector<PixelIndex> box_perimeter(const Box& box, std::size_t height, std::size_t width);

// Mean of the top-k perimeter features ranked by ||f - p_fg||^2, descending
// (ties keep perimeter order). Throws InvalidArgument on an empty perimeter.
std::vector<float> compute_background_prototype(const DenseTensor& first_layer_features,
                                                std::span<const float> p_fg, const Box& box,
                                                std::size_t topk = 5);

// g = min(fg_err, bg_err), rho = max(g) / divisor, gray = g >= rho; all-false
// when max(g) == 0.
GrayZone compute_gray_zone(const DenseTensor& fg_err, const DenseTensor& bg_err,
                           double gray_divisor = 5.0);

UnaryContext build_unary_context(const HeadForwardOutput& forward, const Box& box,
                                 const IMRConfig& config);

PairwiseGraph build_pairwise_graph(const DenseTensor& mask_features, double kappa = 0.2,
                                   double threshold = 0.5);

struct EnergyResult {
  double energy = 0.0;
  double unary = 0.0;     // unweighted unary sum
  double pairwise = 0.0;  // unweighted pairwise sum
  MaskHeadParams gradient;
};

// L = mu1 * L_unary + mu2 * L_pairwise with context and graph held fixed.
// Throws NumericError on a non-finite energy.
EnergyResult imr_energy(const MaskHeadParams& params, const DenseTensor& mask_features,
                        const DenseTensor& rel_coords, const UnaryContext& unary,
                        const PairwiseGraph& graph, const IMRConfig& config);

// Builds the unary context from `params` first, then evaluates.
EnergyResult imr_energy(const MaskHeadParams& params, const DenseTensor& mask_features,
                        const DenseTensor& rel_coords, const Box& box, const PairwiseGraph& graph,
                        const IMRConfig& config);

// Elementwise parameter average.
MaskHeadParams ensemble_heads(const MaskHeadParams& initial, const MaskHeadParams& refined);

struct RefineResult {
  MaskHeadParams refined;
  MaskHeadParams ensembled;
  DenseTensor final_mask;
  std::vector<double> energy_trace;
  bool aborted = false;
  std::string diagnostic;
};

// Runs `config.iterations` AdamW steps on the energy, recomputing the unary
// context from the current head each step, then ensembles with the initial
// head. On a non-finite energy or gradient the initial head is returned as
// the ensembled result with `aborted` set.
RefineResult refine_instance(const MaskHeadParams& initial, const DenseTensor& mask_features,
                             const DenseTensor& rel_coords, const Box& box,
                             const IMRConfig& config = {});

}  // namespace mrefine
