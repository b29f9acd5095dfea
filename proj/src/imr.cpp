#include "mrefine/imr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrefine/errors.hpp"
#include "mrefine/kernels.hpp"

namespace mrefine {
namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw InvalidArgument(std::string("IMRConfig.") + name + " must be positive");
}

std::span<const float> feature_at(const DenseTensor& t, std::size_t pixel) {
  const std::size_t c = t.dims().back();
  return t.values().subspan(pixel * c, c);
}

void check_map_pair(const DenseTensor& features, const DenseTensor& mask) {
  if (features.rank() != 3 || mask.rank() != 2 || features.dim(0) != mask.dim(0) ||
      features.dim(1) != mask.dim(1))
    throw InvalidArgument("features " + shape_string(features.dims()) + " and mask " +
                          shape_string(mask.dims()) + " do not conform");
}

EnergyResult evaluate(const MaskHeadParams& params, const HeadActivations& acts,
                      const UnaryContext& unary, const PairwiseGraph& graph,
                      const IMRConfig& config) {
  const std::size_t h = acts.mask.dim(0);
  const std::size_t w = acts.mask.dim(1);
  const std::size_t n = h * w;
  if (graph.height != h || graph.width != w || unary.fg_sim.size() != n ||
      unary.bg_sim.size() != n || unary.gray_mask.size() != n)
    throw InvalidArgument("imr_energy: context or graph does not match the feature map");

  std::vector<float> fg_coef(n, 0.0f);
  std::vector<float> bg_coef(n, 0.0f);
  for (std::size_t p = 0; p < n; ++p) {
    if (unary.gray_mask[p]) continue;
    fg_coef[p] = static_cast<float>(config.eta * unary.fg_sim[p]);
    bg_coef[p] = unary.bg_sim[p];
  }

  EnergyResult r;
  DenseTensor grad_mask({h, w});
  r.energy = kernels::mrf_energy(acts.mask.values(), h, w, fg_coef, bg_coef,
                                 graph.neighbour_weights, config.mu1, config.mu2,
                                 grad_mask.values(), &r.unary, &r.pairwise);
  if (!std::isfinite(r.energy)) throw NumericError("imr_energy: non-finite energy");
  r.gradient = head_backward(params, acts, grad_mask);
  return r;
}

DenseTensor crop_map(const DenseTensor& t, const PixelRect& rect) {
  const std::size_t c = t.dims().back();
  const auto ch = static_cast<std::size_t>(rect.y1 - rect.y0 + 1);
  const auto cw = static_cast<std::size_t>(rect.x1 - rect.x0 + 1);
  DenseTensor out({ch, cw, c});
  for (std::size_t y = 0; y < ch; ++y) {
    const auto src = t.values().subspan(
        ((y + static_cast<std::size_t>(rect.y0)) * t.dim(1) + static_cast<std::size_t>(rect.x0)) * c,
        cw * c);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(y * cw * c));
  }
  return out;
}

}  // namespace

void IMRConfig::validate() const {
  require_positive(mu1, "mu1");
  require_positive(mu2, "mu2");
  require_positive(eta, "eta");
  require_positive(kappa_proto, "kappa_proto");
  require_positive(kappa_pair, "kappa_pair");
  require_positive(pair_weight_threshold, "pair_weight_threshold");
  require_positive(gray_divisor, "gray_divisor");
  require_positive(lr, "lr");
  if (bg_topk < 1) throw InvalidArgument("IMRConfig.bg_topk must be at least 1");
  if (iterations < 0) throw InvalidArgument("IMRConfig.iterations must be non-negative");
}

std::vector<PairwiseEdge> PairwiseGraph::edges() const {
  std::vector<PairwiseEdge> out;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t k = 0; k < kernels::kNeighbourOffsets.size(); ++k) {
        const float wgt = neighbour_weights[(y * width + x) * 8 + k];
        if (wgt == 0.0f) continue;
        out.push_back({{y, x},
                       {static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + kernels::kNeighbourOffsets[k][0]),
                        static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + kernels::kNeighbourOffsets[k][1])},
                       wgt});
      }
    }
  }
  return out;
}

std::vector<float> compute_foreground_prototype(const DenseTensor& first_layer_features,
                                                const DenseTensor& mask,
                                                PrototypeNormalization normalization) {
  check_map_pair(first_layer_features, mask);
  const std::size_t c = first_layer_features.dim(2);
  std::vector<double> acc(c, 0.0);
  double mass = 0.0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double m = mask[p];
    mass += m;
    const auto f = feature_at(first_layer_features, p);
    for (std::size_t k = 0; k < c; ++k) acc[k] += f[k] * m;
  }
  const double denom =
      normalization == PrototypeNormalization::kPixelCount ? static_cast<double>(mask.size()) : mass;
  std::vector<float> out(c, 0.0f);
  if (denom > 0.0)
    for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<float>(acc[k] / denom);
  return out;
}

std::vector<PixelIndex> box_perimeter(const Box& box, std::size_t height, std::size_t width) {
  const PixelRect r = pixel_rect(box, height, width);
  std::vector<PixelIndex> out;
  if (r.empty()) return out;
  for (auto y = r.y0; y <= r.y1; ++y) {
    for (auto x = r.x0; x <= r.x1; ++x) {
      if (y == r.y0 || y == r.y1 || x == r.x0 || x == r.x1)
        out.push_back({static_cast<std::size_t>(y), static_cast<std::size_t>(x)});
    }
  }
  return out;
}

std::vector<float> compute_background_prototype(const DenseTensor& first_layer_features,
                                                std::span<const float> p_fg, const Box& box,
                                                std::size_t topk) {
  if (first_layer_features.rank() != 3 || first_layer_features.dim(2) != p_fg.size())
    throw InvalidArgument("compute_background_prototype: prototype length does not match features");
  if (topk < 1) throw InvalidArgument("compute_background_prototype: topk must be at least 1");
  const std::size_t h = first_layer_features.dim(0);
  const std::size_t w = first_layer_features.dim(1);
  const auto ring = box_perimeter(box, h, w);
  if (ring.empty()) throw InvalidArgument("compute_background_prototype: box perimeter is empty");

  std::vector<double> err(ring.size());
  for (std::size_t i = 0; i < ring.size(); ++i)
    err[i] = squared_distance(feature_at(first_layer_features, ring[i].y * w + ring[i].x), p_fg);
  std::vector<std::size_t> order(ring.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });

  const std::size_t take = std::min(topk, ring.size());
  std::vector<double> acc(p_fg.size(), 0.0);
  for (std::size_t i = 0; i < take; ++i) {
    const auto f = feature_at(first_layer_features, ring[order[i]].y * w + ring[order[i]].x);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += f[k];
  }
  std::vector<float> out(acc.size());
  for (std::size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k] / static_cast<double>(take));
  return out;
}

GrayZone compute_gray_zone(const DenseTensor& fg_err, const DenseTensor& bg_err,
                           double gray_divisor) {
  if (!fg_err.same_shape(bg_err)) throw InvalidArgument("compute_gray_zone: error maps differ in shape");
  if (!(gray_divisor > 0.0)) throw InvalidArgument("compute_gray_zone: divisor must be positive");
  GrayZone z;
  z.g_values = DenseTensor(fg_err.dims());
  float g_max = 0.0f;
  for (std::size_t p = 0; p < fg_err.size(); ++p) {
    z.g_values[p] = std::min(fg_err[p], bg_err[p]);
    g_max = std::max(g_max, z.g_values[p]);
  }
  z.rho = static_cast<double>(g_max) / gray_divisor;
  z.mask.assign(fg_err.size(), 0);
  if (g_max > 0.0f) {
    for (std::size_t p = 0; p < fg_err.size(); ++p) z.mask[p] = z.g_values[p] >= z.rho ? 1 : 0;
  }
  return z;
}

UnaryContext build_unary_context(const HeadForwardOutput& forward, const Box& box,
                                 const IMRConfig& config) {
  const DenseTensor& feats = forward.first_layer_features;
  check_map_pair(feats, forward.mask);
  const std::size_t h = feats.dim(0);
  const std::size_t w = feats.dim(1);
  const std::size_t n = h * w;

  UnaryContext ctx;
  ctx.p_fg = compute_foreground_prototype(feats, forward.mask, config.fg_normalization);
  ctx.edge_pixels = box_perimeter(box, h, w);
  ctx.p_bg = compute_background_prototype(feats, ctx.p_fg, box, config.bg_topk);

  ctx.fg_err = DenseTensor({h, w});
  ctx.bg_err = DenseTensor({h, w});
  ctx.fg_sim = DenseTensor({h, w});
  ctx.bg_sim = DenseTensor({h, w});
  for (std::size_t p = 0; p < n; ++p) {
    const auto f = feature_at(feats, p);
    const double ef = squared_distance(f, ctx.p_fg);
    const double eb = squared_distance(f, ctx.p_bg);
    ctx.fg_err[p] = static_cast<float>(ef);
    ctx.bg_err[p] = static_cast<float>(eb);
    ctx.fg_sim[p] = static_cast<float>(std::exp(-ef / config.kappa_proto));
    ctx.bg_sim[p] = static_cast<float>(std::exp(-eb / config.kappa_proto));
  }
  GrayZone zone = compute_gray_zone(ctx.fg_err, ctx.bg_err, config.gray_divisor);
  ctx.gray_mask = std::move(zone.mask);
  ctx.rho = zone.rho;
  ctx.g_values = std::move(zone.g_values);
  return ctx;
}

PairwiseGraph build_pairwise_graph(const DenseTensor& mask_features, double kappa,
                                   double threshold) {
  if (mask_features.rank() != 3) throw InvalidArgument("build_pairwise_graph: expected H x W x C features");
  if (!(kappa > 0.0)) throw InvalidArgument("build_pairwise_graph: kappa must be positive");
  PairwiseGraph g;
  g.height = mask_features.dim(0);
  g.width = mask_features.dim(1);
  g.neighbour_weights.assign(g.height * g.width * 8, 0.0f);
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      const std::size_t p = y * g.width + x;
      for (std::size_t k = 0; k < kernels::kNeighbourOffsets.size(); ++k) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + kernels::kNeighbourOffsets[k][0];
        const auto nx = static_cast<std::ptrdiff_t>(x) + kernels::kNeighbourOffsets[k][1];
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(g.height) ||
            nx >= static_cast<std::ptrdiff_t>(g.width))
          continue;
        const std::size_t q = static_cast<std::size_t>(ny) * g.width + static_cast<std::size_t>(nx);
        if (q < p) {
          g.neighbour_weights[p * 8 + k] = g.neighbour_weights[q * 8 + kernels::kReverseSlot[k]];
          continue;
        }
        const double s = similarity(feature_at(mask_features, p), feature_at(mask_features, q), kappa);
        g.neighbour_weights[p * 8 + k] = s > threshold ? static_cast<float>(s) : 0.0f;
      }
    }
  }
  return g;
}

EnergyResult imr_energy(const MaskHeadParams& params, const DenseTensor& mask_features,
                        const DenseTensor& rel_coords, const UnaryContext& unary,
                        const PairwiseGraph& graph, const IMRConfig& config) {
  return evaluate(params, head_forward_activations(params, mask_features, rel_coords), unary,
                  graph, config);
}

EnergyResult imr_energy(const MaskHeadParams& params, const DenseTensor& mask_features,
                        const DenseTensor& rel_coords, const Box& box, const PairwiseGraph& graph,
                        const IMRConfig& config) {
  const HeadActivations acts = head_forward_activations(params, mask_features, rel_coords);
  const UnaryContext ctx = build_unary_context({acts.mask, acts.hidden1}, box, config);
  return evaluate(params, acts, ctx, graph, config);
}

MaskHeadParams ensemble_heads(const MaskHeadParams& initial, const MaskHeadParams& refined) {
  MaskHeadParams out;
  for (std::size_t i = 0; i < MaskHeadParams::size(); ++i)
    out[i] = (initial[i] + refined[i]) * 0.5f;
  return out;
}

RefineResult refine_instance(const MaskHeadParams& initial, const DenseTensor& mask_features,
                             const DenseTensor& rel_coords, const Box& box,
                             const IMRConfig& config) {
  config.validate();
  if (mask_features.rank() != 3)
    throw InvalidArgument("refine_instance: mask features must be H x W x 8");

  // Energy domain: the whole map, or the box crop with the box shifted into it.
  const DenseTensor* feats = &mask_features;
  const DenseTensor* coords = &rel_coords;
  Box domain_box = box;
  DenseTensor cropped_feats, cropped_coords;
  if (config.roi_crop) {
    const PixelRect rect = pixel_rect(box, mask_features.dim(0), mask_features.dim(1));
    if (rect.empty()) throw InvalidArgument("refine_instance: box does not intersect the map");
    cropped_feats = crop_map(mask_features, rect);
    cropped_coords = crop_map(rel_coords, rect);
    feats = &cropped_feats;
    coords = &cropped_coords;
    domain_box = {box.x1 - static_cast<double>(rect.x0), box.y1 - static_cast<double>(rect.y0),
                  box.x2 - static_cast<double>(rect.x0), box.y2 - static_cast<double>(rect.y0)};
  }

  const PairwiseGraph graph = build_pairwise_graph(*feats, config.kappa_pair, config.pair_weight_threshold);
  RefineResult result;
  MaskHeadParams current = initial;
  AdamWState state = AdamWState::for_shape({MaskHeadParams::size()}, config.optimizer);

  try {
    for (std::int64_t t = 0; t <= config.iterations; ++t) {
      const HeadActivations acts = head_forward_activations(current, *feats, *coords);
      const UnaryContext ctx = build_unary_context({acts.mask, acts.hidden1}, domain_box, config);
      const EnergyResult e = evaluate(current, acts, ctx, graph, config);
      result.energy_trace.push_back(e.energy);
      if (t == config.iterations) break;
      adamw_step(current.values(), e.gradient.values(), state, config.lr);
      if (!current.all_finite()) throw NumericError("refine_instance: parameters became non-finite");
    }
    result.refined = current;
    result.ensembled = ensemble_heads(initial, current);
  } catch (const NumericError& err) {
    result.aborted = true;
    result.diagnostic = err.what();
    result.refined = current;
    result.ensembled = initial;
  }
  result.final_mask = head_forward(result.ensembled, mask_features, rel_coords).mask;
  return result;
}

}  // namespace mrefine
