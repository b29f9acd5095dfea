#include "mrefine/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mrefine/errors.hpp"
#include "mrefine/losses.hpp"
#include "mrefine/numerics.hpp"
#include "mrefine/rng.hpp"

namespace mrefine {
namespace {

constexpr int kMaxPlacementAttempts = 1000;

// Inverse of A^T A for a d x n matrix A (Gauss-Jordan, partial pivoting).
std::vector<double> gram_inverse(const DenseTensor& a) {
  const std::size_t d = a.dim(0);
  const std::size_t n = a.dim(1);
  std::vector<double> m(n * 2 * n, 0.0);
  const std::size_t w = 2 * n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(a.at(k, i)) * a.at(k, j);
      m[i * w + j] = acc;
    }
    m[i * w + n + i] = 1.0;
  }
  double largest = 0.0;
  for (std::size_t i = 0; i < n; ++i) largest = std::max(largest, m[i * w + i]);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < n; ++i)
      if (std::abs(m[i * w + col]) > std::abs(m[piv * w + col])) piv = i;
    if (!(std::abs(m[piv * w + col]) > 1e-10 * largest))
      throw InvalidArgument("make_ncc_problem: target classifiers are linearly dependent");
    for (std::size_t j = 0; j < w; ++j) std::swap(m[col * w + j], m[piv * w + j]);
    const double p = m[col * w + col];
    for (std::size_t j = 0; j < w; ++j) m[col * w + j] /= p;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == col) continue;
      const double f = m[i * w + col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < w; ++j) m[i * w + j] -= f * m[col * w + j];
    }
  }
  std::vector<double> inv(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) inv[i * n + j] = m[i * w + n + j];
  return inv;
}

struct Blob {
  BlobShape shape;
  double cx, cy, rx, ry;
};

bool covers(const Blob& b, std::size_t y, std::size_t x) {
  const double dx = (static_cast<double>(x) + 0.5 - b.cx) / b.rx;
  const double dy = (static_cast<double>(y) + 0.5 - b.cy) / b.ry;
  if (b.shape == BlobShape::kEllipse) return dx * dx + dy * dy <= 1.0;
  return std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
}

std::vector<std::uint8_t> rasterize(const Blob& b, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> m(h * w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m[y * w + x] = covers(b, y, x) ? 1 : 0;
  return m;
}

std::vector<float> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<float> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& e : v) {
      e = static_cast<float>(rng.normal());
      norm += static_cast<double>(e) * e;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& e : v) e = static_cast<float>(e / norm);
  return v;
}

Box tight_box(const DenseTensor& mask) {
  const std::size_t h = mask.dim(0);
  const std::size_t w = mask.dim(1);
  std::size_t x0 = w, y0 = h, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (mask.at(y, x) > 0.5f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
          static_cast<double>(y1 + 1)};
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 4 || width < 4) throw InvalidArgument("SynthConfig: map must be at least 4 x 4");
  if (min_instances < 1 || max_instances < min_instances)
    throw InvalidArgument("SynthConfig: need 1 <= min_instances <= max_instances");
  if (!(min_radius >= 1.0) || !(max_radius >= min_radius))
    throw InvalidArgument("SynthConfig: need 1 <= min_radius <= max_radius");
  if (2.0 * max_radius > static_cast<double>(std::min(height, width)))
    throw InvalidArgument("SynthConfig: max_radius too large for the map");
  if (shapes.empty()) throw InvalidArgument("SynthConfig: no blob shapes enabled");
  if (num_classes < 1) throw InvalidArgument("SynthConfig: num_classes must be positive");
  if (!(separation > 0.0)) throw InvalidArgument("SynthConfig: separation must be positive");
  if (!(feature_sigma >= 0.0) || !(color_sigma >= 0.0) || !(head_perturb_sigma >= 0.0) ||
      !(head_init_sigma >= 0.0))
    throw InvalidArgument("SynthConfig: sigmas must be non-negative");
  if (!(max_overlap >= 0.0 && max_overlap < 1.0)) throw InvalidArgument("SynthConfig: max_overlap must lie in [0, 1)");
  if (!(box_margin >= 0.0)) throw InvalidArgument("SynthConfig: box_margin must be non-negative");
  if (head_fit_iterations < 0) throw InvalidArgument("SynthConfig: head_fit_iterations must be non-negative");
  if (!(head_fit_lr > 0.0)) throw InvalidArgument("SynthConfig: head_fit_lr must be positive");
}

Box prediction_box(const Box& gt_box, const SynthConfig& config) {
  return {std::max(0.0, gt_box.x1 - config.box_margin), std::max(0.0, gt_box.y1 - config.box_margin),
          std::min(static_cast<double>(config.width), gt_box.x2 + config.box_margin),
          std::min(static_cast<double>(config.height), gt_box.y2 + config.box_margin)};
}

std::uint64_t head_fit_seed(std::uint64_t seed, std::uint64_t scene_id, std::size_t instance) {
  return derive_seed({seed, scene_id, instance, 1});
}

std::uint64_t head_perturb_seed(std::uint64_t seed, std::uint64_t scene_id, std::size_t instance) {
  return derive_seed({seed, scene_id, instance, 2});
}

Scene generate_scene(const SynthConfig& config, std::uint64_t seed, std::uint64_t scene_id,
                     std::vector<std::string>* diagnostics) {
  config.validate();
  const std::size_t h = config.height;
  const std::size_t w = config.width;
  Rng rng(derive_seed({seed, scene_id}));

  Scene scene;
  scene.scene_id = scene_id;
  scene.seed = seed;
  scene.height = h;
  scene.width = w;

  const auto wanted = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(config.min_instances),
                                                           static_cast<std::int64_t>(config.max_instances)));
  std::vector<Blob> blobs;
  std::vector<std::vector<std::uint8_t>> raster;
  for (int attempt = 0; attempt < kMaxPlacementAttempts && blobs.size() < wanted; ++attempt) {
    Blob b;
    b.shape = config.shapes[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(config.shapes.size()) - 1))];
    b.rx = rng.uniform(config.min_radius, config.max_radius);
    b.ry = rng.uniform(config.min_radius, config.max_radius);
    b.cx = rng.uniform(b.rx, static_cast<double>(w) - b.rx);
    b.cy = rng.uniform(b.ry, static_cast<double>(h) - b.ry);
    auto m = rasterize(b, h, w);
    const auto area = static_cast<double>(std::count(m.begin(), m.end(), 1));
    if (area < 4.0) continue;
    bool ok = true;
    for (const auto& other : raster) {
      double inter = 0.0;
      for (std::size_t p = 0; p < m.size(); ++p) inter += (m[p] && other[p]) ? 1.0 : 0.0;
      const double smaller = std::min(area, static_cast<double>(std::count(other.begin(), other.end(), 1)));
      if (inter > config.max_overlap * smaller) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    blobs.push_back(b);
    raster.push_back(std::move(m));
  }
  if (blobs.size() < wanted && diagnostics)
    diagnostics->push_back("scene " + std::to_string(scene_id) + ": placed " +
                           std::to_string(blobs.size()) + " of " + std::to_string(wanted) +
                           " instances");

  // Later blobs occlude earlier ones.
  std::vector<int> owner(h * w, -1);
  for (std::size_t i = 0; i < raster.size(); ++i)
    for (std::size_t p = 0; p < h * w; ++p)
      if (raster[i][p]) owner[p] = static_cast<int>(i);

  const std::size_t regions = blobs.size() + 1;  // slot 0 = background
  std::vector<std::vector<float>> embedding(regions);
  std::vector<std::array<double, 3>> color(regions);
  for (std::size_t r = 0; r < regions; ++r) {
    embedding[r] = unit_vector(rng, kMaskFeatureChannels);
    for (auto& c : color[r]) c = rng.uniform();
  }

  scene.mask_features = DenseTensor({h, w, kMaskFeatureChannels});
  scene.color_map = DenseTensor({h, w, 3});
  for (std::size_t p = 0; p < h * w; ++p) {
    const auto r = static_cast<std::size_t>(owner[p] + 1);
    for (std::size_t c = 0; c < kMaskFeatureChannels; ++c)
      scene.mask_features[p * kMaskFeatureChannels + c] = static_cast<float>(
          embedding[r][c] * config.separation + (config.feature_sigma > 0.0 ? rng.normal(0.0, config.feature_sigma) : 0.0));
    for (std::size_t c = 0; c < 3; ++c)
      scene.color_map[p * 3 + c] = static_cast<float>(std::clamp(
          color[r][c] + (config.color_sigma > 0.0 ? rng.normal(0.0, config.color_sigma) : 0.0), 0.0, 1.0));
  }

  for (std::size_t i = 0; i < blobs.size(); ++i) {
    GroundTruthInstance gt;
    gt.class_id = static_cast<int>(rng.integer(0, config.num_classes - 1));
    gt.mask = DenseTensor({h, w});
    for (std::size_t p = 0; p < h * w; ++p) gt.mask[p] = owner[p] == static_cast<int>(i) ? 1.0f : 0.0f;
    gt.box = tight_box(gt.mask);
    scene.ground_truths.push_back(std::move(gt));
  }

  if (config.with_predictions) {
    std::vector<double> scores(scene.ground_truths.size());
    for (auto& s : scores) s = rng.uniform(0.5, 1.0);
    for (std::size_t i = 0; i < scene.ground_truths.size(); ++i) {
      InstancePrediction pred;
      pred.class_id = scene.ground_truths[i].class_id;
      pred.score = scores[i];
      pred.box = prediction_box(scene.ground_truths[i].box, config);
      const MaskHeadParams fitted =
          fit_reference_head(scene, i, config.head_fit_iterations, config, head_fit_seed(seed, scene_id, i));
      const MaskHeadParams initial =
          perturb_head(fitted, config.head_perturb_sigma, head_perturb_seed(seed, scene_id, i));
      pred.mask = head_forward(initial, scene.mask_features, make_rel_coords(h, w, pred.box)).mask;
      pred.head = initial;
      scene.predictions.push_back(std::move(pred));
    }
  }
  return scene;
}

MaskHeadParams fit_reference_head(const Scene& scene, std::size_t instance_index,
                                  std::int64_t iterations, const SynthConfig& config,
                                  std::uint64_t seed) {
  if (instance_index >= scene.ground_truths.size())
    throw InvalidArgument("fit_reference_head: instance " + std::to_string(instance_index) +
                          " does not exist");
  if (iterations < 0) throw InvalidArgument("fit_reference_head: iterations must be non-negative");
  const auto& gt = scene.ground_truths[instance_index];
  const DenseTensor rel = make_rel_coords(scene.height, scene.width, prediction_box(gt.box, config));

  MaskHeadParams params;
  Rng rng(seed);
  for (float& v : params.values()) v = static_cast<float>(rng.normal(0.0, config.head_init_sigma));

  AdamWState state = AdamWState::for_shape({MaskHeadParams::size()});
  DenseTensor upstream({scene.height, scene.width});
  for (std::int64_t it = 0; it < iterations; ++it) {
    const HeadActivations acts = head_forward_activations(params, scene.mask_features, rel);
    dice_loss_grad(acts.mask.values(), gt.mask.values(), upstream.values());
    const MaskHeadParams grad = head_backward(params, acts, upstream);
    adamw_step(params.values(), grad.values(), state, config.head_fit_lr);
  }
  return params;
}

MaskHeadParams perturb_head(const MaskHeadParams& params, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("perturb_head: sigma must be non-negative");
  if (sigma == 0.0) return params;
  Rng rng(seed);
  MaskHeadParams out = params;
  for (float& v : out.values()) v = static_cast<float>(v + rng.normal(0.0, sigma));
  return out;
}

SeparabilityAudit audit_separability(const Scene& scene) {
  const std::size_t n = scene.height * scene.width;
  const std::size_t c = kMaskFeatureChannels;
  std::vector<int> owner(n, -1);
  for (std::size_t i = 0; i < scene.ground_truths.size(); ++i)
    for (std::size_t p = 0; p < n; ++p)
      if (scene.ground_truths[i].mask[p] > 0.5f) owner[p] = static_cast<int>(i);

  const std::size_t regions = scene.ground_truths.size() + 1;
  std::vector<std::vector<double>> mean(regions, std::vector<double>(c, 0.0));
  std::vector<std::size_t> count(regions, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = static_cast<std::size_t>(owner[p] + 1);
    ++count[r];
    for (std::size_t k = 0; k < c; ++k) mean[r][k] += scene.mask_features[p * c + k];
  }
  for (std::size_t r = 0; r < regions; ++r)
    if (count[r])
      for (auto& v : mean[r]) v /= static_cast<double>(count[r]);

  SeparabilityAudit audit;
  double noise = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = static_cast<std::size_t>(owner[p] + 1);
    double d2 = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = scene.mask_features[p * c + k] - mean[r][k];
      d2 += d * d;
    }
    noise += std::sqrt(d2);
  }
  audit.mean_noise_norm = n ? noise / static_cast<double>(n) : 0.0;

  double inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < regions; ++a)
    for (std::size_t b = a + 1; b < regions; ++b) {
      if (!count[a] || !count[b]) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < c; ++k) d2 += (mean[a][k] - mean[b][k]) * (mean[a][k] - mean[b][k]);
      inter += std::sqrt(d2);
      ++pairs;
    }
  audit.mean_inter_distance = pairs ? inter / static_cast<double>(pairs) : 0.0;
  return audit;
}

RefinementCase make_refinement_case(const SynthConfig& config, std::uint64_t seed) {
  RefinementCase rc;
  SynthConfig bare = config;
  bare.with_predictions = false;
  rc.scene = generate_scene(bare, seed, 0);
  rc.instance = 0;
  rc.box = prediction_box(rc.scene.ground_truths[0].box, config);
  rc.rel_coords = make_rel_coords(rc.scene.height, rc.scene.width, rc.box);
  rc.reference = fit_reference_head(rc.scene, 0, config.head_fit_iterations, config, head_fit_seed(seed, 0, 0));
  rc.initial = perturb_head(rc.reference, config.head_perturb_sigma, head_perturb_seed(seed, 0, 0));
  return rc;
}

NccProblem make_ncc_problem(const NccProblemConfig& config, std::uint64_t seed) {
  if (config.d < 1 || config.n_novel < 1 || config.shots < 1)
    throw InvalidArgument("make_ncc_problem: d, n_novel and shots must be positive");
  Rng rng(derive_seed({seed, 0x4e4343}));
  NccProblem prob;
  prob.theta_base = DenseTensor({config.d, config.n_base});
  for (float& v : prob.theta_base.values()) v = static_cast<float>(rng.normal());
  prob.basis = build_basis(prob.theta_base, config.r, derive_seed({seed, 1}));
  const std::size_t m = prob.basis.dim(1);
  prob.alpha_star = DenseTensor({m, config.n_novel});
  for (float& v : prob.alpha_star.values()) v = static_cast<float>(rng.normal() / std::sqrt(static_cast<double>(m)));
  prob.theta_star = compose(prob.basis, prob.alpha_star);

  // Features are built so that theta_star^T x hits a chosen logit vector t
  // exactly: x = g - theta_star G^-1 (theta_star^T g - t), G = theta_star^T theta_star.
  const std::size_t n = config.n_novel;
  const std::vector<double> g_inv = gram_inverse(prob.theta_star);
  const double scale = config.min_margin * std::sqrt(static_cast<double>(config.d));
  std::vector<std::vector<NccSample>> by_class(n);
  std::vector<double> g(config.d), rhs(n), y(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t draws = 0; by_class[c].size() < config.shots; ++draws) {
      if (draws > 100'000) throw InvalidArgument("make_ncc_problem: could not meet min_margin");
      for (double& v : g) v = rng.normal();
      for (std::size_t j = 0; j < n; ++j) {
        const double t = (1.2 + rng.uniform()) * scale * (j == c ? 1.0 : -1.0);
        double acc = 0.0;
        for (std::size_t k = 0; k < config.d; ++k) acc += static_cast<double>(prob.theta_star.at(k, j)) * g[k];
        rhs[j] = acc - t;
      }
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g_inv[i * n + j] * rhs[j];
        y[i] = acc;
      }
      NccSample s;
      s.feature.resize(config.d);
      double norm = 0.0;
      for (std::size_t k = 0; k < config.d; ++k) {
        double v = g[k];
        for (std::size_t j = 0; j < n; ++j) v -= static_cast<double>(prob.theta_star.at(k, j)) * y[j];
        s.feature[k] = static_cast<float>(v);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      // Re-check in float: every logit keeps its sign with the margin.
      bool ok = true;
      for (std::size_t j = 0; j < n && ok; ++j) {
        double z = 0.0;
        for (std::size_t k = 0; k < config.d; ++k) z += static_cast<double>(prob.theta_star.at(k, j)) * s.feature[k];
        ok = (j == c ? z : -z) >= config.min_margin * norm;
      }
      if (!ok) continue;
      s.label = c;
      by_class[c].push_back(std::move(s));
    }
  }
  // Class-interleaved order so every prefix is balanced.
  for (std::size_t k = 0; k < config.shots; ++k)
    for (std::size_t c = 0; c < config.n_novel; ++c) prob.samples.push_back(by_class[c][k]);
  return prob;
}

}  // namespace mrefine
