#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mrefine/numerics.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

// Novel classifiers expressed as theta_novel = [theta_base ; noise] * alpha,
// with only alpha trainable.
struct ComposedClassifier {
  DenseTensor theta_base;  // d x n_base
  DenseTensor noise;       // d x r
  DenseTensor alpha;       // (n_base + r) x n_novel
  std::size_t d = 0;
  std::uint64_t seed = 0;

  DenseTensor basis() const;
  DenseTensor classifiers() const;  // d x n_novel
  std::size_t trainable_parameters() const { return alpha.size(); }
};

// Columns [0, n_base) are theta_base, the remaining r are i.i.d. N(0, 1) draws
// from `seed` (unit-normalised per column when `normalize_noise`). Throws
// InvalidArgument for r < 0.
DenseTensor build_basis(const DenseTensor& theta_base, std::int64_t r, std::uint64_t seed,
                        bool normalize_noise = false);

// Plain matrix product basis (d x m) * alpha (m x n).
DenseTensor compose(const DenseTensor& basis, const DenseTensor& alpha);

struct NccSample {
  std::vector<float> feature;
  std::size_t label = 0;
};

enum class NccLoss { kFocal, kMixupFocal };

struct NccFitConfig {
  NccLoss loss = NccLoss::kFocal;
  AdamWConfig optimizer{};
  double lr = 0.02;
  std::int64_t iterations = 500;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double mixup_beta = 2.0;
  double init_scale = 1e-2;
  double log_clamp = 1e-6;
};

struct NccFitResult {
  DenseTensor alpha;               // m x n_novel
  std::vector<double> loss_trace;  // training objective before each step
  double final_loss = 0.0;         // mean summed focal loss of the fitted alpha
  double train_accuracy = 0.0;
  std::size_t trainable_parameters = 0;
};

// Mean over samples of the per-class sigmoid focal loss summed over classes,
// with bias-free logits (basis * alpha)^T x.
double ncc_focal_objective(const DenseTensor& basis, const DenseTensor& alpha,
                           const std::vector<NccSample>& data, const NccFitConfig& config);

// Fits alpha by AdamW with the basis frozen. Mixup pairs each sample with a
// seeded in-batch permutation and lambda ~ Beta(beta, beta).
NccFitResult fit_alpha(const DenseTensor& basis, const std::vector<NccSample>& data,
                       std::size_t n_novel, const NccFitConfig& config, std::uint64_t seed);

// Fraction of samples whose largest logit is their label.
double ncc_accuracy(const DenseTensor& classifiers, const std::vector<NccSample>& data);

struct AlphaRow {
  std::string base;
  std::string novel;
  float weight = 0.0f;
};

struct AlphaExport {
  std::vector<AlphaRow> rows;            // every (basis row, novel) pair, row-major
  std::vector<std::size_t> top_base;     // base row indices by max-over-novel weight
  std::vector<std::string> basis_names;  // base names then noise_0..noise_{r-1}
  std::vector<std::string> novel_names;

  // Header `base,novel,weight`.
  std::string to_csv() const;
  // Same columns, restricted to the top-ranked base rows in rank order.
  std::string top_csv() const;
};

AlphaExport export_alpha(const DenseTensor& alpha, const std::vector<std::string>& base_names,
                         const std::vector<std::string>& novel_names, std::size_t topk);

}  // namespace mrefine
