#include "mrefine/ncc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "format.hpp"
#include "mrefine/errors.hpp"
#include "mrefine/losses.hpp"
#include "mrefine/rng.hpp"

namespace mrefine {
namespace {

void check_dataset(const DenseTensor& basis, const std::vector<NccSample>& data, std::size_t n_novel) {
  if (basis.rank() != 2) throw InvalidArgument("ncc: basis must be d x m");
  if (data.empty()) throw InvalidArgument("fit_alpha: dataset is empty");
  if (n_novel == 0) throw InvalidArgument("fit_alpha: need at least one novel class");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].feature.size() != basis.dim(0))
      throw InvalidArgument("fit_alpha: sample " + std::to_string(i) + " has feature length " +
                            std::to_string(data[i].feature.size()) + ", expected " +
                            std::to_string(basis.dim(0)));
    if (data[i].label >= n_novel)
      throw InvalidArgument("fit_alpha: sample " + std::to_string(i) + " label out of range");
  }
}

// logits[c] = sum_k theta[k, c] * x[k]
void logits_of(const DenseTensor& theta, std::span<const double> x, std::vector<double>& z) {
  const std::size_t d = theta.dim(0);
  const std::size_t c = theta.dim(1);
  z.assign(c, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double xk = x[k];
    for (std::size_t j = 0; j < c; ++j) z[j] += theta[k * c + j] * xk;
  }
}

}  // namespace

DenseTensor ComposedClassifier::basis() const {
  if (noise.empty()) return theta_base;
  const std::size_t nb = theta_base.dim(1);
  const std::size_t r = noise.dim(1);
  DenseTensor out({d, nb + r});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < nb; ++j) out.at(k, j) = theta_base.at(k, j);
    for (std::size_t j = 0; j < r; ++j) out.at(k, nb + j) = noise.at(k, j);
  }
  return out;
}

DenseTensor ComposedClassifier::classifiers() const { return compose(basis(), alpha); }

DenseTensor build_basis(const DenseTensor& theta_base, std::int64_t r, std::uint64_t seed,
                        bool normalize_noise) {
  if (r < 0) throw InvalidArgument("build_basis: r must be non-negative");
  if (theta_base.rank() != 2 || theta_base.dim(0) < 1)
    throw InvalidArgument("build_basis: theta_base must be d x n_base with d >= 1");
  const std::size_t d = theta_base.dim(0);
  const std::size_t nb = theta_base.dim(1);
  const auto nr = static_cast<std::size_t>(r);
  DenseTensor out({d, nb + nr});
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t j = 0; j < nb; ++j) out.at(k, j) = theta_base.at(k, j);

  // Column-major draw order so the noise block does not depend on n_base.
  Rng rng(seed);
  for (std::size_t j = 0; j < nr; ++j) {
    for (std::size_t k = 0; k < d; ++k) out.at(k, nb + j) = static_cast<float>(rng.normal());
    if (normalize_noise) {
      double norm = 0.0;
      for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(out.at(k, nb + j)) * out.at(k, nb + j);
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t k = 0; k < d; ++k) out.at(k, nb + j) = static_cast<float>(out.at(k, nb + j) / norm);
    }
  }
  return out;
}

DenseTensor compose(const DenseTensor& basis, const DenseTensor& alpha) {
  if (basis.rank() != 2 || alpha.rank() != 2 || basis.dim(1) != alpha.dim(0))
    throw InvalidArgument("compose: basis " + shape_string(basis.dims()) + " and alpha " +
                          shape_string(alpha.dims()) + " do not conform");
  const std::size_t d = basis.dim(0);
  const std::size_t m = basis.dim(1);
  const std::size_t n = alpha.dim(1);
  DenseTensor out({d, n});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(basis.at(k, i)) * alpha.at(i, j);
      out.at(k, j) = static_cast<float>(acc);
    }
  }
  return out;
}

double ncc_focal_objective(const DenseTensor& basis, const DenseTensor& alpha,
                           const std::vector<NccSample>& data, const NccFitConfig& config) {
  const DenseTensor theta = compose(basis, alpha);
  std::vector<double> z;
  std::vector<double> x(basis.dim(0));
  double total = 0.0;
  for (const auto& s : data) {
    std::copy(s.feature.begin(), s.feature.end(), x.begin());
    logits_of(theta, x, z);
    for (std::size_t c = 0; c < z.size(); ++c)
      total += focal_loss(z[c], c == s.label ? 1 : 0, config.focal_alpha, config.focal_gamma,
                          config.log_clamp);
  }
  return total / static_cast<double>(data.size());
}

double ncc_accuracy(const DenseTensor& classifiers, const std::vector<NccSample>& data) {
  if (data.empty()) return 0.0;
  std::vector<double> z;
  std::vector<double> x(classifiers.dim(0));
  std::size_t hits = 0;
  for (const auto& s : data) {
    std::copy(s.feature.begin(), s.feature.end(), x.begin());
    logits_of(classifiers, x, z);
    const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    hits += best == s.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

NccFitResult fit_alpha(const DenseTensor& basis, const std::vector<NccSample>& data,
                       std::size_t n_novel, const NccFitConfig& config, std::uint64_t seed) {
  check_dataset(basis, data, n_novel);
  if (config.iterations < 0) throw InvalidArgument("fit_alpha: iterations must be non-negative");
  const std::size_t d = basis.dim(0);
  const std::size_t m = basis.dim(1);
  const std::size_t n = data.size();

  Rng rng(seed);
  NccFitResult result;
  result.alpha = DenseTensor({m, n_novel});
  for (float& a : result.alpha.values()) a = static_cast<float>(config.init_scale * rng.normal());
  result.trainable_parameters = result.alpha.size();

  AdamWState state = AdamWState::for_shape(result.alpha.dims(), config.optimizer);
  std::vector<std::size_t> partner(n);
  std::vector<double> lambdas(n, 1.0);
  std::vector<double> h(d), z;
  DenseTensor grad_alpha({m, n_novel});

  for (std::int64_t it = 0; it < config.iterations; ++it) {
    const bool mixup = config.loss == NccLoss::kMixupFocal;
    std::iota(partner.begin(), partner.end(), std::size_t{0});
    if (mixup) {
      std::shuffle(partner.begin(), partner.end(), rng.engine());
      for (double& l : lambdas) l = rng.beta(config.mixup_beta, config.mixup_beta);
    }

    const DenseTensor theta = compose(basis, result.alpha);
    std::vector<double> gt(d * n_novel, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = data[i];
      const auto& b = data[partner[i]];
      const double lam = lambdas[i];
      for (std::size_t k = 0; k < d; ++k) h[k] = lam * a.feature[k] + (1.0 - lam) * b.feature[k];
      logits_of(theta, h, z);
      for (std::size_t c = 0; c < n_novel; ++c) {
        const int ta = c == a.label ? 1 : 0;
        const int tb = c == b.label ? 1 : 0;
        loss += lam * focal_loss(z[c], ta, config.focal_alpha, config.focal_gamma, config.log_clamp) +
                (1.0 - lam) * focal_loss(z[c], tb, config.focal_alpha, config.focal_gamma, config.log_clamp);
        const double g =
            (lam * focal_loss_grad(z[c], ta, config.focal_alpha, config.focal_gamma, config.log_clamp) +
             (1.0 - lam) * focal_loss_grad(z[c], tb, config.focal_alpha, config.focal_gamma, config.log_clamp)) /
            static_cast<double>(n);
        for (std::size_t k = 0; k < d; ++k) gt[k * n_novel + c] += h[k] * g;
      }
    }
    result.loss_trace.push_back(loss / static_cast<double>(n));

    // dL/dalpha = basis^T dL/dtheta
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < n_novel; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(basis.at(k, i)) * gt[k * n_novel + c];
        grad_alpha.at(i, c) = static_cast<float>(acc);
      }
    }
    adamw_step(result.alpha, grad_alpha, state, config.lr);
  }

  result.final_loss = ncc_focal_objective(basis, result.alpha, data, config);
  result.train_accuracy = ncc_accuracy(compose(basis, result.alpha), data);
  return result;
}

AlphaExport export_alpha(const DenseTensor& alpha, const std::vector<std::string>& base_names,
                         const std::vector<std::string>& novel_names, std::size_t topk) {
  if (alpha.rank() != 2 || alpha.dim(1) != novel_names.size() || alpha.dim(0) < base_names.size())
    throw InvalidArgument("export_alpha: alpha " + shape_string(alpha.dims()) +
                          " does not match " + std::to_string(base_names.size()) + " base and " +
                          std::to_string(novel_names.size()) + " novel names");
  const std::size_t m = alpha.dim(0);
  const std::size_t n = alpha.dim(1);
  AlphaExport ex;
  ex.novel_names = novel_names;
  ex.basis_names = base_names;
  for (std::size_t k = 0; k + base_names.size() < m; ++k) ex.basis_names.push_back("noise_" + std::to_string(k));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) ex.rows.push_back({ex.basis_names[i], novel_names[j], alpha.at(i, j)});

  std::vector<float> row_max(base_names.size(), 0.0f);
  for (std::size_t i = 0; i < base_names.size(); ++i) {
    float best = n ? alpha.at(i, 0) : 0.0f;
    for (std::size_t j = 1; j < n; ++j) best = std::max(best, alpha.at(i, j));
    row_max[i] = best;
  }
  ex.top_base.resize(base_names.size());
  std::iota(ex.top_base.begin(), ex.top_base.end(), std::size_t{0});
  std::stable_sort(ex.top_base.begin(), ex.top_base.end(),
                   [&](std::size_t a, std::size_t b) { return row_max[a] > row_max[b]; });
  ex.top_base.resize(std::min(topk, base_names.size()));
  return ex;
}

std::string AlphaExport::to_csv() const {
  std::ostringstream os;
  os << "base,novel,weight\n";
  for (const auto& r : rows)
    os << detail::csv_field(r.base) << ',' << detail::csv_field(r.novel) << ',' << detail::shortest(r.weight) << '\n';
  return os.str();
}

std::string AlphaExport::top_csv() const {
  std::ostringstream os;
  os << "base,novel,weight\n";
  const std::size_t n = novel_names.size();
  for (std::size_t i : top_base)
    for (std::size_t j = 0; j < n; ++j) {
      const auto& r = rows[i * n + j];
      os << detail::csv_field(r.base) << ',' << detail::csv_field(r.novel) << ',' << detail::shortest(r.weight) << '\n';
    }
  return os.str();
}

}  // namespace mrefine
