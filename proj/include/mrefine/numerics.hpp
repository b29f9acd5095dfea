#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mrefine/kernels.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

inline float sigmoid(float z) noexcept {
  return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(z))));
}

// 1x1 convolution over a channels-last map (any rank >= 1; the last axis is
// channels). weights is Cin x Cout, bias is Cout.
DenseTensor conv1x1_forward(const DenseTensor& input, const DenseTensor& weights,
                            const DenseTensor& bias, Activation activation);

struct Conv1x1Grads {
  DenseTensor input;
  DenseTensor weights;
  DenseTensor bias;
};

// `grad_pre` is dL/d(pre-activation), shaped like the forward output.
Conv1x1Grads conv1x1_backward(const DenseTensor& input, const DenseTensor& weights,
                              const DenseTensor& grad_pre);

double squared_distance(std::span<const float> f, std::span<const float> g);

// exp(-||f - g||^2 / kappa).
double similarity(std::span<const float> f, std::span<const float> g, double kappa);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamWState {
  DenseTensor first_moment;
  DenseTensor second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;

  static AdamWState for_shape(const std::vector<std::size_t>& dims, const AdamWConfig& config = {});
};

// Decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
// Throws NumericError (leaving params and state untouched) on a non-finite gradient.
void adamw_step(DenseTensor& params, const DenseTensor& grads, AdamWState& state, double lr);

// Same update over raw spans; the state moments must have params.size() elements.
void adamw_step(std::span<float> params, std::span<const float> grads, AdamWState& state,
                double lr);

}  // namespace mrefine
