#pragma once

// Pixel-parallel inner loops. Every kernel in this header has an OpenMP
// version (namespace mrefine::kernels) and a plain serial reference
// (namespace mrefine::kernels::serial) that the tests compare against.
//
// Reductions over pixels are split into fixed pixel blocks whose partial sums
// are combined in block order, so results are bit-identical for any thread
// count. The serial reference uses a single accumulator and may differ from
// the parallel kernel in the last bits of reduced quantities.

#include <array>
#include <cstddef>
#include <span>

namespace mrefine {

enum class Activation { kNone, kRelu, kSigmoid };

namespace kernels {

// Pixels per reduction block in the parallel kernels.
inline constexpr std::size_t kReductionBlock = 64;

// 8-neighbourhood offsets (dy, dx), in the slot order used by neighbour-weight maps.
inline constexpr std::array<std::array<int, 2>, 8> kNeighbourOffsets{{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

// Slot of the reverse offset: kNeighbourOffsets[kReverseSlot[k]] == -kNeighbourOffsets[k].
inline constexpr std::array<std::size_t, 8> kReverseSlot{7, 6, 5, 4, 3, 2, 1, 0};

// out[p, co] = act(sum_ci in[p, ci] * w[ci, co] + b[co]) for p in [0, pixels).
void conv1x1_forward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                     std::span<const float> weights, std::span<const float> bias,
                     std::size_t cout, Activation act, std::span<float> out);

// Gradients of the pre-activation map. `grad_in` may be empty when the input
// gradient is not needed. `grad_w` and `grad_b` are overwritten.
void conv1x1_backward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                      std::span<const float> weights, std::size_t cout,
                      std::span<const float> grad_pre, std::span<float> grad_in,
                      std::span<float> grad_w, std::span<float> grad_b);

// MRF energy over an H x W probability map:
//   mu1 * sum_x [ fg_coef[x] * (1 - m[x]) + bg_coef[x] * m[x] ]
// + mu2 * sum_x sum_k nbr_w[x, k] * (m[x] - m[x + offset_k])^2
// where nbr_w is H x W x 8 and symmetric (nbr_w[x,k] == nbr_w[x+off_k, reverse(k)]).
// Writes dE/dm into grad_mask and returns the energy. `unary_out` and
// `pairwise_out` receive the two unweighted sums when non-null.
double mrf_energy(std::span<const float> mask, std::size_t height, std::size_t width,
                  std::span<const float> fg_coef, std::span<const float> bg_coef,
                  std::span<const float> nbr_w, double mu1, double mu2,
                  std::span<float> grad_mask, double* unary_out = nullptr,
                  double* pairwise_out = nullptr);

namespace serial {

void conv1x1_forward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                     std::span<const float> weights, std::span<const float> bias,
                     std::size_t cout, Activation act, std::span<float> out);

void conv1x1_backward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                      std::span<const float> weights, std::size_t cout,
                      std::span<const float> grad_pre, std::span<float> grad_in,
                      std::span<float> grad_w, std::span<float> grad_b);

// Scatters over directed edges instead of gathering per pixel.
double mrf_energy(std::span<const float> mask, std::size_t height, std::size_t width,
                  std::span<const float> fg_coef, std::span<const float> bg_coef,
                  std::span<const float> nbr_w, double mu1, double mu2,
                  std::span<float> grad_mask, double* unary_out = nullptr,
                  double* pairwise_out = nullptr);

}  // namespace serial
}  // namespace kernels
}  // namespace mrefine
