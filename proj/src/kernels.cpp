#include "mrefine/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mrefine::kernels {
namespace {

// Below this many pixels the parallel region costs more than it saves.
constexpr std::size_t kParallelMinPixels = 4096;

inline float activate(double z, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return z > 0.0 ? static_cast<float>(z) : 0.0f;
    case Activation::kSigmoid:
      return static_cast<float>(1.0 / (1.0 + std::exp(-z)));
    case Activation::kNone:
      break;
  }
  return static_cast<float>(z);
}

constexpr std::size_t kStackChannels = 32;

inline void forward_pixel(const float* in, std::size_t cin, const float* w, const float* b,
                          std::size_t cout, Activation act, float* out) {
  if (cout > kStackChannels) {
    for (std::size_t co = 0; co < cout; ++co) {
      double acc = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci) acc += static_cast<double>(in[ci]) * w[ci * cout + co];
      out[co] = activate(acc, act);
    }
    return;
  }
  // Same per-output summation order as above, but walks the weights row by row.
  double acc[kStackChannels];
  for (std::size_t co = 0; co < cout; ++co) acc[co] = b[co];
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double xi = in[ci];
    const float* row = w + ci * cout;
    for (std::size_t co = 0; co < cout; ++co) acc[co] += xi * row[co];
  }
  for (std::size_t co = 0; co < cout; ++co) out[co] = activate(acc[co], act);
}

inline void input_grad_pixel(const float* w, std::size_t cin, std::size_t cout, const float* g,
                             float* gin) {
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double acc = 0.0;
    for (std::size_t co = 0; co < cout; ++co) acc += static_cast<double>(w[ci * cout + co]) * g[co];
    gin[ci] = static_cast<float>(acc);
  }
}

inline bool in_bounds(std::ptrdiff_t y, std::ptrdiff_t x, std::size_t h, std::size_t w) {
  return y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(h) && x < static_cast<std::ptrdiff_t>(w);
}

}  // namespace

void conv1x1_forward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                     std::span<const float> weights, std::span<const float> bias,
                     std::size_t cout, Activation act, std::span<float> out) {
  const auto n = static_cast<std::ptrdiff_t>(pixels);
#pragma omp parallel for schedule(static) if (pixels >= kParallelMinPixels)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    forward_pixel(in.data() + p * cin, cin, weights.data(), bias.data(), cout, act,
                  out.data() + p * cout);
  }
}

void conv1x1_backward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                      std::span<const float> weights, std::size_t cout,
                      std::span<const float> grad_pre, std::span<float> grad_in,
                      std::span<float> grad_w, std::span<float> grad_b) {
  const std::size_t nblocks = (pixels + kReductionBlock - 1) / kReductionBlock;
  const std::size_t stride = cin * cout + cout;
  std::vector<double> partial(nblocks * stride, 0.0);
  const bool want_input = !grad_in.empty();
  const auto nb = static_cast<std::ptrdiff_t>(nblocks);

#pragma omp parallel for schedule(static) if (pixels >= kParallelMinPixels)
  for (std::ptrdiff_t blk = 0; blk < nb; ++blk) {
    double* acc = partial.data() + blk * stride;
    const std::size_t begin = static_cast<std::size_t>(blk) * kReductionBlock;
    const std::size_t end = std::min(pixels, begin + kReductionBlock);
    for (std::size_t p = begin; p < end; ++p) {
      const float* x = in.data() + p * cin;
      const float* g = grad_pre.data() + p * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xi = x[ci];
        for (std::size_t co = 0; co < cout; ++co) acc[ci * cout + co] += xi * g[co];
      }
      for (std::size_t co = 0; co < cout; ++co) acc[cin * cout + co] += g[co];
      if (want_input) input_grad_pixel(weights.data(), cin, cout, g, grad_in.data() + p * cin);
    }
  }

  for (std::size_t k = 0; k < cin * cout; ++k) {
    double s = 0.0;
    for (std::size_t blk = 0; blk < nblocks; ++blk) s += partial[blk * stride + k];
    grad_w[k] = static_cast<float>(s);
  }
  for (std::size_t co = 0; co < cout; ++co) {
    double s = 0.0;
    for (std::size_t blk = 0; blk < nblocks; ++blk) s += partial[blk * stride + cin * cout + co];
    grad_b[co] = static_cast<float>(s);
  }
}

double mrf_energy(std::span<const float> mask, std::size_t height, std::size_t width,
                  std::span<const float> fg_coef, std::span<const float> bg_coef,
                  std::span<const float> nbr_w, double mu1, double mu2,
                  std::span<float> grad_mask, double* unary_out, double* pairwise_out) {
  const std::size_t pixels = height * width;
  const std::size_t nblocks = (pixels + kReductionBlock - 1) / kReductionBlock;
  std::vector<double> unary_partial(nblocks, 0.0);
  std::vector<double> pair_partial(nblocks, 0.0);
  const auto nb = static_cast<std::ptrdiff_t>(nblocks);

#pragma omp parallel for schedule(static) if (pixels >= kParallelMinPixels)
  for (std::ptrdiff_t blk = 0; blk < nb; ++blk) {
    const std::size_t begin = static_cast<std::size_t>(blk) * kReductionBlock;
    const std::size_t end = std::min(pixels, begin + kReductionBlock);
    double u_acc = 0.0;
    double p_acc = 0.0;
    for (std::size_t p = begin; p < end; ++p) {
      const double m = mask[p];
      u_acc += fg_coef[p] * (1.0 - m) + bg_coef[p] * m;
      const auto y = static_cast<std::ptrdiff_t>(p / width);
      const auto x = static_cast<std::ptrdiff_t>(p % width);
      double pull = 0.0;
      for (std::size_t k = 0; k < kNeighbourOffsets.size(); ++k) {
        const double wgt = nbr_w[p * 8 + k];
        if (wgt == 0.0) continue;
        const auto ny = y + kNeighbourOffsets[k][0];
        const auto nx = x + kNeighbourOffsets[k][1];
        if (!in_bounds(ny, nx, height, width)) continue;
        const double d = m - mask[static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx)];
        p_acc += wgt * d * d;
        pull += wgt * d;
      }
      grad_mask[p] = static_cast<float>(mu1 * (bg_coef[p] - fg_coef[p]) + 4.0 * mu2 * pull);
    }
    unary_partial[blk] = u_acc;
    pair_partial[blk] = p_acc;
  }

  double unary = 0.0;
  double pairwise = 0.0;
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    unary += unary_partial[blk];
    pairwise += pair_partial[blk];
  }
  if (unary_out) *unary_out = unary;
  if (pairwise_out) *pairwise_out = pairwise;
  return mu1 * unary + mu2 * pairwise;
}

namespace serial {

void conv1x1_forward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                     std::span<const float> weights, std::span<const float> bias,
                     std::size_t cout, Activation act, std::span<float> out) {
  for (std::size_t p = 0; p < pixels; ++p) {
    forward_pixel(in.data() + p * cin, cin, weights.data(), bias.data(), cout, act,
                  out.data() + p * cout);
  }
}

void conv1x1_backward(std::span<const float> in, std::size_t pixels, std::size_t cin,
                      std::span<const float> weights, std::size_t cout,
                      std::span<const float> grad_pre, std::span<float> grad_in,
                      std::span<float> grad_w, std::span<float> grad_b) {
  std::vector<double> gw(cin * cout, 0.0);
  std::vector<double> gb(cout, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    const float* x = in.data() + p * cin;
    const float* g = grad_pre.data() + p * cout;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co) gw[ci * cout + co] += static_cast<double>(x[ci]) * g[co];
    for (std::size_t co = 0; co < cout; ++co) gb[co] += g[co];
    if (!grad_in.empty()) input_grad_pixel(weights.data(), cin, cout, g, grad_in.data() + p * cin);
  }
  for (std::size_t k = 0; k < gw.size(); ++k) grad_w[k] = static_cast<float>(gw[k]);
  for (std::size_t k = 0; k < gb.size(); ++k) grad_b[k] = static_cast<float>(gb[k]);
}

double mrf_energy(std::span<const float> mask, std::size_t height, std::size_t width,
                  std::span<const float> fg_coef, std::span<const float> bg_coef,
                  std::span<const float> nbr_w, double mu1, double mu2,
                  std::span<float> grad_mask, double* unary_out, double* pairwise_out) {
  const std::size_t pixels = height * width;
  std::vector<double> grad(pixels, 0.0);
  double unary = 0.0;
  double pairwise = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    unary += fg_coef[p] * (1.0 - mask[p]) + bg_coef[p] * mask[p];
    grad[p] += mu1 * (static_cast<double>(bg_coef[p]) - fg_coef[p]);
  }
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t p = y * width + x;
      for (std::size_t k = 0; k < kNeighbourOffsets.size(); ++k) {
        const auto ny = static_cast<std::ptrdiff_t>(y) + kNeighbourOffsets[k][0];
        const auto nx = static_cast<std::ptrdiff_t>(x) + kNeighbourOffsets[k][1];
        if (!in_bounds(ny, nx, height, width)) continue;
        const std::size_t q = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
        const double wgt = nbr_w[p * 8 + k];
        const double d = static_cast<double>(mask[p]) - mask[q];
        pairwise += wgt * d * d;
        grad[p] += 2.0 * mu2 * wgt * d;
        grad[q] -= 2.0 * mu2 * wgt * d;
      }
    }
  }
  for (std::size_t p = 0; p < pixels; ++p) grad_mask[p] = static_cast<float>(grad[p]);
  if (unary_out) *unary_out = unary;
  if (pairwise_out) *pairwise_out = pairwise;
  return mu1 * unary + mu2 * pairwise;
}

}  // namespace serial
}  // namespace mrefine::kernels
