#include "mrefine/mask_head.hpp"

#include <algorithm>
#include <cmath>

#include "mrefine/errors.hpp"
#include "mrefine/kernels.hpp"

namespace mrefine {
namespace {

void check_inputs(const DenseTensor& mask_features, const DenseTensor& rel_coords) {
  if (mask_features.rank() != 3 || mask_features.dim(2) != kMaskFeatureChannels)
    throw InvalidArgument("mask head: mask features must be H x W x 8, got " +
                          shape_string(mask_features.dims()));
  if (rel_coords.rank() != 3 || rel_coords.dim(0) != mask_features.dim(0) ||
      rel_coords.dim(1) != mask_features.dim(1) || rel_coords.dim(2) != kCoordChannels)
    throw InvalidArgument("mask head: relative coordinates " + shape_string(rel_coords.dims()) +
                          " do not match mask features " + shape_string(mask_features.dims()));
}

}  // namespace

MaskHeadParams MaskHeadParams::from_flat(std::span<const float> flat) {
  if (flat.size() != kCount)
    throw InvalidArgument("mask head parameters need " + std::to_string(kCount) +
                          " values, got " + std::to_string(flat.size()));
  MaskHeadParams p;
  std::copy(flat.begin(), flat.end(), p.values_.begin());
  return p;
}

MaskHeadParams MaskHeadParams::from_tensor(const DenseTensor& t) {
  if (t.rank() != 1) throw InvalidArgument("mask head parameters must be a flat tensor");
  return from_flat(t.values());
}

DenseTensor MaskHeadParams::to_tensor() const {
  return DenseTensor({kCount}, std::vector<float>(values_.begin(), values_.end()));
}

bool MaskHeadParams::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

DenseTensor make_rel_coords(std::size_t height, std::size_t width, const Box& box) {
  DenseTensor rel({height, width, kCoordChannels});
  const double scale = static_cast<double>(std::max(height, width));
  const double cx = box.center_x();
  const double cy = box.center_y();
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      rel.at(y, x, 0) = static_cast<float>((static_cast<double>(x) + 0.5 - cx) / scale);
      rel.at(y, x, 1) = static_cast<float>((static_cast<double>(y) + 0.5 - cy) / scale);
    }
  }
  return rel;
}

HeadActivations head_forward_activations(const MaskHeadParams& params,
                                         const DenseTensor& mask_features,
                                         const DenseTensor& rel_coords) {
  check_inputs(mask_features, rel_coords);
  const std::size_t h = mask_features.dim(0);
  const std::size_t w = mask_features.dim(1);
  const std::size_t n = h * w;

  HeadActivations a;
  a.input = DenseTensor({h, w, kHeadInputChannels});
  for (std::size_t p = 0; p < n; ++p) {
    float* dst = a.input.values().data() + p * kHeadInputChannels;
    std::copy_n(mask_features.values().data() + p * kMaskFeatureChannels, kMaskFeatureChannels, dst);
    std::copy_n(rel_coords.values().data() + p * kCoordChannels, kCoordChannels,
                dst + kMaskFeatureChannels);
  }
  a.hidden1 = DenseTensor({h, w, kHeadHiddenChannels});
  a.hidden2 = DenseTensor({h, w, kHeadHiddenChannels});
  a.mask = DenseTensor({h, w});
  kernels::conv1x1_forward(a.input.values(), n, kHeadInputChannels, params.layer1_w(),
                           params.layer1_b(), kHeadHiddenChannels, Activation::kRelu,
                           a.hidden1.values());
  kernels::conv1x1_forward(a.hidden1.values(), n, kHeadHiddenChannels, params.layer2_w(),
                           params.layer2_b(), kHeadHiddenChannels, Activation::kRelu,
                           a.hidden2.values());
  kernels::conv1x1_forward(a.hidden2.values(), n, kHeadHiddenChannels, params.layer3_w(),
                           params.layer3_b(), 1, Activation::kSigmoid, a.mask.values());
  return a;
}

HeadForwardOutput head_forward(const MaskHeadParams& params, const DenseTensor& mask_features,
                               const DenseTensor& rel_coords) {
  HeadActivations a = head_forward_activations(params, mask_features, rel_coords);
  return {std::move(a.mask), std::move(a.hidden1)};
}

MaskHeadParams head_backward(const MaskHeadParams& params, const HeadActivations& acts,
                             const DenseTensor& upstream) {
  if (upstream.dims() != acts.mask.dims())
    throw InvalidArgument("head_backward: upstream gradient " + shape_string(upstream.dims()) +
                          " does not match mask " + shape_string(acts.mask.dims()));
  const std::size_t n = acts.mask.size();
  constexpr std::size_t kH = kHeadHiddenChannels;

  MaskHeadParams grad;
  std::vector<float> dz3(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double m = acts.mask[p];
    dz3[p] = static_cast<float>(upstream[p] * m * (1.0 - m));
  }

  std::vector<float> dh2(n * kH);
  kernels::conv1x1_backward(acts.hidden2.values(), n, kH, params.layer3_w(), 1, dz3, dh2,
                            grad.layer3_w(), grad.layer3_b());
  for (std::size_t i = 0; i < dh2.size(); ++i)
    if (!(acts.hidden2[i] > 0.0f)) dh2[i] = 0.0f;

  std::vector<float> dh1(n * kH);
  kernels::conv1x1_backward(acts.hidden1.values(), n, kH, params.layer2_w(), kH, dh2, dh1,
                            grad.layer2_w(), grad.layer2_b());
  for (std::size_t i = 0; i < dh1.size(); ++i)
    if (!(acts.hidden1[i] > 0.0f)) dh1[i] = 0.0f;

  kernels::conv1x1_backward(acts.input.values(), n, kHeadInputChannels, params.layer1_w(), kH,
                            dh1, {}, grad.layer1_w(), grad.layer1_b());
  return grad;
}

MaskHeadParams head_backward(const MaskHeadParams& params, const DenseTensor& mask_features,
                             const DenseTensor& rel_coords, const DenseTensor& upstream) {
  return head_backward(params, head_forward_activations(params, mask_features, rel_coords),
                       upstream);
}

}  // namespace mrefine
