#pragma once

#include <array>
#include <cstddef>
#include <span>

#include "mrefine/box.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

inline constexpr std::size_t kMaskFeatureChannels = 8;
inline constexpr std::size_t kCoordChannels = 2;
inline constexpr std::size_t kHeadInputChannels = kMaskFeatureChannels + kCoordChannels;
inline constexpr std::size_t kHeadHiddenChannels = 8;

// Dynamic mask head: three 1x1 convolutions 10 -> 8 -> 8 -> 1 (ReLU, ReLU,
// sigmoid). Parameters are stored flat in the order
//   layer1_w (10x8), layer1_b (8), layer2_w (8x8), layer2_b (8), layer3_w (8x1), layer3_b (1)
// with each weight block row-major as [in][out].
class MaskHeadParams {
 public:
  static constexpr std::size_t kLayer1W = 0;
  static constexpr std::size_t kLayer1B = kLayer1W + kHeadInputChannels * kHeadHiddenChannels;
  static constexpr std::size_t kLayer2W = kLayer1B + kHeadHiddenChannels;
  static constexpr std::size_t kLayer2B = kLayer2W + kHeadHiddenChannels * kHeadHiddenChannels;
  static constexpr std::size_t kLayer3W = kLayer2B + kHeadHiddenChannels;
  static constexpr std::size_t kLayer3B = kLayer3W + kHeadHiddenChannels;
  static constexpr std::size_t kCount = kLayer3B + 1;
  static_assert(kCount == 169);

  MaskHeadParams() { values_.fill(0.0f); }

  // Throws InvalidArgument unless `flat` holds exactly 169 values.
  static MaskHeadParams from_flat(std::span<const float> flat);
  static MaskHeadParams from_tensor(const DenseTensor& t);
  DenseTensor to_tensor() const;

  static constexpr std::size_t size() noexcept { return kCount; }
  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }
  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  std::span<const float> layer1_w() const { return block(kLayer1W, kLayer1B); }
  std::span<const float> layer1_b() const { return block(kLayer1B, kLayer2W); }
  std::span<const float> layer2_w() const { return block(kLayer2W, kLayer2B); }
  std::span<const float> layer2_b() const { return block(kLayer2B, kLayer3W); }
  std::span<const float> layer3_w() const { return block(kLayer3W, kLayer3B); }
  std::span<const float> layer3_b() const { return block(kLayer3B, kCount); }
  std::span<float> layer1_w() { return block(kLayer1W, kLayer1B); }
  std::span<float> layer1_b() { return block(kLayer1B, kLayer2W); }
  std::span<float> layer2_w() { return block(kLayer2W, kLayer2B); }
  std::span<float> layer2_b() { return block(kLayer2B, kLayer3W); }
  std::span<float> layer3_w() { return block(kLayer3W, kLayer3B); }
  std::span<float> layer3_b() { return block(kLayer3B, kCount); }

  bool all_finite() const noexcept;

  friend bool operator==(const MaskHeadParams&, const MaskHeadParams&) = default;

 private:
  std::span<float> block(std::size_t b, std::size_t e) { return {values_.data() + b, e - b}; }
  std::span<const float> block(std::size_t b, std::size_t e) const {
    return {values_.data() + b, e - b};
  }

  std::array<float, kCount> values_;
};

struct HeadForwardOutput {
  DenseTensor mask;                  // H x W, sigmoid probabilities
  DenseTensor first_layer_features;  // H x W x 8, post-ReLU
};

// Intermediate activations kept for the backward pass.
struct HeadActivations {
  DenseTensor input;   // H x W x 10, [mask_features | rel_coords]
  DenseTensor hidden1; // H x W x 8 (post-ReLU)
  DenseTensor hidden2; // H x W x 8 (post-ReLU)
  DenseTensor mask;    // H x W
};

// rel[y, x] = ((x - cx) / max(H, W), (y - cy) / max(H, W)), with (cx, cy) the
// box centre. Pixel centres sit at integer coordinates + 0.5.
DenseTensor make_rel_coords(std::size_t height, std::size_t width, const Box& box);

HeadActivations head_forward_activations(const MaskHeadParams& params,
                                         const DenseTensor& mask_features,
                                         const DenseTensor& rel_coords);

HeadForwardOutput head_forward(const MaskHeadParams& params, const DenseTensor& mask_features,
                               const DenseTensor& rel_coords);

// Parameter gradient given dL/dmask. ReLU'(0) is taken as 0.
MaskHeadParams head_backward(const MaskHeadParams& params, const HeadActivations& acts,
                             const DenseTensor& upstream);

MaskHeadParams head_backward(const MaskHeadParams& params, const DenseTensor& mask_features,
                             const DenseTensor& rel_coords, const DenseTensor& upstream);

}  // namespace mrefine
