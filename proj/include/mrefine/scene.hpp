#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mrefine/box.hpp"
#include "mrefine/mask_head.hpp"
#include "mrefine/tensor.hpp"

namespace mrefine {

struct GroundTruthInstance {
  int class_id = 0;
  Box box;
  DenseTensor mask;  // H x W, values in {0, 1}

  friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct InstancePrediction {
  int class_id = 0;
  double score = 0.0;
  Box box;
  DenseTensor mask;  // H x W probabilities
  std::optional<MaskHeadParams> head;

  friend bool operator==(const InstancePrediction&, const InstancePrediction&) = default;
};

struct Scene {
  std::uint64_t scene_id = 0;
  std::uint64_t seed = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  DenseTensor mask_features;  // H x W x 8
  DenseTensor color_map;      // H x W x 3, in [0, 1]
  std::vector<GroundTruthInstance> ground_truths;
  std::vector<InstancePrediction> predictions;

  friend bool operator==(const Scene&, const Scene&) = default;
};

}  // namespace mrefine
