#pragma once

#include <cstdint>

#include "mdeh/asset.hpp"
#include "mdeh/geometry.hpp"
#include "mdeh/scene.hpp"

namespace mdeh {

/// Uniform sampler over distance [dist_min, dist_max] meters and yaw
/// [-angle_max, angle_max] degrees. Draws are keyed by index: replaying an
/// index reproduces the placement regardless of evaluation order.
struct PlacementSampler {
  double dist_min = 5.0, dist_max = 10.0;
  double angle_max_deg = 30.0;
  std::uint64_t seed = 0;
  void validate() const;
};

BoardPlacement sample_placement(const PlacementSampler& sampler, const ObjectAsset& asset,
                                std::uint64_t draw_index);

struct SynthesisOptions {
  bool lighting_match = true;
};

/// Both views with the object board composited in, plus the adversarial
/// target view when a perturbed object image is supplied.
struct SynthesizedViews {
  Tensor it;      // (3,H,W)
  Tensor is;      // (3,H,W)
  Tensor it_adv;  // (3,H,W); equals it when no perturbation was given
  Tensor object_mask;  // (H,W), 1 where the board wrote target pixels
  BoardPlacement placement;
  float lighting_gain = 1.0f;
  int object_pixels = 0;
};

/// Composites the board into both views by inverse-homography bilinear
/// sampling; board pixels override the background. Throws std::runtime_error
/// ("empty projection") when no target pixel lands on the board.
SynthesizedViews synthesize_pair(const ObjectAsset& asset, const SceneSample& scene,
                                 const BoardPlacement& placement,
                                 const Tensor* perturbed_object = nullptr,
                                 const SynthesisOptions& opts = {});

/// Luminance gain that matches the object region to a 5-px dilated background
/// ring, clamped to [0.5, 2]. Empty ring or zero object mean gives 1.
float lighting_gain(const Tensor& object_colors_rgb,  // (3,H,W) board colors (defined on mask)
                    const Tensor& object_mask,        // (H,W) 0/1
                    const Tensor& background);        // (3,H,W)

/// Everything the differentiable attack path needs to rebuild the adversarial
/// target view from a perturbed object tensor: per-pixel board texel
/// coordinates, the object mask, the frozen lighting gain, the benign
/// composite, and the board's analytic per-pixel depth.
struct BoardSamplingGrid {
  Tensor grid;         // (1,2,H,W) texel coordinates into the object image
  Tensor mask;         // (H,W)
  Tensor mask3;        // (3,H,W)
  Tensor it_benign;    // (3,H,W)
  Tensor board_depth;  // (H,W) analytic plane depth on mask, 0 elsewhere
  float gain = 1.0f;
  int object_pixels = 0;
};
BoardSamplingGrid board_sampling_grid(const ObjectAsset& asset, const SceneSample& scene,
                                      const BoardPlacement& placement,
                                      const SynthesisOptions& opts = {});

}  // namespace mdeh
