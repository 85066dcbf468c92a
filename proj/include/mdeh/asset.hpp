#pragma once

#include <cstdint>
#include <string>

#include "mdeh/tensor.hpp"

namespace mdeh {

/// Planar object texture ("image board"): RGB image with a binary alpha mask
/// and the physical dimensions it stands in for. Aspect ratios of the pixel
/// and physical extents must agree.
struct ObjectAsset {
  Tensor image;  // (3,h,w) in [0,1]
  Tensor mask;   // (h,w) in {0,1}
  double phys_w = 0, phys_h = 0;  // meters
  int pix_w() const { return image.dim(2); }
  int pix_h() const { return image.dim(1); }
  void validate() const;
};

/// Deterministic vehicle-back style test asset (smooth shading, rounded
/// silhouette). 96x72 px standing in for a 2.0 x 1.5 m board.
ObjectAsset make_procedural_asset(std::uint64_t seed);

/// Directory layout: image.png + mask.png + asset.json (physical size).
ObjectAsset load_asset(const std::string& dir);
void save_asset(const std::string& dir, const ObjectAsset& asset);

}  // namespace mdeh
