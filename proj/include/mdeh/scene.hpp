#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdeh/geometry.hpp"
#include "mdeh/tensor.hpp"

namespace mdeh {

/// A background stereo pair with its relative pose and intrinsics. Synthetic
/// scenes also carry ground-truth depth for both views.
struct SceneSample {
  Tensor it;  // target view (3,H,W)
  Tensor is;  // source view (3,H,W)
  RigidTransform t_to_s;
  Intrinsics k;
  Tensor depth_gt;         // (H,W), empty when unknown
  Tensor depth_gt_source;  // (H,W), empty when unknown
  bool has_depth() const { return !depth_gt.empty(); }
};

/// Procedural street-like stand-in: textured ground plane, a back wall, and
/// vertical quads at random depths, rendered analytically into both views of
/// a pure-translation stereo rig.
struct SyntheticSceneSpec {
  int width = 144, height = 48;
  double fx = 80, fy = 80, cx = 72, cy = 18;
  double baseline_m = 0.54;  // source camera offset along +x
  double ground_height_m = 1.5;
  double wall_z_m = 60.0;
  int quad_count = 6;
  double quad_depth_min = 5.0, quad_depth_max = 40.0;
  double fog_distance_m = 50.0;

  Intrinsics intrinsics() const;
  /// X_s = X_t + (-baseline, 0, 0).
  RigidTransform stereo_transform() const;
};

SceneSample generate_scene(const SyntheticSceneSpec& spec, std::uint64_t seed);

/// Occlusion-aware visibility of each target pixel in the source view
/// (forward depth test against the source depth map). 1 = visible.
Tensor visibility_mask(const SceneSample& scene);

struct DatasetManifest {
  SyntheticSceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> scene_seeds;
  std::vector<std::string> scene_dirs;  // relative to the dataset root
};

/// Writes count scenes (it.png, is.png, depth_gt.dht, pose.json,
/// intrinsics.json per directory) plus manifest.json.
DatasetManifest generate_dataset(const SyntheticSceneSpec& spec, int count, std::uint64_t seed,
                                 const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dataset_dir);
SceneSample load_scene(const std::string& scene_dir);
/// Scene directories listed by the manifest, as absolute paths.
std::vector<std::string> dataset_scene_dirs(const std::string& dataset_dir);

}  // namespace mdeh
