#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mdeh/asset.hpp"
#include "mdeh/image.hpp"
#include "mdeh/scene.hpp"
#include "mdeh/synthesis.hpp"

using namespace mdeh;
namespace fs = std::filesystem;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

SyntheticSceneSpec small_spec() {
  SyntheticSceneSpec s;  // defaults: 144x48
  return s;
}

// Mean abs error of reconstructing the target from the source through a depth
// map, restricted to a mask.
double recon_error(const Tensor& it, const Tensor& is, const Tensor& depth,
                   const RigidTransform& t, const Intrinsics& k, const Tensor& region) {
  const WarpField w = warp_field(depth, t, k);
  const Reconstruction rec = reconstruct_view(is, w);
  double err = 0;
  std::int64_t n = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      if (region.at2(y, x) == 0.0f || rec.validity.at2(y, x) == 0.0f) continue;
      for (int c = 0; c < 3; ++c)
        err += std::fabs(rec.image.at3(c, y, x) - it.at3(c, y, x));
      n += 3;
    }
  REQUIRE(n > 0);
  return err / static_cast<double>(n);
}

}  // namespace

TEST_CASE("generate_scene is deterministic") {
  const SyntheticSceneSpec spec = small_spec();
  const SceneSample a = generate_scene(spec, 77);
  const SceneSample b = generate_scene(spec, 77);
  CHECK(bit_equal(a.it, b.it));
  CHECK(bit_equal(a.is, b.is));
  CHECK(bit_equal(a.depth_gt, b.depth_gt));
  const SceneSample c = generate_scene(spec, 78);
  CHECK_FALSE(bit_equal(a.it, c.it));
}

TEST_CASE("baseline 0 makes the two views bit-identical") {
  SyntheticSceneSpec spec = small_spec();
  spec.baseline_m = 0.0;
  const SceneSample s = generate_scene(spec, 5);
  CHECK(bit_equal(s.it, s.is));
}

TEST_CASE("ground-truth warp reconstructs the target within 2/255 on visible pixels") {
  const SyntheticSceneSpec spec = small_spec();
  double total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SceneSample s = generate_scene(spec, 100 + seed);
    const Tensor vis = visibility_mask(s);
    total += recon_error(s.it, s.is, s.depth_gt, s.t_to_s, s.k, vis);
  }
  CHECK(total / 5 <= 2.0 / 255.0);
}

TEST_CASE("scene depth spans the quad range over many scenes") {
  const SyntheticSceneSpec spec = small_spec();
  double dmin = 1e9, dmax = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const SceneSample s = generate_scene(spec, seed);
    for (std::int64_t i = 0; i < s.depth_gt.numel(); ++i) {
      dmin = std::min(dmin, static_cast<double>(s.depth_gt[i]));
      dmax = std::max(dmax, static_cast<double>(s.depth_gt[i]));
    }
  }
  CHECK(dmin <= 5.5);
  CHECK(dmax >= 40.0);
}

TEST_CASE("dataset round trip: manifest regeneration and parity split") {
  const std::string dir = (fs::temp_directory_path() / "mdeh_ds_test").string();
  fs::remove_all(dir);
  const SyntheticSceneSpec spec = small_spec();
  const DatasetManifest man = generate_dataset(spec, 6, 1234, dir);
  CHECK(man.scene_dirs.size() == 6);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));

  // Reload and regenerate a scene from its manifest seed: bytes must agree.
  const DatasetManifest loaded = load_manifest(dir);
  CHECK(loaded.scene_seeds == man.scene_seeds);
  const SceneSample regen = generate_scene(loaded.spec, loaded.scene_seeds[2]);
  const SceneSample disk = load_scene((fs::path(dir) / loaded.scene_dirs[2]).string());
  CHECK(bit_equal(regen.it, disk.it));
  CHECK(bit_equal(regen.is, disk.is));
  CHECK(bit_equal(regen.depth_gt, disk.depth_gt));
  CHECK(disk.t_to_s.translation().x == doctest::Approx(-spec.baseline_m));
  CHECK(disk.k.fx == spec.fx);
  fs::remove_all(dir);
}

TEST_CASE("placement sampler: degenerate range, determinism, uniform mean") {
  const ObjectAsset asset = make_procedural_asset(1);
  PlacementSampler s;
  s.dist_min = s.dist_max = 5.0;
  s.angle_max_deg = 0.0;
  s.seed = 9;
  const BoardPlacement p = sample_placement(s, asset, 0);
  CHECK(p.z_c == doctest::Approx(5.0));
  CHECK(p.alpha_rad == doctest::Approx(0.0));

  PlacementSampler u{5.0, 10.0, 30.0, 42};
  const BoardPlacement a = sample_placement(u, asset, 17);
  const BoardPlacement b = sample_placement(u, asset, 17);
  CHECK(a.z_c == b.z_c);
  CHECK(a.alpha_rad == b.alpha_rad);

  double mean = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) mean += sample_placement(u, asset, i).z_c;
  mean /= 10000;
  CHECK(std::fabs(mean - 7.5) <= 0.05 * 7.5);

  PlacementSampler bad{0.0, 5.0, 30.0, 0};
  CHECK_THROWS(bad.validate());
  PlacementSampler bad2{5.0, 10.0, 95.0, 0};
  CHECK_THROWS(bad2.validate());
}

TEST_CASE("synthesize_pair: all-zero mask passes the backgrounds through bit-exactly") {
  ObjectAsset asset = make_procedural_asset(2);
  asset.mask.fill(0.0f);
  const SceneSample scene = generate_scene(small_spec(), 3);
  BoardPlacement p;
  p.z_c = 7;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  const SynthesizedViews v = synthesize_pair(asset, scene, p);
  CHECK(bit_equal(v.it, scene.it));
  CHECK(bit_equal(v.is, scene.is));
  CHECK(v.object_pixels == 0);
}

TEST_CASE("synthesize_pair: sub-pixel board projection raises empty projection") {
  const ObjectAsset asset = make_procedural_asset(2);
  SceneSample scene = generate_scene(small_spec(), 3);
  // Fractional principal point: the far board's sub-pixel quad misses every
  // pixel center.
  scene.k.cx = 72.5;
  scene.k.cy = 18.5;
  BoardPlacement p;
  p.z_c = 4000.0;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  CHECK_THROWS_WITH_AS(synthesize_pair(asset, scene, p), "synthesize_pair: empty projection",
                       std::runtime_error);
}

TEST_CASE("synthesize_pair: fronto-parallel board covers the exact pixel rectangle") {
  // fx*W/(2*z_c) = 10 px half-width around (cx,cy) = (50,30).
  ObjectAsset asset;
  asset.image = Tensor::full({3, 100, 100}, 0.9f);
  asset.mask = Tensor::full({100, 100}, 1.0f);
  asset.phys_w = 2.0;
  asset.phys_h = 2.0;

  SceneSample scene;
  scene.k.fx = 100;
  scene.k.fy = 100;
  scene.k.cx = 50;
  scene.k.cy = 30;
  scene.k.width = 100;
  scene.k.height = 60;
  scene.t_to_s = RigidTransform(Mat3::identity(), {-0.54, 0, 0});
  scene.it = Tensor({3, 60, 100});
  scene.is = Tensor({3, 60, 100});

  BoardPlacement p;
  p.z_c = 10.0;
  p.alpha_rad = 0.0;
  p.phys_w = 2.0;
  p.phys_h = 2.0;
  p.pix_w = 100;
  p.pix_h = 100;

  SynthesisOptions opts;
  opts.lighting_match = false;
  const SynthesizedViews v = synthesize_pair(asset, scene, p, nullptr, opts);
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 100; ++x) {
      const bool inside = x >= 40 && x <= 60 && y >= 20 && y <= 40;
      CHECK(v.object_mask.at2(y, x) == (inside ? 1.0f : 0.0f));
      if (inside) {
        CHECK(v.it.at3(0, y, x) == doctest::Approx(0.9f));
      } else {
        CHECK(v.it.at3(0, y, x) == 0.0f);  // untouched background
      }
    }
}

TEST_CASE("synthesize_pair: zero perturbation reproduces I_t bit-exactly") {
  const ObjectAsset asset = make_procedural_asset(4);
  const SceneSample scene = generate_scene(small_spec(), 11);
  BoardPlacement p;
  p.z_c = 6;
  p.alpha_rad = 0.3;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  const SynthesizedViews v = synthesize_pair(asset, scene, p, &asset.image);
  CHECK(bit_equal(v.it_adv, v.it));

  // Determinism of the whole composite.
  const SynthesizedViews v2 = synthesize_pair(asset, scene, p, &asset.image);
  CHECK(bit_equal(v.it, v2.it));
  CHECK(bit_equal(v.is, v2.is));
}

TEST_CASE("synthesize_pair: pixels outside the object mask match the background exactly") {
  const ObjectAsset asset = make_procedural_asset(5);
  const SceneSample scene = generate_scene(small_spec(), 13);
  const ObjectAsset a2 = asset;
  BoardPlacement p;
  p.z_c = 5.5;
  p.alpha_rad = -0.2;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  const SynthesizedViews v = synthesize_pair(asset, scene, p);
  REQUIRE(v.object_pixels > 0);
  for (int y = 0; y < scene.k.height; ++y)
    for (int x = 0; x < scene.k.width; ++x) {
      if (v.object_mask.at2(y, x) != 0.0f) continue;
      for (int c = 0; c < 3; ++c) CHECK(v.it.at3(c, y, x) == scene.it.at3(c, y, x));
    }
}

TEST_CASE("projected object area shrinks with distance") {
  const ObjectAsset asset = make_procedural_asset(6);
  const SceneSample scene = generate_scene(small_spec(), 17);
  int prev = 1 << 30;
  for (double z : {5.0, 7.0, 10.0, 15.0, 22.0, 30.0}) {
    BoardPlacement p;
    p.z_c = z;
    p.alpha_rad = 0.2;
    p.phys_w = asset.phys_w;
    p.phys_h = asset.phys_h;
    p.pix_w = asset.pix_w();
    p.pix_h = asset.pix_h();
    const SynthesizedViews v = synthesize_pair(asset, scene, p);
    CHECK(v.object_pixels <= prev);
    prev = v.object_pixels;
  }
}

TEST_CASE("lighting gain: clamping and gain-1 cases") {
  Tensor colors({3, 4, 4});
  Tensor mask({4, 4});
  Tensor bg = Tensor::full({3, 4, 4}, 0.4f);
  // Object occupies the left half with luminance 0.2, ring is 0.4.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) {
      mask.at2(y, x) = 1.0f;
      for (int c = 0; c < 3; ++c) colors.at3(c, y, x) = 0.2f;
    }
  CHECK(lighting_gain(colors, mask, bg) == doctest::Approx(2.0f));  // clamped boundary

  // Equal means -> gain 1.
  Tensor bg2 = Tensor::full({3, 4, 4}, 0.2f);
  CHECK(lighting_gain(colors, mask, bg2) == doctest::Approx(1.0f));

  CHECK_THROWS(lighting_gain(colors, Tensor({4, 4}), bg));  // empty object region
}

TEST_CASE("lighting gain: unclamped gain equalizes the means within 1e-3") {
  const ObjectAsset asset = make_procedural_asset(7);
  const SceneSample scene = generate_scene(small_spec(), 23);
  BoardPlacement p;
  p.z_c = 6;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  const SynthesizedViews v = synthesize_pair(asset, scene, p);
  if (v.lighting_gain > 0.5f && v.lighting_gain < 2.0f) {
    // Re-measure: object mean luminance must now equal the ring mean.
    Tensor colors({3, scene.k.height, scene.k.width});
    for (int y = 0; y < scene.k.height; ++y)
      for (int x = 0; x < scene.k.width; ++x)
        if (v.object_mask.at2(y, x) != 0.0f)
          for (int c = 0; c < 3; ++c) colors.at3(c, y, x) = v.it.at3(c, y, x);
    const float regain = lighting_gain(colors, v.object_mask, scene.it);
    CHECK(regain == doctest::Approx(1.0f).epsilon(2e-3));
  }
}

TEST_CASE("object-region consistency: board depth reproduces the I_t object from I_s") {
  const ObjectAsset asset = make_procedural_asset(8);
  const SyntheticSceneSpec spec = small_spec();
  double total = 0;
  int scenes_used = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SceneSample scene = generate_scene(spec, 500 + seed);
    const BoardPlacement p =
        sample_placement(PlacementSampler{5, 12, 25, seed}, asset, seed);
    const BoardSamplingGrid g = board_sampling_grid(asset, scene, p);
    const SynthesizedViews v = synthesize_pair(asset, scene, p);
    // Depth map: board plane depth on the mask, scene GT elsewhere.
    Tensor depth = scene.depth_gt;
    for (int y = 0; y < scene.k.height; ++y)
      for (int x = 0; x < scene.k.width; ++x)
        if (g.mask.at2(y, x) != 0.0f) depth.at2(y, x) = g.board_depth.at2(y, x);
    total += recon_error(v.it, v.is, depth, scene.t_to_s, scene.k, g.mask);
    ++scenes_used;
  }
  REQUIRE(scenes_used == 5);
  CHECK(total / scenes_used <= 3.0 / 255.0);
}

TEST_CASE("asset round trip through PNG + json") {
  const std::string dir = (fs::temp_directory_path() / "mdeh_asset_test").string();
  fs::remove_all(dir);
  const ObjectAsset a = make_procedural_asset(9);
  save_asset(dir, a);
  const ObjectAsset b = load_asset(dir);
  CHECK(bit_equal(a.image, b.image));
  CHECK(bit_equal(a.mask, b.mask));
  CHECK(b.phys_w == doctest::Approx(a.phys_w));
  fs::remove_all(dir);
}
