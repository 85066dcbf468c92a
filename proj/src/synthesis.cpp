#include "mdeh/synthesis.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mdeh/image.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

void PlacementSampler::validate() const {
  if (!(dist_min > 0) || dist_min > dist_max)
    throw std::invalid_argument("placement sampler: need 0 < d1 <= d2");
  if (angle_max_deg < 0 || angle_max_deg >= 90)
    throw std::invalid_argument("placement sampler: need 0 <= a < 90 degrees");
}

BoardPlacement sample_placement(const PlacementSampler& sampler, const ObjectAsset& asset,
                                std::uint64_t draw_index) {
  sampler.validate();
  Rng rng = Rng::derive(sampler.seed, {rng_stream::kPlacement, draw_index});
  BoardPlacement p;
  p.z_c = rng.uniform_d(sampler.dist_min, sampler.dist_max);
  p.alpha_rad = rng.uniform_d(-sampler.angle_max_deg, sampler.angle_max_deg) * M_PI / 180.0;
  p.phys_w = asset.phys_w;
  p.phys_h = asset.phys_h;
  p.pix_w = asset.pix_w();
  p.pix_h = asset.pix_h();
  p.validate();
  return p;
}

namespace {

// Bilinear sample of a (C,H,W) tensor at texel coordinates, border-clamped.
// Matches the grid-sample kernel convention (integer coords = texel centers).
inline void bilinear3(const Tensor& img, float x, float y, float out[3]) {
  const int h = img.dim(1), w = img.dim(2);
  const float u = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  const float v = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  const int x0 = std::min(static_cast<int>(u), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(v), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const float fx = u - x0, fy = v - y0;
  for (int c = 0; c < img.dim(0); ++c) {
    out[c] = (1 - fx) * (1 - fy) * img.at3(c, y0, x0) + fx * (1 - fy) * img.at3(c, y0, x1) +
             (1 - fx) * fy * img.at3(c, y1, x0) + fx * fy * img.at3(c, y1, x1);
  }
}

inline float bilinear1(const Tensor& img, float x, float y) {
  const int h = img.dim(0), w = img.dim(1);
  const float u = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  const float v = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  const int x0 = std::min(static_cast<int>(u), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(v), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const float fx = u - x0, fy = v - y0;
  return (1 - fx) * (1 - fy) * img.at2(y0, x0) + fx * (1 - fy) * img.at2(y0, x1) +
         (1 - fx) * fy * img.at2(y1, x0) + fx * fy * img.at2(y1, x1);
}

struct BoardPixel {
  int x, y;        // image pixel
  float ub, vb;    // continuous board coordinates in [0,w]x[0,h]
};

struct BoardCoverage {
  std::vector<BoardPixel> written;  // mask >= 0.5
  int quad_pixels = 0;              // inside the projected quad, any mask value
};

// Image pixels whose inverse-homography preimage lies on the board. The
// forward re-projection guards against the mirrored half-plane of the
// homography.
BoardCoverage board_pixels(const Mat3& h_fwd, const ObjectAsset& asset, const Intrinsics& k) {
  const Mat3 h_inv = h_fwd.inverse();
  BoardCoverage out;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 q = h_inv * Vec3{static_cast<double>(x), static_cast<double>(y), 1.0};
      if (q.z == 0) continue;
      const double ub = q.x / q.z, vb = q.y / q.z;
      if (ub < 0 || ub > asset.pix_w() || vb < 0 || vb > asset.pix_h()) continue;
      const auto back = apply_homography(h_fwd, ub, vb);
      if (!back.valid || std::fabs(back.u - x) > 0.5 || std::fabs(back.v - y) > 0.5) continue;
      ++out.quad_pixels;
      if (bilinear1(asset.mask, static_cast<float>(ub - 0.5), static_cast<float>(vb - 0.5)) <
          0.5f)
        continue;
      out.written.push_back({x, y, static_cast<float>(ub), static_cast<float>(vb)});
    }
  }
  return out;
}

void composite(Tensor* view, const Tensor& object, const std::vector<BoardPixel>& pixels,
               float gain) {
  for (const auto& p : pixels) {
    float rgb[3];
    bilinear3(object, p.ub - 0.5f, p.vb - 0.5f, rgb);
    for (int c = 0; c < 3; ++c)
      view->at3(c, p.y, p.x) = std::clamp(rgb[c] * gain, 0.0f, 1.0f);
  }
}

float ring_mean_luminance(const Tensor& mask, const Tensor& background, bool* empty) {
  const int h = mask.dim(0), w = mask.dim(1);
  double acc = 0;
  std::int64_t count = 0;
  constexpr int r = 5;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at2(y, x) != 0.0f) continue;
      bool near = false;
      for (int dy = -r; dy <= r && !near; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if (mask.at2(yy, xx) != 0.0f) {
            near = true;
            break;
          }
        }
      }
      if (!near) continue;
      acc += luminance(background.at3(0, y, x), background.at3(1, y, x),
                       background.at3(2, y, x));
      ++count;
    }
  *empty = count == 0;
  return count ? static_cast<float>(acc / count) : 0.0f;
}

}  // namespace

float lighting_gain(const Tensor& object_colors_rgb, const Tensor& object_mask,
                    const Tensor& background) {
  double acc = 0;
  std::int64_t count = 0;
  const int h = object_mask.dim(0), w = object_mask.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (object_mask.at2(y, x) == 0.0f) continue;
      acc += luminance(object_colors_rgb.at3(0, y, x), object_colors_rgb.at3(1, y, x),
                       object_colors_rgb.at3(2, y, x));
      ++count;
    }
  if (count == 0) throw std::invalid_argument("lighting_gain: empty object region");
  const float obj_mean = static_cast<float>(acc / count);
  bool ring_empty = false;
  const float ring_mean = ring_mean_luminance(object_mask, background, &ring_empty);
  if (ring_empty || obj_mean <= 0.0f) return 1.0f;
  return std::clamp(ring_mean / obj_mean, 0.5f, 2.0f);
}

SynthesizedViews synthesize_pair(const ObjectAsset& asset, const SceneSample& scene,
                                 const BoardPlacement& placement,
                                 const Tensor* perturbed_object, const SynthesisOptions& opts) {
  asset.validate();
  if (perturbed_object && !perturbed_object->same_shape(asset.image))
    throw std::invalid_argument("synthesize_pair: perturbed object shape mismatch");
  const auto h = board_homographies(placement, scene.k, scene.t_to_s);
  const BoardCoverage target = board_pixels(h.a_to_t, asset, scene.k);
  if (target.quad_pixels == 0) throw std::runtime_error("synthesize_pair: empty projection");
  const BoardCoverage source = board_pixels(h.a_to_s, asset, scene.k);

  SynthesizedViews out;
  out.placement = placement;
  out.it = scene.it;
  out.is = scene.is;
  out.object_mask = Tensor({scene.k.height, scene.k.width});
  for (const auto& p : target.written) out.object_mask.at2(p.y, p.x) = 1.0f;
  out.object_pixels = static_cast<int>(target.written.size());

  float gain = 1.0f;
  if (opts.lighting_match && !target.written.empty()) {
    // Gain from the benign target-view composite, applied to both views and
    // to the perturbed composite, so the object keeps one appearance.
    Tensor colors({3, scene.k.height, scene.k.width});
    for (const auto& p : target.written) {
      float rgb[3];
      bilinear3(asset.image, p.ub - 0.5f, p.vb - 0.5f, rgb);
      for (int c = 0; c < 3; ++c) colors.at3(c, p.y, p.x) = rgb[c];
    }
    gain = lighting_gain(colors, out.object_mask, scene.it);
  }
  out.lighting_gain = gain;

  composite(&out.it, asset.image, target.written, gain);
  composite(&out.is, asset.image, source.written, gain);
  out.it_adv = out.it;
  if (perturbed_object) {
    out.it_adv = scene.it;
    composite(&out.it_adv, *perturbed_object, target.written, gain);
  }
  return out;
}

BoardSamplingGrid board_sampling_grid(const ObjectAsset& asset, const SceneSample& scene,
                                      const BoardPlacement& placement,
                                      const SynthesisOptions& opts) {
  SynthesizedViews views = synthesize_pair(asset, scene, placement, nullptr, opts);
  const auto h = board_homographies(placement, scene.k, scene.t_to_s);
  const std::vector<BoardPixel> target_px = board_pixels(h.a_to_t, asset, scene.k).written;

  BoardSamplingGrid g;
  g.grid = Tensor({1, 2, scene.k.height, scene.k.width});
  g.mask = views.object_mask;
  g.mask3 = Tensor({3, scene.k.height, scene.k.width});
  g.board_depth = Tensor({scene.k.height, scene.k.width});
  g.it_benign = views.it;
  g.gain = views.lighting_gain;
  g.object_pixels = views.object_pixels;
  for (const auto& p : target_px) {
    g.grid.at4(0, 0, p.y, p.x) = p.ub - 0.5f;
    g.grid.at4(0, 1, p.y, p.x) = p.vb - 0.5f;
    for (int c = 0; c < 3; ++c) g.mask3.at3(c, p.y, p.x) = 1.0f;
    g.board_depth.at2(p.y, p.x) =
        static_cast<float>(board_plane_depth(p.x, p.y, placement, scene.k));
  }
  return g;
}

}  // namespace mdeh
