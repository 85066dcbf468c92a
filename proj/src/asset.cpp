#include "mdeh/asset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mdeh/image.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

void ObjectAsset::validate() const {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("asset: image must be (3,h,w)");
  if (mask.rank() != 2 || mask.dim(0) != image.dim(1) || mask.dim(1) != image.dim(2))
    throw std::invalid_argument("asset: mask resolution must match the image");
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.0f && mask[i] != 1.0f)
      throw std::invalid_argument("asset: mask must be binary");
  if (phys_w <= 0 || phys_h <= 0) throw std::invalid_argument("asset: physical size must be > 0");
  const double a = phys_w / pix_w(), b = phys_h / pix_h();
  if (std::fabs(a - b) > 1e-6 * std::max(a, b))
    throw std::invalid_argument("asset: W/w must equal H/h");
}

ObjectAsset make_procedural_asset(std::uint64_t seed) {
  const int w = 96, h = 72;
  ObjectAsset a;
  a.image = Tensor({3, h, w});
  a.mask = Tensor({h, w});
  a.phys_w = 2.0;
  a.phys_h = 1.5;

  Rng rng = Rng::derive(seed, {rng_stream::kInit, 0xa55e7});
  const float body_r = rng.uniform(0.25f, 0.85f);
  const float body_g = rng.uniform(0.25f, 0.85f);
  const float body_b = rng.uniform(0.25f, 0.85f);
  const float shade_freq = rng.uniform(1.2f, 2.2f);
  const float shade_phase = rng.uniform(0.0f, 6.28f);

  // Rounded-rectangle silhouette with a narrower cab on top.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float u = (x + 0.5f) / w, v = (y + 0.5f) / h;
      const float cab = v < 0.35f ? 0.22f : 0.06f;  // inset
      const float mx = 0.06f + cab * 0.5f;
      bool inside = u > mx && u < 1 - mx && v > 0.08f && v < 0.97f;
      // Round the corners.
      const float rx = 0.10f, ry = 0.10f;
      auto corner = [&](float cxp, float cyp) {
        const float dx = (u - cxp) / rx, dy = (v - cyp) / ry;
        return dx * dx + dy * dy > 1.0f;
      };
      if (inside) {
        if (u < mx + rx && v < 0.08f + ry && corner(mx + rx, 0.08f + ry)) inside = false;
        if (u > 1 - mx - rx && v < 0.08f + ry && corner(1 - mx - rx, 0.08f + ry)) inside = false;
        if (u < 0.06f + rx && v > 0.97f - ry && corner(0.06f + rx, 0.97f - ry)) inside = false;
        if (u > 0.94f - rx && v > 0.97f - ry && corner(0.94f - rx, 0.97f - ry)) inside = false;
      }
      a.mask.at2(y, x) = inside ? 1.0f : 0.0f;

      // Smooth body shading; window band darker; bottom shadow strip.
      const float shade =
          0.12f * std::sin(6.2832f * shade_freq * u + shade_phase) +
          0.08f * std::sin(6.2832f * 0.9f * v + 0.5f * shade_phase);
      float r = body_r + shade, g = body_g + shade, b = body_b + shade;
      if (v > 0.12f && v < 0.32f) {  // window band
        const float t = 0.55f + 0.25f * std::sin(6.2832f * 0.8f * u + 1.3f);
        r = 0.15f * t;
        g = 0.18f * t;
        b = 0.22f * t;
      }
      if (v > 0.88f) {
        r *= 0.45f;
        g *= 0.45f;
        b *= 0.45f;
      }
      // Tail lights.
      if (v > 0.40f && v < 0.52f && (u < 0.22f || u > 0.78f)) {
        r = 0.8f;
        g = 0.12f;
        b = 0.1f;
      }
      a.image.at3(0, y, x) = std::clamp(r, 0.0f, 1.0f);
      a.image.at3(1, y, x) = std::clamp(g, 0.0f, 1.0f);
      a.image.at3(2, y, x) = std::clamp(b, 0.0f, 1.0f);
    }
  }
  // Match what a PNG round trip would give so in-memory and on-disk agree.
  a.image = quantized8(a.image);
  a.validate();
  return a;
}

ObjectAsset load_asset(const std::string& dir) {
  namespace fs = std::filesystem;
  ObjectAsset a;
  a.image = load_png((fs::path(dir) / "image.png").string());
  Tensor m = load_png((fs::path(dir) / "mask.png").string());
  if (m.rank() == 3) {
    Tensor flat({m.dim(1), m.dim(2)});
    for (int y = 0; y < m.dim(1); ++y)
      for (int x = 0; x < m.dim(2); ++x) flat.at2(y, x) = m.at3(0, y, x) >= 0.5f ? 1.0f : 0.0f;
    a.mask = std::move(flat);
  }
  std::ifstream js((fs::path(dir) / "asset.json").string());
  if (!js) throw std::runtime_error("load_asset: missing asset.json in " + dir);
  nlohmann::json j;
  js >> j;
  a.phys_w = j.at("physical_w").get<double>();
  a.phys_h = j.at("physical_h").get<double>();
  a.validate();
  return a;
}

void save_asset(const std::string& dir, const ObjectAsset& asset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_png((fs::path(dir) / "image.png").string(), asset.image);
  Tensor m3({1, asset.pix_h(), asset.pix_w()},
            std::vector<float>(asset.mask.values().begin(), asset.mask.values().end()));
  save_png((fs::path(dir) / "mask.png").string(), m3);
  nlohmann::json j;
  j["physical_w"] = asset.phys_w;
  j["physical_h"] = asset.phys_h;
  std::ofstream js((fs::path(dir) / "asset.json").string());
  js << j.dump(2) << "\n";
}

}  // namespace mdeh
