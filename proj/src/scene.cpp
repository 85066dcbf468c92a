#include "mdeh/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mdeh/container.hpp"
#include "mdeh/image.hpp"
#include "mdeh/parallel.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

namespace fs = std::filesystem;
using nlohmann::json;

Intrinsics SyntheticSceneSpec::intrinsics() const {
  Intrinsics k;
  k.fx = fx;
  k.fy = fy;
  k.cx = cx;
  k.cy = cy;
  k.width = width;
  k.height = height;
  return k;
}

RigidTransform SyntheticSceneSpec::stereo_transform() const {
  return RigidTransform(Mat3::identity(), {-baseline_m, 0, 0});
}

namespace {

struct SurfaceTexture {
  float base[3];
  float amp1 = 0.16f, amp2 = 0.09f;
  float freq1 = 0, freq2 = 0;  // cycles per meter along the surface u axis
  float vfreq = 0;
  float phase1 = 0, phase2 = 0, vphase = 0;
  float chroma = 0;  // per-channel phase offset

  // u,v are surface coordinates in meters (or scaled coordinates for ground).
  void shade(float u, float v, float out[3]) const {
    for (int c = 0; c < 3; ++c) {
      const float p = chroma * static_cast<float>(c);
      out[c] = base[c] + amp1 * std::sin(6.2831853f * freq1 * u + phase1 + p) +
               amp2 * std::sin(6.2831853f * freq2 * u + vfreq * v + phase2 + 0.7f * p);
    }
  }
};

SurfaceTexture random_texture(Rng& rng, double typical_depth, double fx) {
  SurfaceTexture t;
  for (float& b : t.base) b = rng.uniform(0.30f, 0.68f);
  // Projected wavelength lands near 11-19 px at the surface's typical depth.
  const double px_wavelength = rng.uniform_d(11.0, 19.0);
  const double meters = px_wavelength * typical_depth / fx;
  t.freq1 = static_cast<float>(1.0 / meters);
  t.freq2 = t.freq1 * rng.uniform(2.1f, 2.9f);
  t.amp2 = 0.07f;
  t.vfreq = rng.uniform(0.8f, 1.8f);
  t.phase1 = rng.uniform(0.0f, 6.2832f);
  t.phase2 = rng.uniform(0.0f, 6.2832f);
  t.vphase = rng.uniform(0.0f, 6.2832f);
  t.chroma = rng.uniform(0.3f, 1.8f);
  return t;
}

struct Quad {
  double z = 0;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  SurfaceTexture tex;
};

struct World {
  SyntheticSceneSpec spec;
  SurfaceTexture ground, wall;
  std::vector<Quad> quads;
  float sky[3] = {0.72f, 0.78f, 0.86f};
};

World build_world(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  World w;
  w.spec = spec;
  Rng rng = Rng::derive(seed, {rng_stream::kScene});
  w.wall = random_texture(rng, spec.wall_z_m, spec.fx);
  w.ground = random_texture(rng, 12.0, spec.fx);  // scaled coords, see below
  w.ground.freq1 = rng.uniform(0.055f, 0.085f);   // cycles per scaled unit
  w.ground.freq2 = w.ground.freq1 * rng.uniform(2.0f, 2.6f);
  w.quads.resize(static_cast<size_t>(spec.quad_count));
  for (auto& q : w.quads) {
    q.z = rng.uniform_d(spec.quad_depth_min, spec.quad_depth_max);
    const double width = rng.uniform_d(1.5, 4.0);
    const double height = rng.uniform_d(1.2, 2.5);
    const double xc = rng.uniform_d(-0.55, 0.55) * q.z;
    q.x0 = xc - width / 2;
    q.x1 = xc + width / 2;
    q.y1 = spec.ground_height_m;  // standing on the ground (y grows downward)
    q.y0 = spec.ground_height_m - height;
    q.tex = random_texture(rng, q.z, spec.fx);
  }
  return w;
}

// Raycast from camera center `origin` (target frame, axis-aligned rig)
// through pixel (u,v). Returns depth (z in the camera frame) and color.
struct Hit {
  double depth = 0;
  float rgb[3] = {0, 0, 0};
};

Hit raycast(const World& w, const Vec3& origin, double u, double v) {
  const auto& s = w.spec;
  const double dx = (u - s.cx) / s.fx, dy = (v - s.cy) / s.fy;
  // Candidate intersections along X = origin + t*(dx,dy,1).
  double best_t = (s.wall_z_m - origin.z);  // wall plane z = wall_z
  int best_kind = 0;                        // 0 wall, 1 ground, 2+i quad
  if (dy > 1e-9) {
    const double t_g = (s.ground_height_m - origin.y) / dy;
    if (t_g > 0 && t_g < best_t) {
      best_t = t_g;
      best_kind = 1;
    }
  }
  for (size_t i = 0; i < w.quads.size(); ++i) {
    const Quad& q = w.quads[i];
    const double t_q = q.z - origin.z;
    if (t_q <= 0 || t_q >= best_t) continue;
    const double hx = origin.x + t_q * dx, hy = origin.y + t_q * dy;
    if (hx >= q.x0 && hx <= q.x1 && hy >= q.y0 && hy <= q.y1) {
      best_t = t_q;
      best_kind = 2 + static_cast<int>(i);
    }
  }

  Hit h;
  const double hx = origin.x + best_t * dx;
  const double hy = origin.y + best_t * dy;
  const double hz = origin.z + best_t;
  h.depth = best_t;  // dz == 1, so ray parameter equals camera-frame depth
  float rgb[3];
  if (best_kind == 0) {
    w.wall.shade(static_cast<float>(hx), static_cast<float>(hy), rgb);
  } else if (best_kind == 1) {
    // Scaled ground coordinates keep the projected frequency stable: the
    // horizontal coordinate is x over (distance-proportional) wavelength.
    const float ug = static_cast<float>(hx / (0.16 * hz) * 1.0);
    const float vg = static_cast<float>(2.5 * std::log(hz));
    w.ground.shade(ug, vg, rgb);
  } else {
    const Quad& q = w.quads[static_cast<size_t>(best_kind - 2)];
    q.tex.shade(static_cast<float>(hx), static_cast<float>(hy), rgb);
  }
  const float fog = static_cast<float>(std::exp(-h.depth / w.spec.fog_distance_m));
  for (int c = 0; c < 3; ++c) {
    const float v01 = std::clamp(rgb[c], 0.0f, 1.0f);
    h.rgb[c] = v01 * fog + w.sky[c] * (1 - fog);
  }
  return h;
}

void render_view(const World& w, const Vec3& origin, Tensor* image, Tensor* depth) {
  const auto& s = w.spec;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      const Hit h = raycast(w, origin, x, y);
      if (depth) depth->at2(y, x) = static_cast<float>(h.depth);
      if (image)
        for (int c = 0; c < 3; ++c) image->at3(c, y, x) = h.rgb[c];
    }
}

}  // namespace

SceneSample generate_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  const World w = build_world(spec, seed);
  SceneSample out;
  out.k = spec.intrinsics();
  out.k.validate();
  out.t_to_s = spec.stereo_transform();
  out.it = Tensor({3, spec.height, spec.width});
  out.is = Tensor({3, spec.height, spec.width});
  out.depth_gt = Tensor({spec.height, spec.width});
  out.depth_gt_source = Tensor({spec.height, spec.width});
  render_view(w, {0, 0, 0}, &out.it, &out.depth_gt);
  render_view(w, {spec.baseline_m, 0, 0}, &out.is, &out.depth_gt_source);
  // Stored images are 8-bit PNGs; quantize now so the in-memory pipeline and
  // the on-disk pipeline see identical data.
  out.it = quantized8(out.it);
  out.is = quantized8(out.is);
  return out;
}

Tensor visibility_mask(const SceneSample& scene) {
  if (scene.depth_gt.empty() || scene.depth_gt_source.empty())
    throw std::invalid_argument("visibility_mask: scene lacks ground-truth depth");
  const int h = scene.k.height, w = scene.k.width;
  Tensor vis({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d = scene.depth_gt.at2(y, x);
      const Vec3 ps = scene.t_to_s.apply(backproject(x, y, d, scene.k));
      const auto pp = project(ps, scene.k);
      if (!pp.valid || pp.u < 0 || pp.u > w - 1 || pp.v < 0 || pp.v > h - 1) continue;
      // Bilinear source depth at the projected location.
      const int x0 = std::min(static_cast<int>(pp.u), w - 2);
      const int y0 = std::min(static_cast<int>(pp.v), h - 2);
      const double fxs = pp.u - x0, fys = pp.v - y0;
      const double ds =
          (1 - fxs) * (1 - fys) * scene.depth_gt_source.at2(y0, x0) +
          fxs * (1 - fys) * scene.depth_gt_source.at2(y0, x0 + 1) +
          (1 - fxs) * fys * scene.depth_gt_source.at2(y0 + 1, x0) +
          fxs * fys * scene.depth_gt_source.at2(y0 + 1, x0 + 1);
      if (std::fabs(ds - ps.z) <= std::max(0.08, 0.03 * ps.z)) vis.at2(y, x) = 1.0f;
    }
  return vis;
}

namespace {

json spec_to_json(const SyntheticSceneSpec& s) {
  return json{{"width", s.width},
              {"height", s.height},
              {"fx", s.fx},
              {"fy", s.fy},
              {"cx", s.cx},
              {"cy", s.cy},
              {"baseline_m", s.baseline_m},
              {"ground_height_m", s.ground_height_m},
              {"wall_z_m", s.wall_z_m},
              {"quad_count", s.quad_count},
              {"quad_depth_min", s.quad_depth_min},
              {"quad_depth_max", s.quad_depth_max},
              {"fog_distance_m", s.fog_distance_m}};
}

SyntheticSceneSpec spec_from_json(const json& j) {
  SyntheticSceneSpec s;
  s.width = j.at("width");
  s.height = j.at("height");
  s.fx = j.at("fx");
  s.fy = j.at("fy");
  s.cx = j.at("cx");
  s.cy = j.at("cy");
  s.baseline_m = j.at("baseline_m");
  s.ground_height_m = j.at("ground_height_m");
  s.wall_z_m = j.at("wall_z_m");
  s.quad_count = j.at("quad_count");
  s.quad_depth_min = j.at("quad_depth_min");
  s.quad_depth_max = j.at("quad_depth_max");
  s.fog_distance_m = j.at("fog_distance_m");
  return s;
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp);
    os << text;
  }
  fs::rename(tmp, path);
}

void write_scene_dir(const std::string& dir, const SceneSample& s) {
  fs::create_directories(dir);
  save_png((fs::path(dir) / "it.png").string(), s.it);
  save_png((fs::path(dir) / "is.png").string(), s.is);
  NamedTensors depth;
  depth.emplace_back("depth", s.depth_gt);
  depth.emplace_back("depth_source", s.depth_gt_source);
  write_tensor_container((fs::path(dir) / "depth_gt.dht").string(), depth);
  const auto m = s.t_to_s.matrix4();
  json pose = json::array();
  for (double v : m) pose.push_back(v);
  atomic_write_text((fs::path(dir) / "pose.json").string(),
                    json{{"t_to_s", pose}}.dump(2) + "\n");
  json kj{{"fx", s.k.fx},    {"fy", s.k.fy},       {"cx", s.k.cx},
          {"cy", s.k.cy},    {"width", s.k.width}, {"height", s.k.height}};
  atomic_write_text((fs::path(dir) / "intrinsics.json").string(), kj.dump(2) + "\n");
}

}  // namespace

DatasetManifest generate_dataset(const SyntheticSceneSpec& spec, int count, std::uint64_t seed,
                                 const std::string& out_dir) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  DatasetManifest man;
  man.spec = spec;
  man.seed = seed;
  man.scene_seeds.resize(static_cast<size_t>(count));
  man.scene_dirs.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    man.scene_seeds[static_cast<size_t>(i)] =
        Rng::derive(seed, {rng_stream::kScene, static_cast<std::uint64_t>(i)}).next_u64();
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%05d", i);
    man.scene_dirs[static_cast<size_t>(i)] = name;
  }
  fs::create_directories(out_dir);
  parallel_for(count, [&](std::int64_t i) {
    const SceneSample s = generate_scene(spec, man.scene_seeds[static_cast<size_t>(i)]);
    write_scene_dir((fs::path(out_dir) / man.scene_dirs[static_cast<size_t>(i)]).string(), s);
  });
  json j;
  j["spec"] = spec_to_json(spec);
  j["seed"] = seed;
  j["scene_seeds"] = man.scene_seeds;
  j["scene_dirs"] = man.scene_dirs;
  atomic_write_text((fs::path(out_dir) / "manifest.json").string(), j.dump(2) + "\n");
  return man;
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
  std::ifstream is((fs::path(dataset_dir) / "manifest.json").string());
  if (!is) throw std::runtime_error("load_manifest: missing manifest.json in " + dataset_dir);
  json j;
  is >> j;
  DatasetManifest man;
  man.spec = spec_from_json(j.at("spec"));
  man.seed = j.at("seed");
  man.scene_seeds = j.at("scene_seeds").get<std::vector<std::uint64_t>>();
  man.scene_dirs = j.at("scene_dirs").get<std::vector<std::string>>();
  return man;
}

SceneSample load_scene(const std::string& scene_dir) {
  SceneSample s;
  s.it = load_png((fs::path(scene_dir) / "it.png").string());
  s.is = load_png((fs::path(scene_dir) / "is.png").string());
  {
    std::ifstream isf((fs::path(scene_dir) / "intrinsics.json").string());
    if (!isf) throw std::runtime_error("load_scene: missing intrinsics.json in " + scene_dir);
    json j;
    isf >> j;
    s.k.fx = j.at("fx");
    s.k.fy = j.at("fy");
    s.k.cx = j.at("cx");
    s.k.cy = j.at("cy");
    s.k.width = j.at("width");
    s.k.height = j.at("height");
  }
  {
    std::ifstream ps((fs::path(scene_dir) / "pose.json").string());
    if (!ps) throw std::runtime_error("load_scene: missing pose.json in " + scene_dir);
    json j;
    ps >> j;
    std::array<double, 16> m{};
    const auto& arr = j.at("t_to_s");
    for (size_t i = 0; i < 16; ++i) m[i] = arr.at(i).get<double>();
    s.t_to_s = RigidTransform::from_matrix4(m);
  }
  const auto depth_path = (fs::path(scene_dir) / "depth_gt.dht").string();
  if (fs::exists(depth_path)) {
    const NamedTensors t = read_tensor_container(depth_path);
    s.depth_gt = find_tensor(t, "depth");
    for (const auto& [n, v] : t)
      if (n == "depth_source") s.depth_gt_source = v;
  }
  return s;
}

std::vector<std::string> dataset_scene_dirs(const std::string& dataset_dir) {
  const DatasetManifest man = load_manifest(dataset_dir);
  std::vector<std::string> out;
  out.reserve(man.scene_dirs.size());
  for (const auto& d : man.scene_dirs) out.push_back((fs::path(dataset_dir) / d).string());
  return out;
}

}  // namespace mdeh
