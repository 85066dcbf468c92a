#include "mdeh/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "mdeh/image.hpp"
#include "mdeh/optimizer.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

using nlohmann::json;

const char* attack_norm_name(AttackNorm n) {
  switch (n) {
    case AttackNorm::L0: return "l0";
    case AttackNorm::Linf: return "linf";
    case AttackNorm::L2: return "l2";
    case AttackNorm::Patch: return "patch";
  }
  return "?";
}

AttackNorm attack_norm_from_name(const std::string& name) {
  if (name == "l0") return AttackNorm::L0;
  if (name == "linf") return AttackNorm::Linf;
  if (name == "l2") return AttackNorm::L2;
  if (name == "patch") return AttackNorm::Patch;
  throw std::invalid_argument("unknown attack norm: " + name);
}

void AttackConfig::validate() const {
  if (!(epsilon > 0)) throw std::invalid_argument("attack config: epsilon must be > 0");
  if (steps < 0) throw std::invalid_argument("attack config: steps must be >= 0");
  if (eot_batch < 1) throw std::invalid_argument("attack config: eot batch must be >= 1");
  placements.validate();
}

BudgetReport budget_report(const Tensor& delta) {
  BudgetReport r;
  const int c = delta.dim(0), h = delta.dim(1), w = delta.dim(2);
  double l2 = 0;
  std::int64_t perturbed = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float mx = 0;
      for (int ch = 0; ch < c; ++ch) {
        const float a = std::fabs(delta.at3(ch, y, x));
        mx = std::max(mx, a);
        r.linf = std::max(r.linf, static_cast<double>(a));
        l2 += static_cast<double>(a) * a;
      }
      if (mx > 0.01f) ++perturbed;
    }
  r.l2 = std::sqrt(l2);
  r.l0_fraction = static_cast<double>(perturbed) / (static_cast<double>(h) * w);
  return r;
}

Tensor soft_l0_delta(const PerturbationVars& vars) {
  require_same_shape(vars.b_p, vars.b_n, "soft_l0_delta");
  Tensor d(vars.b_p.shape());
  for (std::int64_t i = 0; i < d.numel(); ++i) {
    const float p = std::clamp(vars.b_p[i], 0.0f, 1.0f);
    const float n = std::clamp(vars.b_n[i], 0.0f, 1.0f);
    d[i] = vars.maxp * (p - n);
  }
  return d;
}

Var soft_l0_delta_var(Tape& tape, Var b_p, Var b_n, float maxp) {
  return tape.mul_scalar(tape.sub(tape.clip(b_p, 0, 1), tape.clip(b_n, 0, 1)), maxp);
}

double l_pixel(const PerturbationVars& vars) {
  const int c = vars.b_p.dim(0), h = vars.b_p.dim(1), w = vars.b_p.dim(2);
  double total = 0;
  for (const Tensor* b : {&vars.b_p, &vars.b_n}) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double mx = -1e30;
        for (int ch = 0; ch < c; ++ch)
          mx = std::max(mx, 0.5 * (std::tanh(b->at3(ch, y, x) / vars.gamma) + 1.0));
        total += mx;
      }
  }
  return total;
}

Var l_pixel_var(Tape& tape, Var b_p, Var b_n, float gamma) {
  auto term = [&](Var b) {
    Var t = tape.mul_scalar(
        tape.add_scalar(tape.tanh(tape.mul_scalar(b, 1.0f / gamma)), 1.0f), 0.5f);
    const int channel_axis = tape.value(b).rank() == 4 ? 1 : 0;
    return tape.sum(tape.reduce(ReduceKind::Max, t, {channel_axis}));
  };
  return tape.add(term(b_p), term(b_n));
}

EotElement make_eot_element(const ObjectAsset& asset, const SceneSample& scene,
                            const BoardPlacement& placement, bool lighting_match) {
  SynthesisOptions opts;
  opts.lighting_match = lighting_match;
  EotElement e;
  e.placement = placement;
  e.grid = board_sampling_grid(asset, scene, placement, opts);
  return e;
}

Var adversarial_composite(Tape& tape, Var perturbed_object, const EotElement& elem) {
  const BoardSamplingGrid& g = elem.grid;
  Var grid = tape.constant(g.grid);
  Var sampled = tape.grid_sample_bilinear(perturbed_object, grid);  // (1,3,H,W)
  Var gained = tape.clip(tape.mul_scalar(sampled, g.gain), 0.0f, 1.0f);
  Var mask3 = tape.constant(nchw(g.mask3));
  Var inv_mask = tape.sub(tape.constant_scalar(1.0f), mask3);
  Var bg = tape.constant(nchw(g.it_benign));
  return tape.add(tape.mul(bg, inv_mask), tape.mul(gained, mask3));
}

namespace {

// Masked mean of (1/depth)^2; mask is (H,W) with a known positive count.
Var depth_reciprocal_mse(Tape& tape, Var depth_nchw, const Tensor& mask, int count) {
  Var r2 = tape.square(tape.reciprocal(depth_nchw));
  if (count <= 0) throw std::invalid_argument("depth_reciprocal_mse: empty mask");
  Var m = tape.constant(nchw(Tensor({1, mask.dim(0), mask.dim(1)},
                                    std::vector<float>(mask.values().begin(),
                                                       mask.values().end()))));
  return tape.mul_scalar(tape.sum(tape.mul(r2, m)), 1.0f / static_cast<float>(count));
}

}  // namespace

Var adversarial_objective(Tape& tape, DepthNet& model, Var b_p, Var b_n,
                          const Tensor& asset_image, const std::vector<EotElement>& batch,
                          float maxp, float gamma, float pixel_weight, bool whole_image_mse) {
  Var delta = soft_l0_delta_var(tape, b_p, b_n, maxp);
  Var pert = tape.clip(tape.add(tape.constant(nchw(asset_image)), delta), 0.0f, 1.0f);

  Var acc;
  int used = 0;
  for (const EotElement& e : batch) {
    if (e.grid.object_pixels == 0) continue;  // object out of view
    Var composite = adversarial_composite(tape, pert, e);
    Var depth = depth_forward(tape, model, composite, nullptr);
    Var mse;
    if (whole_image_mse) {
      mse = tape.mean(tape.square(tape.reciprocal(depth)));
    } else {
      mse = depth_reciprocal_mse(tape, depth, e.grid.mask, e.grid.object_pixels);
    }
    acc = used == 0 ? mse : tape.add(acc, mse);
    ++used;
  }
  if (used == 0) throw std::runtime_error("adversarial_objective: all batch elements skipped");
  Var mean_mse = tape.mul_scalar(acc, 1.0f / static_cast<float>(used));
  Var lp = l_pixel_var(tape, b_p, b_n, gamma);
  return tape.add(mean_mse, tape.mul_scalar(lp, pixel_weight));
}

namespace {

// Perturbed-object var must be (1,3,h,w); delta shape (3,h,w).
struct EotDraw {
  std::vector<EotElement> elems;
};

EotDraw draw_batch(const ObjectAsset& asset, const std::vector<const SceneSample*>& scenes,
                   const AttackConfig& cfg, int step) {
  if (scenes.empty()) throw std::invalid_argument("attack: no scenes supplied");
  EotDraw d;
  for (int e = 0; e < cfg.eot_batch; ++e) {
    const std::uint64_t draw =
        static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg.eot_batch) +
        static_cast<std::uint64_t>(e);
    Rng rng = Rng::derive(cfg.seed, {rng_stream::kAttack, draw});
    const size_t scene_idx = static_cast<size_t>(rng.next_below(scenes.size()));
    const BoardPlacement p = sample_placement(cfg.placements, asset, draw);
    try {
      d.elems.push_back(
          make_eot_element(asset, *scenes[scene_idx], p, cfg.lighting_match));
    } catch (const std::runtime_error&) {
      // Empty projection: skip this element.
    }
  }
  return d;
}

AdversarialObject finish(const ObjectAsset& asset, const Tensor& delta_raw, AttackNorm norm,
                         float epsilon) {
  AdversarialObject adv;
  adv.norm = norm;
  adv.epsilon = epsilon;
  adv.image = Tensor(asset.image.shape());
  adv.delta = Tensor(asset.image.shape());
  for (std::int64_t i = 0; i < adv.image.numel(); ++i) {
    adv.image[i] = std::clamp(asset.image[i] + delta_raw[i], 0.0f, 1.0f);
    adv.delta[i] = adv.image[i] - asset.image[i];
  }
  adv.achieved = budget_report(adv.delta);
  return adv;
}

// Keep the top floor(eps*npix) pixels by max-channel magnitude; zero the rest.
void l0_hard_projection(Tensor* delta, float epsilon) {
  const int c = delta->dim(0), h = delta->dim(1), w = delta->dim(2);
  const std::int64_t npix = static_cast<std::int64_t>(h) * w;
  std::vector<float> mag(static_cast<size_t>(npix), 0.0f);
  std::int64_t over = 0;
  for (std::int64_t p = 0; p < npix; ++p) {
    float mx = 0;
    for (int ch = 0; ch < c; ++ch)
      mx = std::max(mx, std::fabs((*delta)[ch * npix + p]));
    mag[static_cast<size_t>(p)] = mx;
    if (mx > 0.01f) ++over;
  }
  const std::int64_t budget = static_cast<std::int64_t>(epsilon * static_cast<double>(npix));
  if (over <= budget) return;
  std::vector<std::int64_t> order(static_cast<size_t>(npix));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const float ma = mag[static_cast<size_t>(a)], mb = mag[static_cast<size_t>(b)];
    return ma != mb ? ma > mb : a < b;
  });
  for (std::int64_t r = budget; r < npix; ++r) {
    const std::int64_t p = order[static_cast<size_t>(r)];
    for (int ch = 0; ch < c; ++ch) (*delta)[ch * npix + p] = 0.0f;
  }
}

}  // namespace

AdversarialObject gen_l0_attack(DepthNet& model, const ObjectAsset& asset,
                                const std::vector<const SceneSample*>& scenes,
                                const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.norm != AttackNorm::L0) throw std::invalid_argument("gen_l0_attack: wrong norm");
  PerturbationVars vars;
  vars.maxp = cfg.maxp;
  vars.gamma = cfg.gamma;
  // Start just inside the clip interval so gradients flow from step one while
  // the initial delta stays exactly zero.
  vars.b_p = Tensor::full(asset.image.shape(), 0.01f);
  vars.b_n = Tensor::full(asset.image.shape(), 0.01f);

  Adam opt(cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    const EotDraw draw = draw_batch(asset, scenes, cfg, step);
    if (draw.elems.empty()) throw std::runtime_error("gen_l0_attack: all EoT elements skipped");
    Tape tape;
    Var bp = tape.leaf(nchw(vars.b_p), true);
    Var bn = tape.leaf(nchw(vars.b_n), true);
    Var loss = adversarial_objective(tape, model, bp, bn, asset.image, draw.elems, cfg.maxp,
                                     cfg.gamma, cfg.pixel_loss_weight, cfg.whole_image_mse);
    tape.backward(loss);
    opt.step({{&vars.b_p, &tape.grad(bp)}, {&vars.b_n, &tape.grad(bn)}});
  }

  Tensor delta = soft_l0_delta(vars);
  l0_hard_projection(&delta, cfg.epsilon);
  return finish(asset, delta, AttackNorm::L0, cfg.epsilon);
}

AdversarialObject gen_pgd_attack(DepthNet& model, const ObjectAsset& asset,
                                 const std::vector<const SceneSample*>& scenes,
                                 const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.norm != AttackNorm::Linf && cfg.norm != AttackNorm::L2)
    throw std::invalid_argument("gen_pgd_attack: norm must be linf or l2");
  const float eps = cfg.epsilon;
  const float step_size = cfg.pgd_step();
  Tensor delta(asset.image.shape());
  // Random start inside the ball, restricted to the object's own alpha mask.
  Rng rng = Rng::derive(cfg.seed, {rng_stream::kAttack, 0x57a27});
  const std::int64_t npix = static_cast<std::int64_t>(asset.pix_h()) * asset.pix_w();
  if (cfg.norm == AttackNorm::Linf) {
    for (std::int64_t i = 0; i < delta.numel(); ++i) delta[i] = rng.uniform(-eps, eps);
  } else {
    double norm2 = 0;
    for (std::int64_t i = 0; i < delta.numel(); ++i) {
      delta[i] = rng.normal();
      norm2 += static_cast<double>(delta[i]) * delta[i];
    }
    const double radius =
        eps * std::pow(rng.next_double(), 1.0 / static_cast<double>(delta.numel()));
    const double scale = norm2 > 0 ? radius / std::sqrt(norm2) : 0.0;
    for (std::int64_t i = 0; i < delta.numel(); ++i)
      delta[i] = static_cast<float>(delta[i] * scale);
  }
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t p = 0; p < npix; ++p)
      if (asset.mask[p] == 0.0f) delta[ch * npix + p] = 0.0f;

  auto project = [&](Tensor* d) {
    if (cfg.norm == AttackNorm::Linf) {
      for (std::int64_t i = 0; i < d->numel(); ++i) (*d)[i] = std::clamp((*d)[i], -eps, eps);
    } else {
      double n2 = 0;
      for (std::int64_t i = 0; i < d->numel(); ++i) n2 += static_cast<double>((*d)[i]) * (*d)[i];
      const double n = std::sqrt(n2);
      if (n > eps) {
        const float s = static_cast<float>(eps / n);
        for (std::int64_t i = 0; i < d->numel(); ++i) (*d)[i] *= s;
      }
    }
    // Keep A+delta inside [0,1]; clipping toward A only shrinks the ball.
    for (std::int64_t i = 0; i < d->numel(); ++i) {
      const float img = std::clamp(asset.image[i] + (*d)[i], 0.0f, 1.0f);
      (*d)[i] = img - asset.image[i];
    }
  };
  project(&delta);

  for (int step = 0; step < cfg.steps; ++step) {
    const EotDraw draw = draw_batch(asset, scenes, cfg, step);
    if (draw.elems.empty()) throw std::runtime_error("gen_pgd_attack: all EoT elements skipped");
    Tape tape;
    Var dv = tape.leaf(nchw(delta), true);
    Var pert = tape.clip(tape.add(tape.constant(nchw(asset.image)), dv), 0.0f, 1.0f);
    Var acc;
    int used = 0;
    for (const EotElement& e : draw.elems) {
      if (e.grid.object_pixels == 0) continue;
      Var composite = adversarial_composite(tape, pert, e);
      Var depth = depth_forward(tape, model, composite, nullptr);
      Var mse = cfg.whole_image_mse
                    ? tape.mean(tape.square(tape.reciprocal(depth)))
                    : depth_reciprocal_mse(tape, depth, e.grid.mask, e.grid.object_pixels);
      acc = used == 0 ? mse : tape.add(acc, mse);
      ++used;
    }
    Var loss = tape.mul_scalar(acc, 1.0f / static_cast<float>(used));
    tape.backward(loss);
    const Tensor& g = tape.grad(dv);
    if (cfg.norm == AttackNorm::Linf) {
      for (std::int64_t i = 0; i < delta.numel(); ++i) {
        const float s = g[i] > 0 ? 1.0f : (g[i] < 0 ? -1.0f : 0.0f);
        delta[i] -= step_size * s;
      }
    } else {
      double n2 = 0;
      for (std::int64_t i = 0; i < g.numel(); ++i) n2 += static_cast<double>(g[i]) * g[i];
      const double n = std::sqrt(n2);
      if (n > 1e-12) {
        const float s = static_cast<float>(step_size / n);
        for (std::int64_t i = 0; i < delta.numel(); ++i) delta[i] -= s * g[i];
      }
    }
    project(&delta);
  }
  return finish(asset, delta, cfg.norm, eps);
}

PatchRegion patch_region(const ObjectAsset& asset, float epsilon) {
  double area = 0, cx = 0, cy = 0;
  for (int y = 0; y < asset.pix_h(); ++y)
    for (int x = 0; x < asset.pix_w(); ++x)
      if (asset.mask.at2(y, x) != 0.0f) {
        area += 1;
        cx += x;
        cy += y;
      }
  if (area == 0) throw std::invalid_argument("patch_region: empty object mask");
  const int side = static_cast<int>(std::lround(std::sqrt(epsilon * area)));
  if (side <= 0) throw std::invalid_argument("patch_region: patch side rounds to 0");
  PatchRegion r;
  r.side = side;
  const int pcx = static_cast<int>(std::lround(cx / area));
  const int pcy = static_cast<int>(std::lround(cy / area));
  r.x0 = std::clamp(pcx - side / 2, 0, asset.pix_w() - side);
  r.y0 = std::clamp(pcy - side / 2, 0, asset.pix_h() - side);
  return r;
}

AdversarialObject gen_patch_attack(DepthNet& model, const ObjectAsset& asset,
                                   const std::vector<const SceneSample*>& scenes,
                                   const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.norm != AttackNorm::Patch) throw std::invalid_argument("gen_patch_attack: wrong norm");
  const PatchRegion region = patch_region(asset, cfg.epsilon);
  Tensor pmask3(asset.image.shape());
  for (int y = region.y0; y < region.y0 + region.side; ++y)
    for (int x = region.x0; x < region.x0 + region.side; ++x)
      for (int c = 0; c < 3; ++c) pmask3.at3(c, y, x) = 1.0f;

  Tensor content = asset.image;  // full-size; only the square receives gradient
  Adam opt(cfg.lr);
  for (int step = 0; step < cfg.steps; ++step) {
    const EotDraw draw = draw_batch(asset, scenes, cfg, step);
    if (draw.elems.empty())
      throw std::runtime_error("gen_patch_attack: all EoT elements skipped");
    Tape tape;
    Var cv = tape.leaf(nchw(content), true);
    Var pm = tape.constant(nchw(pmask3));
    Var inv = tape.sub(tape.constant_scalar(1.0f), pm);
    Var pert = tape.add(tape.mul(tape.constant(nchw(asset.image)), inv),
                        tape.mul(tape.clip(cv, 0.0f, 1.0f), pm));
    Var acc;
    int used = 0;
    for (const EotElement& e : draw.elems) {
      if (e.grid.object_pixels == 0) continue;
      Var composite = adversarial_composite(tape, pert, e);
      Var depth = depth_forward(tape, model, composite, nullptr);
      Var mse = depth_reciprocal_mse(tape, depth, e.grid.mask, e.grid.object_pixels);
      acc = used == 0 ? mse : tape.add(acc, mse);
      ++used;
    }
    Var loss = tape.mul_scalar(acc, 1.0f / static_cast<float>(used));
    tape.backward(loss);
    // Mask the update to the square so content outside stays bit-identical.
    Tensor g = tape.grad(cv);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      if (pmask3[i] == 0.0f) g[i] = 0.0f;
    opt.step({{&content, &g}});
  }

  Tensor delta(asset.image.shape());
  for (std::int64_t i = 0; i < delta.numel(); ++i) {
    delta[i] = pmask3[i] != 0.0f
                   ? std::clamp(content[i], 0.0f, 1.0f) - asset.image[i]
                   : 0.0f;
  }
  return finish(asset, delta, AttackNorm::Patch, cfg.epsilon);
}

AdversarialObject gen_attack(DepthNet& model, const ObjectAsset& asset,
                             const std::vector<const SceneSample*>& scenes,
                             const AttackConfig& cfg) {
  switch (cfg.norm) {
    case AttackNorm::L0: return gen_l0_attack(model, asset, scenes, cfg);
    case AttackNorm::Linf:
    case AttackNorm::L2: return gen_pgd_attack(model, asset, scenes, cfg);
    case AttackNorm::Patch: return gen_patch_attack(model, asset, scenes, cfg);
  }
  throw std::invalid_argument("gen_attack: unknown norm");
}

void save_adversarial(const std::string& path_base, const AdversarialObject& adv,
                      const AttackConfig& cfg) {
  save_png(path_base + ".png", adv.image);
  json j;
  j["norm"] = attack_norm_name(adv.norm);
  j["epsilon"] = adv.epsilon;
  j["achieved"] = {{"l0_fraction", adv.achieved.l0_fraction},
                   {"linf", adv.achieved.linf},
                   {"l2", adv.achieved.l2}};
  j["config"] = {{"steps", cfg.steps},
                 {"step_size", cfg.pgd_step()},
                 {"eot_batch", cfg.eot_batch},
                 {"seed", cfg.seed},
                 {"maxp", cfg.maxp},
                 {"gamma", cfg.gamma},
                 {"lr", cfg.lr},
                 {"pixel_loss_weight", cfg.pixel_loss_weight},
                 {"whole_image_mse", cfg.whole_image_mse},
                 {"dist_min", cfg.placements.dist_min},
                 {"dist_max", cfg.placements.dist_max},
                 {"angle_max_deg", cfg.placements.angle_max_deg}};
  const std::string tmp = path_base + ".json.tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path_base + ".json");
}

}  // namespace mdeh
