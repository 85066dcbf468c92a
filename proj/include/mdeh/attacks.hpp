#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdeh/autodiff.hpp"
#include "mdeh/models.hpp"
#include "mdeh/scene.hpp"
#include "mdeh/synthesis.hpp"

namespace mdeh {

/// Positive/negative components of the soft-L0 parameterization:
/// delta = maxp * (clip(b_p,0,1) - clip(b_n,0,1)).
struct PerturbationVars {
  Tensor b_p, b_n;  // (3,h,w)
  float maxp = 1.0f;
  float gamma = 0.05f;
};

enum class AttackNorm { L0, Linf, L2, Patch };

const char* attack_norm_name(AttackNorm n);
AttackNorm attack_norm_from_name(const std::string& name);

struct AttackConfig {
  AttackNorm norm = AttackNorm::L0;
  /// Pixel fraction for L0/Patch, perturbation magnitude for Linf/L2
  /// (normalized [0,1] pixel scale).
  float epsilon = 0.1f;
  int steps = 10;
  float step_size = 0.0f;  // 0 -> PGD default 2.5*eps/10
  int eot_batch = 4;
  PlacementSampler placements{5.0, 30.0, 30.0, 0};
  std::uint64_t seed = 0;
  float maxp = 1.0f;
  float gamma = 0.05f;
  float lr = 0.05f;  // first-order optimizer rate for L0/patch
  /// Weight on the pixel-count term inside the L0 attack loss. The raw sum
  /// dwarfs the depth term by orders of magnitude, so the attack balances it.
  float pixel_loss_weight = 2e-4f;
  /// false: depth MSE restricted to the object mask; true: whole image.
  bool whole_image_mse = false;
  bool lighting_match = true;

  float pgd_step() const { return step_size > 0 ? step_size : 2.5f * epsilon / 10.0f; }
  void validate() const;
};

struct BudgetReport {
  double l0_fraction = 0;  // pixels with max-channel |delta| > 0.01, over h*w
  double linf = 0;
  double l2 = 0;
};

struct AdversarialObject {
  Tensor image;  // A+delta, clipped to [0,1], (3,h,w)
  Tensor delta;  // effective image - A
  BudgetReport achieved;
  AttackNorm norm = AttackNorm::L0;
  float epsilon = 0;
};

BudgetReport budget_report(const Tensor& delta);

// --- soft-L0 pieces ----------------------------------------------------------

Tensor soft_l0_delta(const PerturbationVars& vars);
Var soft_l0_delta_var(Tape& tape, Var b_p, Var b_n, float maxp);

/// Pixel-count surrogate: sum over pixels of the max-over-channel tanh terms
/// for both components.
double l_pixel(const PerturbationVars& vars);
Var l_pixel_var(Tape& tape, Var b_p, Var b_n, float gamma);

/// One precomputed EoT element: a scene with a placement and its sampling grid.
struct EotElement {
  BoardPlacement placement;
  BoardSamplingGrid grid;
};
EotElement make_eot_element(const ObjectAsset& asset, const SceneSample& scene,
                            const BoardPlacement& placement, bool lighting_match = true);

/// EoT attack loss: mean over batch of MSE(1/depth on the object region, 0)
/// plus pixel_weight * l_pixel. Gradients reach only the perturbation leaves;
/// model parameters stay frozen. Empty-mask elements are skipped; all skipped
/// is an error.
Var adversarial_objective(Tape& tape, DepthNet& model, Var b_p, Var b_n,
                          const Tensor& asset_image, const std::vector<EotElement>& batch,
                          float maxp, float gamma, float pixel_weight, bool whole_image_mse);

/// Adversarial composite for an explicit perturbed-object var; shared by the
/// objective and the PGD/patch paths.
Var adversarial_composite(Tape& tape, Var perturbed_object, const EotElement& elem);

// --- generators ---------------------------------------------------------------

AdversarialObject gen_l0_attack(DepthNet& model, const ObjectAsset& asset,
                                const std::vector<const SceneSample*>& scenes,
                                const AttackConfig& cfg);
AdversarialObject gen_pgd_attack(DepthNet& model, const ObjectAsset& asset,
                                 const std::vector<const SceneSample*>& scenes,
                                 const AttackConfig& cfg);
AdversarialObject gen_patch_attack(DepthNet& model, const ObjectAsset& asset,
                                   const std::vector<const SceneSample*>& scenes,
                                   const AttackConfig& cfg);
/// Dispatch on cfg.norm.
AdversarialObject gen_attack(DepthNet& model, const ObjectAsset& asset,
                             const std::vector<const SceneSample*>& scenes,
                             const AttackConfig& cfg);

/// Centered square support used by the patch attack; throws when the side
/// rounds to zero.
struct PatchRegion {
  int x0 = 0, y0 = 0, side = 0;
};
PatchRegion patch_region(const ObjectAsset& asset, float epsilon);

/// PNG + sidecar JSON (achieved budgets and the config used).
void save_adversarial(const std::string& path_base, const AdversarialObject& adv,
                      const AttackConfig& cfg);

}  // namespace mdeh
