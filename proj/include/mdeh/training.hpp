#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdeh/attacks.hpp"
#include "mdeh/metrics.hpp"
#include "mdeh/models.hpp"
#include "mdeh/optimizer.hpp"
#include "mdeh/scene.hpp"
#include "mdeh/synthesis.hpp"

namespace mdeh {

// --- photometric loss --------------------------------------------------------

/// Monodepth2-style blend: 0.85 * (1-SSIM)/2 + 0.15 * L1 with a 3x3 SSIM
/// window, averaged over valid pixels. Differentiable through both images.
Var photometric_error_var(Tape& tape, Var i1, Var i2, const Tensor& validity_hw);
/// Non-differentiable convenience wrapper over the same graph.
double photometric_error(const Tensor& i1_chw, const Tensor& i2_chw,
                         const Tensor& validity_hw);

/// Differentiable warp grid (1,2,H,W) from a depth var under a fixed pose.
Var warp_grid_from_depth(Tape& tape, Var depth, const RigidTransform& t_to_s,
                         const Intrinsics& k);
/// Learned-pose variant: pose6 is a (1,6) var (axis-angle + translation);
/// the rotation is linearized around zero for the gradient path.
Var warp_grid_from_depth_pose(Tape& tape, Var depth, Var pose6, const Intrinsics& k);

/// Validity of a warp grid's current values against the image bounds.
Tensor grid_validity(const Tape& tape, Var grid, int height, int width);

/// Photometric loss of reconstructing views.it from views.is through an
/// explicit depth map (no network). This is the geometry-oracle path used to
/// measure the reconstruction floor.
double selfsup_loss_from_depth(const SynthesizedViews& views, const Tensor& depth_hw,
                               const RigidTransform& t_to_s, const Intrinsics& k);

// --- configuration -----------------------------------------------------------

enum class TrainMethod { SelfSup, SupPseudo, Contrastive };
enum class PertKind { L0, PGD, None };

struct TrainConfig {
  std::vector<TrainMethod> methods{TrainMethod::SelfSup};
  PertKind perturbation = PertKind::L0;
  float epsilon = 0.1f;
  int attack_steps = 10;
  int attack_eot = 1;
  float attack_lr = 0.05f;
  float pixel_loss_weight = 2e-4f;
  float lr = 1e-4f;
  int batch_size = 2;
  int total_steps = 2000;
  bool learned_pose = false;  // fixed-T by default (stereo pairs)
  PlacementSampler placements{5.0, 10.0, 30.0, 0};
  std::uint64_t seed = 0;
  bool from_scratch = false;  // informational; the caller supplies the start model
  bool lighting_match = true;
  int log_every = 10;
  int eval_every = 250;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  void validate() const;
};

struct LossBreakdown {
  double l_p = 0, l_sup = 0, l_con = 0;
  double total = 0;
};

/// Owns the trainable nets, the frozen teacher, contrastive heads and the
/// optimizer state for one run.
struct TrainerState {
  DepthNet depth;
  PoseNet pose;
  bool use_pose = false;
  DepthNet reference;  // frozen pseudo-label / teacher model
  bool has_reference = false;
  MlpHeads heads;
  bool has_heads = false;
  Adam opt;
  std::int64_t step = 0;

  static TrainerState make(const DepthNet& start, const TrainConfig& cfg);
};

struct TrainSample {
  const ObjectAsset* asset;
  const SceneSample* scene;
};

/// One optimizer step over the batch with the enabled method set summed.
LossBreakdown train_step(TrainerState& state, const std::vector<TrainSample>& batch,
                         const TrainConfig& cfg);

// Specced single-method wrappers (the method set is overridden).
LossBreakdown train_step_selfsup(TrainerState& state, const std::vector<TrainSample>& batch,
                                 const TrainConfig& cfg);
LossBreakdown train_step_sup_pseudo(TrainerState& state, const std::vector<TrainSample>& batch,
                                    const TrainConfig& cfg);
LossBreakdown train_step_contrastive(TrainerState& state,
                                     const std::vector<TrainSample>& batch,
                                     const TrainConfig& cfg);

struct TrainResult {
  Checkpoint final_checkpoint;
  std::string log_path;
  std::vector<std::string> checkpoint_paths;
};

/// Full loop: iterates train_step over the dataset, writes the CSV log
/// (step, l_p, l_sup, l_con, total, benign_abse) and checkpoints under
/// out_dir. Deterministic given the config seed.
TrainResult run_training(const TrainConfig& cfg, const DepthNet& start,
                         const std::vector<const SceneSample*>& train_scenes,
                         const std::vector<const SceneSample*>& eval_scenes,
                         const std::vector<const ObjectAsset*>& assets,
                         const std::string& out_dir);

}  // namespace mdeh
