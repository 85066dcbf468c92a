#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdeh/autodiff.hpp"
#include "mdeh/geometry.hpp"
#include "mdeh/tensor.hpp"

namespace mdeh {

/// Disparity sigma in (0,1) <-> metric depth: 1/depth = 1/d_max + (1/d_min - 1/d_max) * sigma.
struct DispDepthMapping {
  double d_min = 0.1, d_max = 100.0;
  double to_depth(double sigma) const;
};

struct ConvParams {
  Tensor w;  // (O,I,K,K)
  Tensor b;  // (O)
};

/// Binds parameter tensors to tape leaves for one forward pass and remembers
/// the pairing so an optimizer can read the gradients back out. A parameter
/// bound twice reuses its leaf, so gradients accumulate instead of splitting.
struct ParamBindings {
  std::vector<std::pair<Tensor*, Var>> items;
  Var bind(Tape& tape, Tensor* param, bool train);
};

/// Small convolutional encoder-decoder: 4 stride-2 encoder stages, 4 decoder
/// stages with skip connections, and a sigmoid disparity head.
struct DepthNet {
  std::vector<ConvParams> enc;  // 4 stages
  std::vector<ConvParams> dec;  // 4 stages
  ConvParams head;
  DispDepthMapping mapping;
  float head_bias_init = -2.0f;

  static DepthNet init(std::uint64_t seed, float head_bias = -2.0f);
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
  std::int64_t param_count() const;
};

/// Depth forward pass. Requires H and W divisible by 16. When bindings is
/// non-null the parameters are trainable leaves. `encoder_out` (optional)
/// receives the pooled final encoder stage (1,C) for contrastive heads.
Var depth_forward(Tape& tape, DepthNet& net, Var image, ParamBindings* bindings,
                  Var* encoder_out = nullptr);

/// Encoder stages only, globally average-pooled: (1,3,H,W) -> (1,C).
Var encoder_forward(Tape& tape, DepthNet& net, Var image, ParamBindings* bindings);
int encoder_embed_dim();

/// Convolutional 6-DoF pose regressor over a concatenated image pair
/// (1,6,H,W) -> 6 values: axis-angle (3) + translation (3), scaled by 0.01.
struct PoseNet {
  std::vector<ConvParams> enc;  // 4 stages
  Tensor fc_w;                  // (6,C)
  Tensor fc_b;                  // (6)

  static PoseNet init(std::uint64_t seed);
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::int64_t param_count() const;
};

/// Differentiable pose vector (1,6).
Var pose_forward_var(Tape& tape, PoseNet& net, Var pair_image, ParamBindings* bindings);

/// Production pose: exact exponential map, orthonormal by construction.
RigidTransform pose_from_vector6(const float v[6]);
RigidTransform pose_forward(PoseNet& net, const Tensor& i0_s, const Tensor& i0_t);

/// SimSiam-style projection + prediction heads over the pooled encoder
/// embedding: projector C->128, predictor 128->64->128.
struct MlpHeads {
  Tensor proj_w, proj_b;
  Tensor pred_w1, pred_b1, pred_w2, pred_b2;
  static MlpHeads init(std::uint64_t seed, int embed_dim);
  std::vector<std::pair<std::string, Tensor*>> named_params();
};

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
  DepthNet depth;
  bool has_pose = false;
  PoseNet pose;
  std::int64_t step = 0;
};

inline constexpr const char* kDepthArchId = "depthnet-tiny-v1";

/// Writes <path>.dht (tensors) and <path>.json (manifest).
void save_checkpoint(const std::string& path_base, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path_base);

/// (C,H,W) image -> (1,C,H,W) tensor leaf helper.
Tensor nchw(const Tensor& chw);
Tensor chw(const Tensor& nchw);

}  // namespace mdeh
