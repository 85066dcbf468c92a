#include "mdeh/models.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "mdeh/container.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

using nlohmann::json;

double DispDepthMapping::to_depth(double sigma) const {
  if (!(sigma > 0) || !(sigma < 1))
    throw std::invalid_argument("disp_to_depth: sigma must lie in (0,1)");
  return 1.0 / (1.0 / d_max + (1.0 / d_min - 1.0 / d_max) * sigma);
}

Var ParamBindings::bind(Tape& tape, Tensor* param, bool train) {
  if (train) {
    for (const auto& [p, var] : items)
      if (p == param) return var;
  }
  Var v = tape.leaf(*param, train);
  if (train) items.emplace_back(param, v);
  return v;
}

namespace {

constexpr int kDepthEnc[4] = {12, 24, 48, 48};
constexpr int kDepthDec[4] = {48, 24, 12, 8};
constexpr int kPoseEnc[4] = {12, 24, 32, 32};

ConvParams he_conv(Rng& rng, int out_c, int in_c, int k, float bias = 0.0f) {
  ConvParams p;
  p.w = Tensor({out_c, in_c, k, k});
  const float bound = std::sqrt(6.0f / static_cast<float>(in_c * k * k));
  for (std::int64_t i = 0; i < p.w.numel(); ++i) p.w[i] = rng.uniform(-bound, bound);
  p.b = Tensor::full({out_c}, bias);
  return p;
}

}  // namespace

DepthNet DepthNet::init(std::uint64_t seed, float head_bias) {
  Rng rng = Rng::derive(seed, {rng_stream::kInit, 0xdee9});
  DepthNet n;
  n.head_bias_init = head_bias;
  int in_c = 3;
  for (int s = 0; s < 4; ++s) {
    n.enc.push_back(he_conv(rng, kDepthEnc[s], in_c, 3));
    in_c = kDepthEnc[s];
  }
  const int dec_in[4] = {kDepthEnc[3] + kDepthEnc[2], kDepthDec[0] + kDepthEnc[1],
                         kDepthDec[1] + kDepthEnc[0], kDepthDec[2]};
  for (int s = 0; s < 4; ++s) n.dec.push_back(he_conv(rng, kDepthDec[s], dec_in[s], 3));
  n.head = he_conv(rng, 1, kDepthDec[3], 3, head_bias);
  return n;
}

std::vector<std::pair<std::string, Tensor*>> DepthNet::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t s = 0; s < enc.size(); ++s) {
    out.emplace_back("enc" + std::to_string(s) + ".w", &enc[s].w);
    out.emplace_back("enc" + std::to_string(s) + ".b", &enc[s].b);
  }
  for (size_t s = 0; s < dec.size(); ++s) {
    out.emplace_back("dec" + std::to_string(s) + ".w", &dec[s].w);
    out.emplace_back("dec" + std::to_string(s) + ".b", &dec[s].b);
  }
  out.emplace_back("head.w", &head.w);
  out.emplace_back("head.b", &head.b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> DepthNet::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<DepthNet*>(this)->named_params()) out.emplace_back(name, t);
  return out;
}

std::int64_t DepthNet::param_count() const {
  std::int64_t n = 0;
  for (auto& [name, t] : named_params()) n += t->numel();
  return n;
}

Var depth_forward(Tape& tape, DepthNet& net, Var image, ParamBindings* bindings,
                  Var* encoder_out) {
  const Tensor& img = tape.value(image);
  if (img.rank() != 4 || img.dim(1) != 3)
    throw std::invalid_argument("depth_forward: image must be (1,3,H,W)");
  if (img.dim(2) % 16 != 0 || img.dim(3) % 16 != 0)
    throw std::invalid_argument("depth_forward: resolution must be divisible by 16");
  ParamBindings local;
  ParamBindings& binds = bindings ? *bindings : local;
  const bool train = bindings != nullptr;

  auto conv = [&](Var x, ConvParams& p, int stride) {
    Var w = binds.bind(tape, &p.w, train);
    Var b = binds.bind(tape, &p.b, train);
    return tape.conv2d(x, w, b, stride, 1);
  };

  Var e0 = tape.leaky_relu(conv(image, net.enc[0], 2));
  Var e1 = tape.leaky_relu(conv(e0, net.enc[1], 2));
  Var e2 = tape.leaky_relu(conv(e1, net.enc[2], 2));
  Var e3 = tape.leaky_relu(conv(e2, net.enc[3], 2));
  if (encoder_out) {
    *encoder_out = tape.reduce(ReduceKind::Mean, e3, {2, 3});  // (1,C)
  }
  Var d0 = tape.leaky_relu(conv(tape.concat_ch(tape.upsample2x(e3), e2), net.dec[0], 1));
  Var d1 = tape.leaky_relu(conv(tape.concat_ch(tape.upsample2x(d0), e1), net.dec[1], 1));
  Var d2 = tape.leaky_relu(conv(tape.concat_ch(tape.upsample2x(d1), e0), net.dec[2], 1));
  Var d3 = tape.leaky_relu(conv(tape.upsample2x(d2), net.dec[3], 1));
  Var sigma = tape.sigmoid(conv(d3, net.head, 1));  // (1,1,H,W)

  // 1/depth = 1/d_max + (1/d_min - 1/d_max) * sigma
  const float a = static_cast<float>(1.0 / net.mapping.d_min - 1.0 / net.mapping.d_max);
  const float b = static_cast<float>(1.0 / net.mapping.d_max);
  return tape.reciprocal(tape.add_scalar(tape.mul_scalar(sigma, a), b));
}

Var encoder_forward(Tape& tape, DepthNet& net, Var image, ParamBindings* bindings) {
  ParamBindings local;
  ParamBindings& binds = bindings ? *bindings : local;
  const bool train = bindings != nullptr;
  Var x = image;
  for (auto& stage : net.enc) {
    Var w = binds.bind(tape, &stage.w, train);
    Var b = binds.bind(tape, &stage.b, train);
    x = tape.leaky_relu(tape.conv2d(x, w, b, 2, 1));
  }
  return tape.reduce(ReduceKind::Mean, x, {2, 3});
}

int encoder_embed_dim() { return kDepthEnc[3]; }

PoseNet PoseNet::init(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {rng_stream::kInit, 0x905e});
  PoseNet n;
  int in_c = 6;
  for (int s = 0; s < 4; ++s) {
    n.enc.push_back(he_conv(rng, kPoseEnc[s], in_c, 3));
    in_c = kPoseEnc[s];
  }
  // Zero-initialized regressor: the initial pose is exactly the identity.
  n.fc_w = Tensor({6, kPoseEnc[3]});
  n.fc_b = Tensor({6});
  return n;
}

std::vector<std::pair<std::string, Tensor*>> PoseNet::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t s = 0; s < enc.size(); ++s) {
    out.emplace_back("pose.enc" + std::to_string(s) + ".w", &enc[s].w);
    out.emplace_back("pose.enc" + std::to_string(s) + ".b", &enc[s].b);
  }
  out.emplace_back("pose.fc.w", &fc_w);
  out.emplace_back("pose.fc.b", &fc_b);
  return out;
}

std::int64_t PoseNet::param_count() const {
  std::int64_t n = 0;
  for (auto& [name, t] : const_cast<PoseNet*>(this)->named_params()) n += t->numel();
  return n;
}

Var pose_forward_var(Tape& tape, PoseNet& net, Var pair_image, ParamBindings* bindings) {
  const Tensor& img = tape.value(pair_image);
  if (img.rank() != 4 || img.dim(1) != 6)
    throw std::invalid_argument("pose_forward: input must be (1,6,H,W)");
  ParamBindings local;
  ParamBindings& binds = bindings ? *bindings : local;
  const bool train = bindings != nullptr;
  Var x = pair_image;
  for (auto& stage : net.enc) {
    Var w = binds.bind(tape, &stage.w, train);
    Var b = binds.bind(tape, &stage.b, train);
    x = tape.leaky_relu(tape.conv2d(x, w, b, 2, 1));
  }
  Var pooled = tape.reduce(ReduceKind::Mean, x, {2, 3});  // (1,C)
  Var w = binds.bind(tape, &net.fc_w, train);
  Var b = binds.bind(tape, &net.fc_b, train);
  return tape.mul_scalar(tape.linear(pooled, w, b), 0.01f);
}

RigidTransform pose_from_vector6(const float v[6]) {
  const Mat3 r = RigidTransform::rotation_from_axis_angle(
      {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2])});
  return RigidTransform(r, {static_cast<double>(v[3]), static_cast<double>(v[4]),
                            static_cast<double>(v[5])});
}

RigidTransform pose_forward(PoseNet& net, const Tensor& i0_s, const Tensor& i0_t) {
  require_same_shape(i0_s, i0_t, "pose_forward");
  Tensor pt({1, 6, i0_s.dim(1), i0_s.dim(2)});
  std::copy_n(i0_s.data(), i0_s.numel(), pt.data());
  std::copy_n(i0_t.data(), i0_t.numel(), pt.data() + i0_s.numel());
  Tape tape;
  Var pv = pose_forward_var(tape, net, tape.constant(std::move(pt)), nullptr);
  return pose_from_vector6(tape.value(pv).data());
}

MlpHeads MlpHeads::init(std::uint64_t seed, int embed_dim) {
  Rng rng = Rng::derive(seed, {rng_stream::kInit, 0x3ad5});
  MlpHeads h;
  auto init_linear = [&](int out, int in) {
    Tensor w({out, in});
    const float bound = std::sqrt(6.0f / static_cast<float>(in));
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    return w;
  };
  h.proj_w = init_linear(128, embed_dim);
  h.proj_b = Tensor({128});
  h.pred_w1 = init_linear(64, 128);
  h.pred_b1 = Tensor({64});
  h.pred_w2 = init_linear(128, 64);
  h.pred_b2 = Tensor({128});
  return h;
}

std::vector<std::pair<std::string, Tensor*>> MlpHeads::named_params() {
  return {{"heads.proj.w", &proj_w},   {"heads.proj.b", &proj_b},
          {"heads.pred1.w", &pred_w1}, {"heads.pred1.b", &pred_b1},
          {"heads.pred2.w", &pred_w2}, {"heads.pred2.b", &pred_b2}};
}

void save_checkpoint(const std::string& path_base, const Checkpoint& ckpt) {
  NamedTensors tensors;
  for (auto& [name, t] : const_cast<Checkpoint&>(ckpt).depth.named_params())
    tensors.emplace_back(name, *t);
  if (ckpt.has_pose)
    for (auto& [name, t] : const_cast<Checkpoint&>(ckpt).pose.named_params())
      tensors.emplace_back(name, *t);
  write_tensor_container(path_base + ".dht", tensors);
  json j;
  j["arch"] = kDepthArchId;
  j["d_min"] = ckpt.depth.mapping.d_min;
  j["d_max"] = ckpt.depth.mapping.d_max;
  j["head_bias_init"] = ckpt.depth.head_bias_init;
  j["step"] = ckpt.step;
  j["has_pose"] = ckpt.has_pose;
  const std::string tmp = path_base + ".json.tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path_base + ".json");
}

Checkpoint load_checkpoint(const std::string& path_base) {
  std::ifstream is(path_base + ".json");
  if (!is) throw std::runtime_error("checkpoint: missing manifest " + path_base + ".json");
  json j;
  is >> j;
  if (j.at("arch").get<std::string>() != kDepthArchId)
    throw std::runtime_error("checkpoint: architecture mismatch in " + path_base +
                             " (want " + kDepthArchId + ")");
  Checkpoint ckpt;
  ckpt.depth = DepthNet::init(0, j.value("head_bias_init", -2.0f));
  ckpt.depth.mapping.d_min = j.at("d_min");
  ckpt.depth.mapping.d_max = j.at("d_max");
  ckpt.step = j.at("step");
  ckpt.has_pose = j.at("has_pose");
  if (ckpt.has_pose) ckpt.pose = PoseNet::init(0);
  const NamedTensors tensors = read_tensor_container(path_base + ".dht");
  auto load_into = [&](std::vector<std::pair<std::string, Tensor*>> params) {
    for (auto& [name, t] : params) {
      const Tensor& src = find_tensor(tensors, name);
      if (!src.same_shape(*t))
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
      *t = src;
    }
  };
  load_into(ckpt.depth.named_params());
  if (ckpt.has_pose) load_into(ckpt.pose.named_params());
  return ckpt;
}

Tensor nchw(const Tensor& chw_t) {
  if (chw_t.rank() != 3) throw std::invalid_argument("nchw: expected (C,H,W)");
  return Tensor({1, chw_t.dim(0), chw_t.dim(1), chw_t.dim(2)},
                std::vector<float>(chw_t.values().begin(), chw_t.values().end()));
}

Tensor chw(const Tensor& nchw_t) {
  if (nchw_t.rank() != 4 || nchw_t.dim(0) != 1)
    throw std::invalid_argument("chw: expected (1,C,H,W)");
  return Tensor({nchw_t.dim(1), nchw_t.dim(2), nchw_t.dim(3)},
                std::vector<float>(nchw_t.values().begin(), nchw_t.values().end()));
}

}  // namespace mdeh
