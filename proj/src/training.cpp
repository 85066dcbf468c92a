#include "mdeh/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mdeh/image.hpp"
#include "mdeh/rng.hpp"

namespace mdeh {

namespace fs = std::filesystem;

namespace {
constexpr float kSsimC1 = 0.01f * 0.01f;
constexpr float kSsimC2 = 0.03f * 0.03f;
}  // namespace

Var photometric_error_var(Tape& tape, Var i1, Var i2, const Tensor& validity_hw) {
  const Tensor& a = tape.value(i1);
  if (a.rank() != 4) throw std::invalid_argument("photometric_error: images must be (1,C,H,W)");
  require_same_shape(a, tape.value(i2), "photometric_error");
  double valid_count = 0;
  for (std::int64_t i = 0; i < validity_hw.numel(); ++i)
    if (validity_hw[i] != 0.0f) valid_count += 1;
  if (valid_count == 0) throw std::invalid_argument("photometric_error: empty validity mask");

  Var mu1 = tape.box3x3(i1);
  Var mu2 = tape.box3x3(i2);
  Var s1 = tape.sub(tape.box3x3(tape.mul(i1, i1)), tape.mul(mu1, mu1));
  Var s2 = tape.sub(tape.box3x3(tape.mul(i2, i2)), tape.mul(mu2, mu2));
  Var s12 = tape.sub(tape.box3x3(tape.mul(i1, i2)), tape.mul(mu1, mu2));
  Var num = tape.mul(tape.add_scalar(tape.mul_scalar(tape.mul(mu1, mu2), 2.0f), kSsimC1),
                     tape.add_scalar(tape.mul_scalar(s12, 2.0f), kSsimC2));
  Var den = tape.mul(
      tape.add_scalar(tape.add(tape.mul(mu1, mu1), tape.mul(mu2, mu2)), kSsimC1),
      tape.add_scalar(tape.add(s1, s2), kSsimC2));
  Var ssim = tape.div(num, den);
  Var ssim_term =
      tape.clip(tape.mul_scalar(tape.sub(tape.constant_scalar(1.0f), ssim), 0.5f), 0.0f, 1.0f);
  Var l1 = tape.abs(tape.sub(i1, i2));
  // Per-pixel channel means, then the 0.85/0.15 blend.
  Var pe_map = tape.add(tape.mul_scalar(tape.reduce(ReduceKind::Mean, ssim_term, {1}), 0.85f),
                        tape.mul_scalar(tape.reduce(ReduceKind::Mean, l1, {1}), 0.15f));
  // pe_map is (1,H,W); mask and average over valid pixels.
  Tensor mask({1, validity_hw.dim(0), validity_hw.dim(1)},
              std::vector<float>(validity_hw.values().begin(), validity_hw.values().end()));
  Var masked = tape.mul(pe_map, tape.constant(std::move(mask)));
  return tape.mul_scalar(tape.sum(masked), static_cast<float>(1.0 / valid_count));
}

double photometric_error(const Tensor& i1_chw, const Tensor& i2_chw,
                         const Tensor& validity_hw) {
  Tape tape;
  Var a = tape.constant(nchw(i1_chw));
  Var b = tape.constant(nchw(i2_chw));
  return tape.value(photometric_error_var(tape, a, b, validity_hw))[0];
}

Var warp_grid_from_depth(Tape& tape, Var depth, const RigidTransform& t_to_s,
                         const Intrinsics& k) {
  const Tensor& d = tape.value(depth);
  if (d.rank() != 4 || d.dim(1) != 1)
    throw std::invalid_argument("warp_grid_from_depth: depth must be (1,1,H,W)");
  const int h = d.dim(2), w = d.dim(3);
  // X_s = R*(D*xdir, D*ydir, D) + t = D*a + t with a = R*(xdir, ydir, 1).
  Tensor ax({1, 1, h, w}), ay({1, 1, h, w}), az({1, 1, h, w});
  const Mat3& r = t_to_s.rotation();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double xd = (x - k.cx) / k.fx, yd = (y - k.cy) / k.fy;
      ax.at4(0, 0, y, x) = static_cast<float>(r.at(0, 0) * xd + r.at(0, 1) * yd + r.at(0, 2));
      ay.at4(0, 0, y, x) = static_cast<float>(r.at(1, 0) * xd + r.at(1, 1) * yd + r.at(1, 2));
      az.at4(0, 0, y, x) = static_cast<float>(r.at(2, 0) * xd + r.at(2, 1) * yd + r.at(2, 2));
    }
  const Vec3& t = t_to_s.translation();
  Var xs = tape.add_scalar(tape.mul(depth, tape.constant(std::move(ax))),
                           static_cast<float>(t.x));
  Var ys = tape.add_scalar(tape.mul(depth, tape.constant(std::move(ay))),
                           static_cast<float>(t.y));
  Var zs = tape.add_scalar(tape.mul(depth, tape.constant(std::move(az))),
                           static_cast<float>(t.z));
  Var zc = tape.clip(zs, 1e-3f, 1e9f);
  Var u = tape.add_scalar(tape.mul_scalar(tape.div(xs, zc), static_cast<float>(k.fx)),
                          static_cast<float>(k.cx));
  Var v = tape.add_scalar(tape.mul_scalar(tape.div(ys, zc), static_cast<float>(k.fy)),
                          static_cast<float>(k.cy));
  return tape.concat_ch(u, v);
}

namespace {
// pose6 element as a broadcastable scalar var.
Var pose_component(Tape& tape, Var pose6, int index) {
  Tensor onehot({1, 6});
  onehot[index] = 1.0f;
  return tape.sum(tape.mul(pose6, tape.constant(std::move(onehot))));
}
}  // namespace

Var warp_grid_from_depth_pose(Tape& tape, Var depth, Var pose6, const Intrinsics& k) {
  const Tensor& d = tape.value(depth);
  const int h = d.dim(2), w = d.dim(3);
  Tensor xdir({1, 1, h, w}), ydir({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      xdir.at4(0, 0, y, x) = static_cast<float>((x - k.cx) / k.fx);
      ydir.at4(0, 0, y, x) = static_cast<float>((y - k.cy) / k.fy);
    }
  Var xd = tape.constant(std::move(xdir));
  Var yd = tape.constant(std::move(ydir));
  Var wx = pose_component(tape, pose6, 0);
  Var wy = pose_component(tape, pose6, 1);
  Var wz = pose_component(tape, pose6, 2);
  Var tx = pose_component(tape, pose6, 3);
  Var ty = pose_component(tape, pose6, 4);
  Var tz = pose_component(tape, pose6, 5);

  // First-order rotation around zero: R ~ I + [w]_x. The production pose path
  // uses the exact exponential map; this linearization carries the gradient.
  Var X = tape.mul(depth, xd);
  Var Y = tape.mul(depth, yd);
  Var Z = depth;
  Var xs = tape.add(tape.add(X, tape.sub(tape.mul(Z, wy), tape.mul(Y, wz))), tx);
  Var ys = tape.add(tape.add(tape.mul(X, wz), tape.sub(Y, tape.mul(Z, wx))), ty);
  Var zs = tape.add(tape.add(tape.sub(tape.mul(Y, wx), tape.mul(X, wy)), Z), tz);
  Var zc = tape.clip(zs, 1e-3f, 1e9f);
  Var u = tape.add_scalar(tape.mul_scalar(tape.div(xs, zc), static_cast<float>(k.fx)),
                          static_cast<float>(k.cx));
  Var v = tape.add_scalar(tape.mul_scalar(tape.div(ys, zc), static_cast<float>(k.fy)),
                          static_cast<float>(k.cy));
  return tape.concat_ch(u, v);
}

Tensor grid_validity(const Tape& tape, Var grid, int height, int width) {
  const Tensor& g = tape.value(grid);
  Tensor valid({height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float u = g.at4(0, 0, y, x), v = g.at4(0, 1, y, x);
      valid.at2(y, x) =
          (u >= 0 && u <= width - 1 && v >= 0 && v <= height - 1) ? 1.0f : 0.0f;
    }
  return valid;
}

double selfsup_loss_from_depth(const SynthesizedViews& views, const Tensor& depth_hw,
                               const RigidTransform& t_to_s, const Intrinsics& k) {
  Tape tape;
  Var depth = tape.constant(nchw(Tensor({1, depth_hw.dim(0), depth_hw.dim(1)},
                                        std::vector<float>(depth_hw.values().begin(),
                                                           depth_hw.values().end()))));
  Var grid = warp_grid_from_depth(tape, depth, t_to_s, k);
  const Tensor validity = grid_validity(tape, grid, k.height, k.width);
  Var ist = tape.grid_sample_bilinear(tape.constant(nchw(views.is)), grid);
  Var pe = photometric_error_var(tape, tape.constant(nchw(views.it)), ist, validity);
  return tape.value(pe)[0];
}

void TrainConfig::validate() const {
  if (methods.empty()) throw std::invalid_argument("train config: method set is empty");
  if (!(lr > 0)) throw std::invalid_argument("train config: learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (total_steps < 0) throw std::invalid_argument("train config: total steps must be >= 0");
  placements.validate();
}

TrainerState TrainerState::make(const DepthNet& start, const TrainConfig& cfg) {
  cfg.validate();
  TrainerState st;
  st.depth = start;
  st.use_pose = cfg.learned_pose;
  if (st.use_pose) st.pose = PoseNet::init(cfg.seed);
  const bool wants_ref = std::find(cfg.methods.begin(), cfg.methods.end(),
                                   TrainMethod::SupPseudo) != cfg.methods.end();
  if (wants_ref) {
    st.reference = start;  // frozen copy of the starting model
    st.has_reference = true;
  }
  const bool wants_heads = std::find(cfg.methods.begin(), cfg.methods.end(),
                                     TrainMethod::Contrastive) != cfg.methods.end();
  if (wants_heads) {
    st.heads = MlpHeads::init(cfg.seed, encoder_embed_dim());
    st.has_heads = true;
  }
  st.opt = Adam(cfg.lr);
  return st;
}

namespace {

bool has_method(const TrainConfig& cfg, TrainMethod m) {
  return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

AttackConfig attack_config_for_training(const TrainConfig& cfg, std::uint64_t step,
                                        int sample_idx) {
  AttackConfig a;
  a.norm = cfg.perturbation == PertKind::PGD ? AttackNorm::Linf : AttackNorm::L0;
  a.epsilon = cfg.epsilon;
  a.steps = cfg.attack_steps;
  a.eot_batch = cfg.attack_eot;
  a.placements = cfg.placements;
  a.placements.seed = Rng::derive(cfg.seed, {rng_stream::kAttack, step,
                                             static_cast<std::uint64_t>(sample_idx)})
                          .next_u64();
  a.seed = a.placements.seed;
  a.lr = cfg.attack_lr;
  a.pixel_loss_weight = cfg.pixel_loss_weight;
  a.lighting_match = cfg.lighting_match;
  return a;
}

Var cosine_similarity(Tape& tape, Var a, Var b) {
  Var dot = tape.sum(tape.mul(a, b));
  Var na = tape.sqrt(tape.add_scalar(tape.sum(tape.square(a)), 1e-12f));
  Var nb = tape.sqrt(tape.add_scalar(tape.sum(tape.square(b)), 1e-12f));
  return tape.div(dot, tape.mul(na, nb));
}

struct HeadsOut {
  Var z;  // projection (1,128)
  Var p;  // prediction (1,128)
};

HeadsOut heads_forward(Tape& tape, MlpHeads& heads, Var embedding, ParamBindings& binds,
                       bool train) {
  HeadsOut out;
  Var pw = binds.bind(tape, &heads.proj_w, train);
  Var pb = binds.bind(tape, &heads.proj_b, train);
  out.z = tape.linear(embedding, pw, pb);
  Var w1 = binds.bind(tape, &heads.pred_w1, train);
  Var b1 = binds.bind(tape, &heads.pred_b1, train);
  Var w2 = binds.bind(tape, &heads.pred_w2, train);
  Var b2 = binds.bind(tape, &heads.pred_b2, train);
  out.p = tape.linear(tape.leaky_relu(tape.linear(out.z, w1, b1)), w2, b2);
  return out;
}

Tensor color_jitter(const Tensor& img_chw, Rng& rng) {
  Tensor out(img_chw.shape());
  const int c = img_chw.dim(0);
  const std::int64_t plane = img_chw.numel() / c;
  for (int ch = 0; ch < c; ++ch) {
    const float gain = rng.uniform(0.8f, 1.2f);
    const float bias = rng.uniform(-0.08f, 0.08f);
    for (std::int64_t i = 0; i < plane; ++i)
      out[ch * plane + i] = std::clamp(img_chw[ch * plane + i] * gain + bias, 0.0f, 1.0f);
  }
  return out;
}

}  // namespace

LossBreakdown train_step(TrainerState& state, const std::vector<TrainSample>& batch,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (has_method(cfg, TrainMethod::SupPseudo) && !state.has_reference)
    throw std::invalid_argument("train_step: sup-pseudo needs a frozen reference model");
  if (has_method(cfg, TrainMethod::Contrastive) && !state.has_heads)
    throw std::invalid_argument("train_step: contrastive needs projection/prediction heads");

  Tape tape;
  ParamBindings binds;
  LossBreakdown breakdown;
  Var total;
  bool have_total = false;
  int usable = 0;

  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const TrainSample& sample = batch[bi];
    const std::uint64_t draw =
        static_cast<std::uint64_t>(state.step) * batch.size() + bi;
    PlacementSampler ps = cfg.placements;
    ps.seed = cfg.seed;
    const BoardPlacement placement = sample_placement(ps, *sample.asset, draw);

    // Inner loop: perturbation against the current frozen model.
    const Tensor* perturbed = nullptr;
    AdversarialObject adv;
    if (cfg.perturbation != PertKind::None && cfg.attack_steps > 0) {
      AttackConfig acfg = attack_config_for_training(cfg, static_cast<std::uint64_t>(state.step),
                                                     static_cast<int>(bi));
      // The attack sees the training placement distribution; its own EoT
      // draws placements from acfg.placements.
      try {
        adv = gen_attack(state.depth, *sample.asset, {sample.scene}, acfg);
        perturbed = &adv.image;
      } catch (const std::runtime_error&) {
        perturbed = nullptr;  // attack found no usable view; train benignly
      }
    }

    SynthesisOptions sopts;
    sopts.lighting_match = cfg.lighting_match;
    SynthesizedViews views;
    try {
      views = synthesize_pair(*sample.asset, *sample.scene, placement, perturbed, sopts);
    } catch (const std::runtime_error&) {
      continue;  // board projected outside this scene's view
    }
    ++usable;

    Var it_adv = tape.constant(nchw(views.it_adv));
    Var sample_loss;
    bool have_sample = false;
    Var depth_var;  // shared by selfsup and sup-pseudo
    bool have_depth = false;

    if (has_method(cfg, TrainMethod::SelfSup) || has_method(cfg, TrainMethod::SupPseudo)) {
      depth_var = depth_forward(tape, state.depth, it_adv, &binds);
      have_depth = true;
    }

    if (has_method(cfg, TrainMethod::SelfSup)) {
      Var grid;
      if (cfg.learned_pose) {
        Tensor pair({1, 6, sample.scene->k.height, sample.scene->k.width});
        std::copy_n(sample.scene->is.data(), sample.scene->is.numel(), pair.data());
        std::copy_n(sample.scene->it.data(), sample.scene->it.numel(),
                    pair.data() + sample.scene->is.numel());
        Var pose6 = pose_forward_var(tape, state.pose, tape.constant(std::move(pair)), &binds);
        grid = warp_grid_from_depth_pose(tape, depth_var, pose6, sample.scene->k);
      } else {
        grid = warp_grid_from_depth(tape, depth_var, sample.scene->t_to_s, sample.scene->k);
      }
      const Tensor validity = grid_validity(tape, grid, sample.scene->k.height,
                                            sample.scene->k.width);
      Var ist = tape.grid_sample_bilinear(tape.constant(nchw(views.is)), grid);
      Var pe = photometric_error_var(tape, tape.constant(nchw(views.it)), ist, validity);
      breakdown.l_p += tape.value(pe)[0];
      sample_loss = pe;
      have_sample = true;
    }

    if (has_method(cfg, TrainMethod::SupPseudo)) {
      // Pseudo-label from the frozen reference on the benign view; gradients
      // are severed by construction (plain inference, constant tensor).
      const Tensor pseudo = depth_infer(state.reference, views.it);
      Var pseudo_c = tape.constant(nchw(Tensor({1, pseudo.dim(0), pseudo.dim(1)},
                                               std::vector<float>(pseudo.values().begin(),
                                                                  pseudo.values().end()))));
      Var l_sup = tape.mean(tape.square(tape.sub(depth_var, pseudo_c)));
      breakdown.l_sup += tape.value(l_sup)[0];
      sample_loss = have_sample ? tape.add(sample_loss, l_sup) : l_sup;
      have_sample = true;
    }

    if (has_method(cfg, TrainMethod::Contrastive)) {
      Rng aug_rng = Rng::derive(cfg.seed, {rng_stream::kAugment,
                                           static_cast<std::uint64_t>(state.step), bi});
      Var it_aug = tape.constant(nchw(color_jitter(views.it, aug_rng)));
      Var emb1 = encoder_forward(tape, state.depth, it_aug, &binds);
      Var emb2 = encoder_forward(tape, state.depth, it_adv, &binds);
      HeadsOut h1 = heads_forward(tape, state.heads, emb1, binds, true);
      HeadsOut h2 = heads_forward(tape, state.heads, emb2, binds, true);
      // Stop-gradient branches: frozen copies of the projections.
      Var z1_sg = tape.constant(tape.value(h1.z));
      Var z2_sg = tape.constant(tape.value(h2.z));
      Var c1 = cosine_similarity(tape, h1.p, z2_sg);
      Var c2 = cosine_similarity(tape, h2.p, z1_sg);
      Var l_con = tape.mul_scalar(tape.add(c1, c2), -0.5f);
      breakdown.l_con += tape.value(l_con)[0];
      sample_loss = have_sample ? tape.add(sample_loss, l_con) : l_con;
      have_sample = true;
    }

    if (have_sample) {
      total = have_total ? tape.add(total, sample_loss) : sample_loss;
      have_total = true;
    }
  }

  if (!have_total) throw std::runtime_error("train_step: no usable batch element");
  Var loss = tape.mul_scalar(total, 1.0f / static_cast<float>(usable));
  tape.backward(loss);
  state.opt.step(tape, binds);
  ++state.step;

  const double inv = 1.0 / usable;
  breakdown.l_p *= inv;
  breakdown.l_sup *= inv;
  breakdown.l_con *= inv;
  breakdown.total = breakdown.l_p + breakdown.l_sup + breakdown.l_con;
  return breakdown;
}

LossBreakdown train_step_selfsup(TrainerState& state, const std::vector<TrainSample>& batch,
                                 const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.methods = {TrainMethod::SelfSup};
  return train_step(state, batch, c);
}

LossBreakdown train_step_sup_pseudo(TrainerState& state, const std::vector<TrainSample>& batch,
                                    const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.methods = {TrainMethod::SupPseudo};
  return train_step(state, batch, c);
}

LossBreakdown train_step_contrastive(TrainerState& state,
                                     const std::vector<TrainSample>& batch,
                                     const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.methods = {TrainMethod::Contrastive};
  return train_step(state, batch, c);
}

TrainResult run_training(const TrainConfig& cfg, const DepthNet& start,
                         const std::vector<const SceneSample*>& train_scenes,
                         const std::vector<const SceneSample*>& eval_scenes,
                         const std::vector<const ObjectAsset*>& assets,
                         const std::string& out_dir) {
  cfg.validate();
  if (train_scenes.empty()) throw std::invalid_argument("run_training: empty dataset");
  if (assets.empty()) throw std::invalid_argument("run_training: no assets");
  fs::create_directories(out_dir);

  TrainerState state = TrainerState::make(start, cfg);
  TrainResult result;
  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::ostringstream log;
  log.precision(8);
  log << "step,l_p,l_sup,l_con,total,benign_abse\n";

  double benign_abse = -1;
  auto benign_slice = [&]() {
    std::vector<const SceneSample*> slice;
    for (size_t i = 0; i < eval_scenes.size() && i < 8; ++i) slice.push_back(eval_scenes[i]);
    return slice;
  };
  if (!eval_scenes.empty()) benign_abse = benign_eval(state.depth, benign_slice()).abse;

  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<TrainSample> batch;
    for (int j = 0; j < cfg.batch_size; ++j) {
      const size_t idx = (static_cast<size_t>(step) * cfg.batch_size + j) % train_scenes.size();
      const size_t aidx = (static_cast<size_t>(step) + j) % assets.size();
      batch.push_back({assets[aidx], train_scenes[idx]});
    }
    const LossBreakdown lb = train_step(state, batch, cfg);
    if (!eval_scenes.empty() && cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
      benign_abse = benign_eval(state.depth, benign_slice()).abse;
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.total_steps)) {
      log << state.step << "," << lb.l_p << "," << lb.l_sup << "," << lb.l_con << ","
          << lb.total << "," << benign_abse << "\n";
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 != cfg.total_steps) {
      char name[48];
      std::snprintf(name, sizeof(name), "ckpt_step%06lld",
                    static_cast<long long>(state.step));
      Checkpoint ck;
      ck.depth = state.depth;
      ck.has_pose = state.use_pose;
      if (state.use_pose) ck.pose = state.pose;
      ck.step = state.step;
      const std::string base = (fs::path(out_dir) / name).string();
      save_checkpoint(base, ck);
      result.checkpoint_paths.push_back(base);
    }
  }

  Checkpoint final_ck;
  final_ck.depth = state.depth;
  final_ck.has_pose = state.use_pose;
  if (state.use_pose) final_ck.pose = state.pose;
  final_ck.step = state.step;
  const std::string final_base = (fs::path(out_dir) / "ckpt_final").string();
  save_checkpoint(final_base, final_ck);
  result.checkpoint_paths.push_back(final_base);
  result.final_checkpoint = final_ck;

  const std::string tmp = log_path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("run_training: cannot write " + tmp);
    os << log.str();
  }
  fs::rename(tmp, log_path);
  result.log_path = log_path;
  return result;
}

}  // namespace mdeh
