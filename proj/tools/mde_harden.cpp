// mde-harden: synth / attack / train / eval / transfer / gen-data driver.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mdeh/asset.hpp"
#include "mdeh/attacks.hpp"
#include "mdeh/config.hpp"
#include "mdeh/image.hpp"
#include "mdeh/metrics.hpp"
#include "mdeh/models.hpp"
#include "mdeh/scene.hpp"
#include "mdeh/synthesis.hpp"
#include "mdeh/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mdeh;

namespace {

struct RunContext {
  KvConfig cfg;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string command;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write_resolved() const {
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "config.resolved.txt").string();
    const std::string tmp = path + ".tmp";
    std::ofstream os(tmp, std::ios::trunc);
    os << "command=" << command << "\nseed=" << seed << "\n" << cfg.resolved_text();
    os.close();
    fs::rename(tmp, path);
  }

  void write_summary(const json& metrics, const std::vector<std::string>& outputs) const {
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = json::object();
    for (const auto& [k, v] : cfg.entries()) j["config"][k] = v;
    j["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    j["metrics"] = metrics;
    j["outputs"] = outputs;
    const std::string path = (fs::path(out_dir) / "run_summary.json").string();
    const std::string tmp = path + ".tmp";
    std::ofstream os(tmp, std::ios::trunc);
    os << j.dump(2) << "\n";
    os.close();
    fs::rename(tmp, path);
  }
};

SyntheticSceneSpec scene_spec_from(KvConfig& c) {
  SyntheticSceneSpec s;
  s.width = c.get_int("data.width", s.width);
  s.height = c.get_int("data.height", s.height);
  s.fx = c.get_double("data.fx", s.fx);
  s.fy = c.get_double("data.fy", s.fy);
  s.cx = c.get_double("data.cx", s.cx);
  s.cy = c.get_double("data.cy", s.cy);
  s.baseline_m = c.get_double("data.baseline", s.baseline_m);
  s.ground_height_m = c.get_double("data.ground_height", s.ground_height_m);
  s.wall_z_m = c.get_double("data.wall_z", s.wall_z_m);
  s.quad_count = c.get_int("data.quad_count", s.quad_count);
  s.quad_depth_min = c.get_double("data.quad_depth_min", s.quad_depth_min);
  s.quad_depth_max = c.get_double("data.quad_depth_max", s.quad_depth_max);
  s.fog_distance_m = c.get_double("data.fog_distance", s.fog_distance_m);
  return s;
}

struct LoadedScenes {
  std::vector<SceneSample> storage;
  std::vector<const SceneSample*> all, train, eval;
};

LoadedScenes load_dataset(const std::string& dir, int limit = 0) {
  LoadedScenes out;
  const auto dirs = dataset_scene_dirs(dir);
  const size_t n = limit > 0 ? std::min<size_t>(dirs.size(), static_cast<size_t>(limit))
                             : dirs.size();
  out.storage.reserve(n);
  for (size_t i = 0; i < n; ++i) out.storage.push_back(load_scene(dirs[i]));
  for (size_t i = 0; i < out.storage.size(); ++i) {
    out.all.push_back(&out.storage[i]);
    // Train/eval split by index parity.
    (i % 2 == 0 ? out.train : out.eval).push_back(&out.storage[i]);
  }
  return out;
}

AttackConfig attack_config_from(KvConfig& c, std::uint64_t seed, const std::string& section) {
  AttackConfig a;
  a.norm = attack_norm_from_name(c.get_str(section + ".norm", "l0"));
  a.epsilon = static_cast<float>(c.get_double(section + ".epsilon", 0.1));
  a.steps = c.get_int(section + ".steps", 1000);
  a.step_size = static_cast<float>(c.get_double(section + ".step_size", 0.0));
  a.eot_batch = c.get_int(section + ".eot_batch", 4);
  a.placements.dist_min = c.get_double(section + ".dist_min", 5.0);
  a.placements.dist_max = c.get_double(section + ".dist_max", 30.0);
  a.placements.angle_max_deg = c.get_double(section + ".angle_max", 30.0);
  a.placements.seed = seed;
  a.seed = seed;
  a.lr = static_cast<float>(c.get_double(section + ".lr", 0.05));
  a.maxp = static_cast<float>(c.get_double(section + ".maxp", 1.0));
  a.gamma = static_cast<float>(c.get_double(section + ".gamma", 0.05));
  a.pixel_loss_weight = static_cast<float>(c.get_double(section + ".pixel_weight", 2e-4));
  a.whole_image_mse = c.get_bool(section + ".whole_image_mse", false);
  a.lighting_match = c.get_bool(section + ".lighting", true);
  return a;
}

json report_json(const MetricReport& r) {
  return json{{"abse", r.abse}, {"rmse", r.rmse},     {"absr", r.absr},
              {"sqr", r.sqr},   {"delta", r.delta},   {"samples", r.sample_count},
              {"pixels", r.pixel_count}};
}

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  std::ofstream os(tmp, std::ios::trunc);
  os << text;
  os.close();
  fs::rename(tmp, path);
}

int cmd_gen_data(RunContext& ctx) {
  const int count = ctx.cfg.get_int("data.count", 200);
  const int asset_count = ctx.cfg.get_int("data.assets", 2);
  const SyntheticSceneSpec spec = scene_spec_from(ctx.cfg);
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();
  generate_dataset(spec, count, ctx.seed, ctx.out_dir);
  std::vector<std::string> outputs{ctx.out_dir};
  for (int i = 0; i < asset_count; ++i) {
    const ObjectAsset a = make_procedural_asset(ctx.seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "asset_%02d", i);
    const std::string dir = (fs::path(ctx.out_dir) / "assets" / name).string();
    save_asset(dir, a);
    outputs.push_back(dir);
  }
  ctx.write_summary({{"scenes", count}, {"assets", asset_count}}, outputs);
  std::cout << "gen-data: " << count << " scenes, " << asset_count << " assets -> "
            << ctx.out_dir << "\n";
  return kExitOk;
}

ObjectAsset asset_from(KvConfig& c, const std::string& key, std::uint64_t seed) {
  const std::string dir = c.get_str(key, "");
  if (dir.empty()) return make_procedural_asset(seed);
  return load_asset(dir);
}

int cmd_synth(RunContext& ctx) {
  const std::string dataset = ctx.cfg.get_str("synth.dataset", "");
  if (dataset.empty()) throw std::invalid_argument("synth.dataset is required");
  const int scene_idx = ctx.cfg.get_int("synth.scene", 0);
  const ObjectAsset asset = asset_from(ctx.cfg, "synth.asset", ctx.seed);
  const double distance = ctx.cfg.get_double("synth.distance", 7.0);
  const double angle = ctx.cfg.get_double("synth.angle", 10.0);
  const std::string adv_png = ctx.cfg.get_str("synth.adversarial", "");
  SynthesisOptions opts;
  opts.lighting_match = ctx.cfg.get_bool("synth.lighting", true);
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();

  const auto dirs = dataset_scene_dirs(dataset);
  if (scene_idx < 0 || static_cast<size_t>(scene_idx) >= dirs.size())
    throw std::invalid_argument("synth.scene index out of range");
  const SceneSample scene = load_scene(dirs[static_cast<size_t>(scene_idx)]);

  BoardPlacement placement;
  placement.z_c = distance;
  placement.alpha_rad = angle * M_PI / 180.0;
  placement.phys_w = asset.phys_w;
  placement.phys_h = asset.phys_h;
  placement.pix_w = asset.pix_w();
  placement.pix_h = asset.pix_h();

  Tensor adv;
  const Tensor* pert = nullptr;
  if (!adv_png.empty()) {
    adv = load_png(adv_png);
    pert = &adv;
  }
  const SynthesizedViews views = synthesize_pair(asset, scene, placement, pert, opts);
  save_png((fs::path(ctx.out_dir) / "it.png").string(), views.it);
  save_png((fs::path(ctx.out_dir) / "is.png").string(), views.is);
  save_png((fs::path(ctx.out_dir) / "it_adv.png").string(), views.it_adv);
  Tensor m3({1, views.object_mask.dim(0), views.object_mask.dim(1)},
            std::vector<float>(views.object_mask.values().begin(),
                               views.object_mask.values().end()));
  save_png((fs::path(ctx.out_dir) / "object_mask.png").string(), m3);
  ctx.write_summary({{"object_pixels", views.object_pixels},
                     {"lighting_gain", views.lighting_gain}},
                    {ctx.out_dir});
  std::cout << "synth: object covers " << views.object_pixels << " px, gain "
            << views.lighting_gain << "\n";
  return kExitOk;
}

int cmd_attack(RunContext& ctx) {
  const std::string ckpt = ctx.cfg.get_str("attack.checkpoint", "");
  const std::string dataset = ctx.cfg.get_str("attack.dataset", "");
  if (ckpt.empty() || dataset.empty())
    throw std::invalid_argument("attack.checkpoint and attack.dataset are required");
  const ObjectAsset asset = asset_from(ctx.cfg, "attack.asset", ctx.seed);
  const int scene_limit = ctx.cfg.get_int("attack.scene_limit", 24);
  AttackConfig acfg = attack_config_from(ctx.cfg, ctx.seed, "attack");
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();

  Checkpoint model = load_checkpoint(ckpt);
  LoadedScenes scenes = load_dataset(dataset, scene_limit);
  const AdversarialObject adv = gen_attack(model.depth, asset, scenes.train, acfg);
  const std::string base = (fs::path(ctx.out_dir) / "adversarial").string();
  save_adversarial(base, adv, acfg);
  ctx.write_summary({{"l0_fraction", adv.achieved.l0_fraction},
                     {"linf", adv.achieved.linf},
                     {"l2", adv.achieved.l2}},
                    {base + ".png", base + ".json"});
  std::cout << "attack: " << attack_norm_name(adv.norm) << " eps " << adv.epsilon
            << " achieved l0=" << adv.achieved.l0_fraction << " linf=" << adv.achieved.linf
            << " l2=" << adv.achieved.l2 << "\n";
  return kExitOk;
}

std::vector<TrainMethod> parse_methods(const std::string& s) {
  std::vector<TrainMethod> out;
  std::string token;
  std::istringstream is(s);
  while (std::getline(is, token, '+')) {
    if (token == "selfsup") out.push_back(TrainMethod::SelfSup);
    else if (token == "sup-pseudo" || token == "sup") out.push_back(TrainMethod::SupPseudo);
    else if (token == "contrastive") out.push_back(TrainMethod::Contrastive);
    else throw std::invalid_argument("unknown training method: " + token);
  }
  return out;
}

int cmd_train(RunContext& ctx) {
  const std::string dataset = ctx.cfg.get_str("train.dataset", "");
  if (dataset.empty()) throw std::invalid_argument("train.dataset is required");
  const std::string ckpt = ctx.cfg.get_str("train.checkpoint", "");
  TrainConfig tcfg;
  tcfg.methods = parse_methods(ctx.cfg.get_str("train.methods", "selfsup"));
  const std::string pert = ctx.cfg.get_str("train.perturbation", "l0");
  tcfg.perturbation = pert == "none" ? PertKind::None
                      : pert == "pgd" ? PertKind::PGD
                      : pert == "l0" ? PertKind::L0
                      : throw std::invalid_argument("train.perturbation must be l0|pgd|none");
  tcfg.epsilon = static_cast<float>(ctx.cfg.get_double("train.epsilon", 0.1));
  tcfg.attack_steps = ctx.cfg.get_int("train.attack_steps", 10);
  tcfg.attack_eot = ctx.cfg.get_int("train.attack_eot", 1);
  tcfg.attack_lr = static_cast<float>(ctx.cfg.get_double("train.attack_lr", 0.05));
  tcfg.pixel_loss_weight = static_cast<float>(ctx.cfg.get_double("train.pixel_weight", 2e-4));
  tcfg.lr = static_cast<float>(ctx.cfg.get_double("train.lr", 1e-4));
  tcfg.batch_size = ctx.cfg.get_int("train.batch", 2);
  tcfg.total_steps = ctx.cfg.get_int("train.steps", 2000);
  tcfg.learned_pose = ctx.cfg.get_bool("train.learned_pose", false);
  tcfg.placements.dist_min = ctx.cfg.get_double("train.dist_min", 5.0);
  tcfg.placements.dist_max = ctx.cfg.get_double("train.dist_max", 10.0);
  tcfg.placements.angle_max_deg = ctx.cfg.get_double("train.angle_max", 30.0);
  tcfg.seed = ctx.seed;
  tcfg.from_scratch = ctx.cfg.get_bool("train.from_scratch", ckpt.empty());
  tcfg.lighting_match = ctx.cfg.get_bool("train.lighting", true);
  tcfg.log_every = ctx.cfg.get_int("train.log_every", 10);
  tcfg.eval_every = ctx.cfg.get_int("train.eval_every", 250);
  tcfg.checkpoint_every = ctx.cfg.get_int("train.checkpoint_every", 0);
  const int scene_limit = ctx.cfg.get_int("train.scene_limit", 0);
  const std::string asset_dirs = ctx.cfg.get_str("train.assets", "");
  const float head_bias = static_cast<float>(ctx.cfg.get_double("train.head_bias", -4.0));
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();

  LoadedScenes scenes = load_dataset(dataset, scene_limit);
  DepthNet start = ckpt.empty() ? DepthNet::init(ctx.seed, head_bias)
                                : load_checkpoint(ckpt).depth;

  std::vector<ObjectAsset> assets;
  if (asset_dirs.empty()) {
    assets.push_back(make_procedural_asset(ctx.seed));
  } else {
    std::istringstream is(asset_dirs);
    std::string dir;
    while (std::getline(is, dir, ',')) assets.push_back(load_asset(dir));
  }
  std::vector<const ObjectAsset*> asset_ptrs;
  for (const auto& a : assets) asset_ptrs.push_back(&a);

  const TrainResult res =
      run_training(tcfg, start, scenes.train, scenes.eval, asset_ptrs, ctx.out_dir);
  MetricReport benign;
  if (!scenes.eval.empty()) {
    DepthNet final_net = res.final_checkpoint.depth;
    benign = benign_eval(final_net, scenes.eval);
  }
  ctx.write_summary({{"benign", report_json(benign)}, {"steps", tcfg.total_steps}},
                    res.checkpoint_paths);
  std::cout << "train: " << tcfg.total_steps << " steps -> " << res.checkpoint_paths.back()
            << " (benign abse " << benign.abse << ")\n";
  return kExitOk;
}

int cmd_eval(RunContext& ctx) {
  const std::string ckpt = ctx.cfg.get_str("eval.checkpoint", "");
  const std::string dataset = ctx.cfg.get_str("eval.dataset", "");
  if (ckpt.empty() || dataset.empty())
    throw std::invalid_argument("eval.checkpoint and eval.dataset are required");
  const std::string mode = ctx.cfg.get_str("eval.mode", "attack");
  const ObjectAsset asset = asset_from(ctx.cfg, "eval.asset", ctx.seed);
  EvalProtocol protocol;
  protocol.scene_count = ctx.cfg.get_int("eval.scenes", 100);
  protocol.placements.dist_min = ctx.cfg.get_double("eval.dist_min", 5.0);
  protocol.placements.dist_max = ctx.cfg.get_double("eval.dist_max", 30.0);
  protocol.placements.angle_max_deg = ctx.cfg.get_double("eval.angle_max", 30.0);
  protocol.placements.seed = ctx.seed;
  protocol.seed = ctx.seed;
  protocol.lighting_match = ctx.cfg.get_bool("eval.lighting", true);
  AttackConfig acfg = attack_config_from(ctx.cfg, ctx.seed, "eval.attack");
  const int scene_limit = ctx.cfg.get_int("eval.scene_limit", 0);
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();

  Checkpoint model = load_checkpoint(ckpt);
  LoadedScenes scenes = load_dataset(dataset, scene_limit);

  MetricReport report;
  std::string label;
  if (mode == "benign") {
    report = benign_eval(model.depth, scenes.eval.empty() ? scenes.all : scenes.eval);
    label = "benign";
  } else if (mode == "attack") {
    report = evaluate_attack(model.depth, asset, acfg,
                             scenes.eval.empty() ? scenes.all : scenes.eval, protocol);
    label = std::string(attack_norm_name(acfg.norm)) + "_eps" + std::to_string(acfg.epsilon);
  } else {
    throw std::invalid_argument("eval.mode must be attack|benign");
  }
  const std::string csv = (fs::path(ctx.out_dir) / "report.csv").string();
  write_text(csv, report_csv_header() + "\n" + report_csv_row(label, report) + "\n");
  ctx.write_summary({{"report", report_json(report)}, {"mode", mode}}, {csv});
  std::cout << "eval(" << label << "): abse " << report.abse << " delta " << report.delta
            << " over " << report.sample_count << " samples\n";
  return kExitOk;
}

int cmd_transfer(RunContext& ctx) {
  const std::string list = ctx.cfg.get_str("transfer.checkpoints", "");
  const std::string dataset = ctx.cfg.get_str("transfer.dataset", "");
  if (list.empty() || dataset.empty())
    throw std::invalid_argument("transfer.checkpoints and transfer.dataset are required");
  const ObjectAsset asset = asset_from(ctx.cfg, "transfer.asset", ctx.seed);
  EvalProtocol protocol;
  protocol.scene_count = ctx.cfg.get_int("transfer.scenes", 50);
  protocol.placements.dist_min = ctx.cfg.get_double("transfer.dist_min", 5.0);
  protocol.placements.dist_max = ctx.cfg.get_double("transfer.dist_max", 30.0);
  protocol.placements.angle_max_deg = ctx.cfg.get_double("transfer.angle_max", 30.0);
  protocol.placements.seed = ctx.seed;
  protocol.seed = ctx.seed;
  AttackConfig acfg = attack_config_from(ctx.cfg, ctx.seed, "transfer.attack");
  const int scene_limit = ctx.cfg.get_int("transfer.scene_limit", 0);
  ctx.cfg.check_all_consumed();
  ctx.write_resolved();

  std::vector<Checkpoint> ckpts;
  std::vector<std::string> names;
  {
    std::istringstream is(list);
    std::string path;
    while (std::getline(is, path, ',')) {
      ckpts.push_back(load_checkpoint(path));
      names.push_back(fs::path(path).filename().string());
    }
  }
  LoadedScenes scenes = load_dataset(dataset, scene_limit);
  std::vector<DepthNet*> models;
  for (auto& c : ckpts) models.push_back(&c.depth);
  const TransferMatrix m = transfer_matrix(models, names, asset, acfg,
                                           scenes.eval.empty() ? scenes.all : scenes.eval,
                                           protocol);
  const std::string csv = (fs::path(ctx.out_dir) / "transfer_matrix.csv").string();
  write_transfer_csv(csv, m);
  ctx.write_summary({{"models", names}}, {csv});
  std::cout << "transfer: " << names.size() << "x" << names.size() << " matrix -> " << csv
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised adversarial hardening of monocular depth estimation"};
  app.require_subcommand(1);
  std::string config_path, out_dir = "out";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", overrides, "override: section.key=value");
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out_dir, "output directory");

  const std::vector<std::pair<std::string, int (*)(RunContext&)>> commands = {
      {"gen-data", &cmd_gen_data}, {"synth", &cmd_synth},       {"attack", &cmd_attack},
      {"train", &cmd_train},       {"eval", &cmd_eval},         {"transfer", &cmd_transfer},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);

  RunContext ctx;
  try {
    if (!config_path.empty()) ctx.cfg = KvConfig::from_file(config_path);
    for (const auto& o : overrides) ctx.cfg.set_override(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "{\"error\":\"config\",\"message\":\"" << e.what() << "\"}\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"io\",\"message\":\"" << e.what() << "\"}\n";
    return kExitIo;
  }
  ctx.seed = seed;
  ctx.out_dir = out_dir;

  try {
    for (const auto& [name, fn] : commands) {
      if (app.got_subcommand(name)) {
        ctx.command = name;
        return fn(ctx);
      }
    }
    std::cerr << "{\"error\":\"config\",\"message\":\"no subcommand\"}\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "{\"error\":\"config\",\"message\":\"" << e.what() << "\"}\n";
    return kExitConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "{\"error\":\"numeric\",\"message\":\"" << e.what() << "\"}\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"io\",\"message\":\"" << e.what() << "\"}\n";
    return kExitIo;
  }
}
