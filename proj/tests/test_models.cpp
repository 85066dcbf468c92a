#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mdeh/models.hpp"
#include "mdeh/rng.hpp"

using namespace mdeh;
namespace fs = std::filesystem;

namespace {
Tensor random_image(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({c, h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.next_float();
  return t;
}
}  // namespace

TEST_CASE("disp_to_depth endpoints and worked value") {
  DispDepthMapping m;
  CHECK(m.to_depth(1e-7) == doctest::Approx(100.0).epsilon(1e-4));
  CHECK(m.to_depth(1.0 - 1e-7) == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(m.to_depth(0.5) == doctest::Approx(0.19980).epsilon(1e-4));
  CHECK_THROWS(m.to_depth(0.0));
  CHECK_THROWS(m.to_depth(1.0));
  CHECK_THROWS(m.to_depth(-0.3));
}

TEST_CASE("depth_forward: shape, range, and resolution contract") {
  DepthNet net = DepthNet::init(1);
  const Tensor img = random_image(3, 32, 48, 2);
  Tape tape;
  Var out = depth_forward(tape, net, tape.constant(nchw(img)), nullptr);
  const Tensor& d = tape.value(out);
  CHECK(d.dim(2) == 32);
  CHECK(d.dim(3) == 48);
  for (std::int64_t i = 0; i < d.numel(); ++i) {
    CHECK(d[i] > 0.1f);
    CHECK(d[i] < 100.0f);
  }
  Tape t2;
  CHECK_THROWS(depth_forward(t2, net, t2.constant(nchw(random_image(3, 30, 48, 3))), nullptr));
}

TEST_CASE("depth_forward is deterministic for fixed parameters and input") {
  DepthNet net = DepthNet::init(4);
  const Tensor img = random_image(3, 16, 32, 5);
  Tape a, b;
  Var va = depth_forward(a, net, a.constant(nchw(img)), nullptr);
  Var vb = depth_forward(b, net, b.constant(nchw(img)), nullptr);
  for (std::int64_t i = 0; i < a.value(va).numel(); ++i)
    CHECK(a.value(va)[i] == b.value(vb)[i]);
}

TEST_CASE("parameter count stays inside the desk-scale budget") {
  DepthNet net = DepthNet::init(6);
  PoseNet pose = PoseNet::init(6);
  CHECK(net.param_count() + pose.param_count() <= 2000000);
  CHECK(net.param_count() > 1000);
}

TEST_CASE("depth gradient w.r.t. parameters matches finite differences on 16x16") {
  DepthNet net = DepthNet::init(7);
  const Tensor img = random_image(3, 16, 16, 8);

  Tape tape;
  ParamBindings binds;
  Var out = depth_forward(tape, net, tape.constant(nchw(img)), &binds);
  Var loss = tape.mean(out);
  tape.backward(loss);

  // Probe a few coordinates across several parameter tensors.
  auto loss_at = [&]() {
    Tape t;
    Var o = depth_forward(t, net, t.constant(nchw(img)), nullptr);
    return static_cast<double>(t.value(t.mean(o))[0]);
  };
  Rng rng(9);
  int probes = 0;
  for (auto& [param, var] : binds.items) {
    if (probes >= 8) break;
    const Tensor& g = tape.grad(var);
    const std::int64_t idx = static_cast<std::int64_t>(rng.next_below(
        static_cast<std::uint64_t>(param->numel())));
    const float orig = (*param)[idx];
    const double h = 1e-2;
    (*param)[idx] = static_cast<float>(orig + h);
    const double up = loss_at();
    (*param)[idx] = static_cast<float>(orig - h);
    const double dn = loss_at();
    (*param)[idx] = orig;
    const double fd = (up - dn) / (2 * h);
    if (std::fabs(fd) < 1e-4) continue;  // skip near-dead coordinates
    CHECK(std::fabs(g[idx] - fd) <= 1e-2 * (1.0 + std::fabs(fd)));
    ++probes;
  }
  CHECK(probes >= 4);
}

TEST_CASE("pose_forward: zero regressor gives the identity transform") {
  PoseNet net = PoseNet::init(10);
  const Tensor i0s = random_image(3, 32, 48, 11);
  const Tensor i0t = random_image(3, 32, 48, 12);
  const RigidTransform t = pose_forward(net, i0s, i0t);
  // Final layer is zero-initialized.
  CHECK(t.orthonormality_error() <= 1e-6);
  CHECK(std::fabs(t.translation().x) <= 1e-6);
  CHECK(std::fabs(t.rotation().at(0, 1)) <= 1e-6);
}

TEST_CASE("pose_from_vector6: Rodrigues oracle for a 90-degree rotation about z") {
  const float v[6] = {0, 0, static_cast<float>(M_PI / 2), 0, 0, 0};
  const RigidTransform t = pose_from_vector6(v);
  CHECK(t.rotation().at(0, 0) == doctest::Approx(0).epsilon(1e-6));
  CHECK(t.rotation().at(0, 1) == doctest::Approx(-1));
  CHECK(t.rotation().at(1, 0) == doctest::Approx(1));
  CHECK(t.rotation().at(1, 1) == doctest::Approx(0).epsilon(1e-6));
  CHECK(t.rotation().at(2, 2) == doctest::Approx(1));
  CHECK(t.orthonormality_error() <= 1e-5);
}

TEST_CASE("pose output always satisfies the orthonormality invariant") {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    float v[6];
    for (float& x : v) x = rng.uniform(-2.0f, 2.0f);
    CHECK(pose_from_vector6(v).orthonormality_error() <= 1e-5);
  }
}

TEST_CASE("checkpoint round trip is bit-exact and validates the architecture id") {
  const std::string base = (fs::temp_directory_path() / "mdeh_ckpt_test").string();
  Checkpoint ck;
  ck.depth = DepthNet::init(21, -3.0f);
  ck.step = 123;
  ck.has_pose = true;
  ck.pose = PoseNet::init(22);
  save_checkpoint(base, ck);
  Checkpoint lo = load_checkpoint(base);
  CHECK(lo.step == 123);
  CHECK(lo.has_pose);
  auto a = ck.depth.named_params();
  auto b = lo.depth.named_params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].second->numel() == b[i].second->numel());
    for (std::int64_t j = 0; j < a[i].second->numel(); ++j)
      CHECK((*a[i].second)[j] == (*b[i].second)[j]);
  }

  // Architecture mismatch is rejected.
  {
    std::ofstream os(base + ".json");
    os << "{\"arch\":\"other-net\",\"d_min\":0.1,\"d_max\":100.0,\"step\":0,"
          "\"has_pose\":false}\n";
  }
  CHECK_THROWS(load_checkpoint(base));
  fs::remove(base + ".dht");
  fs::remove(base + ".json");
}

TEST_CASE("encoder_forward emits the pooled embedding") {
  DepthNet net = DepthNet::init(23);
  Tape tape;
  Var emb = encoder_forward(tape, net, tape.constant(nchw(random_image(3, 32, 48, 24))),
                            nullptr);
  CHECK(tape.value(emb).rank() == 2);
  CHECK(tape.value(emb).dim(1) == encoder_embed_dim());
}
