#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mdeh/config.hpp"
#include "mdeh/container.hpp"
#include "mdeh/image.hpp"
#include "mdeh/rng.hpp"

using namespace mdeh;
namespace fs = std::filesystem;

TEST_CASE("tensor container: bit-exact round trip of random tensors") {
  const std::string path = (fs::temp_directory_path() / "mdeh_cont.dht").string();
  Rng rng(1);
  NamedTensors ts;
  Tensor a({3, 4, 5});
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-10, 10);
  Tensor b({7});
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = rng.normal();
  ts.emplace_back("alpha", a);
  ts.emplace_back("beta/with.weird-name", b);
  write_tensor_container(path, ts);
  const NamedTensors back = read_tensor_container(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "alpha");
  CHECK(back[1].first == "beta/with.weird-name");
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(back[0].second[i] == a[i]);
  for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(back[1].second[i] == b[i]);
  CHECK_THROWS(find_tensor(back, "missing"));
  fs::remove(path);
}

TEST_CASE("tensor container: empty list is valid, bad magic and truncation rejected") {
  const std::string path = (fs::temp_directory_path() / "mdeh_cont2.dht").string();
  write_tensor_container(path, {});
  CHECK(read_tensor_container(path).empty());

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "XXXX";
    std::uint32_t zero = 0;
    os.write(reinterpret_cast<const char*>(&zero), 4);
  }
  CHECK_THROWS_WITH_AS(read_tensor_container(path),
                       doctest::Contains("bad magic"), std::runtime_error);

  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "DHT1";
    std::uint32_t one = 1;
    os.write(reinterpret_cast<const char*>(&one), 4);
    std::uint16_t len = 3;
    os.write(reinterpret_cast<const char*>(&len), 2);
    os << "ab";  // truncated name
  }
  CHECK_THROWS_WITH_AS(read_tensor_container(path), doctest::Contains("truncated"),
                       std::runtime_error);
  fs::remove(path);
}

TEST_CASE("png: quantized images round trip bit-exactly") {
  const std::string path = (fs::temp_directory_path() / "mdeh_png_test.png").string();
  Rng rng(3);
  Tensor img({3, 10, 14});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.next_float();
  const Tensor q = quantized8(img);
  save_png(path, q);
  const Tensor back = load_png(path);
  REQUIRE(back.same_shape(q));
  for (std::int64_t i = 0; i < q.numel(); ++i) CHECK(back[i] == q[i]);

  // Grayscale path.
  Tensor gray({1, 6, 6});
  for (std::int64_t i = 0; i < gray.numel(); ++i) gray[i] = rng.next_float();
  save_png(path, quantized8(gray));
  CHECK(load_png(path).dim(0) == 1);
  fs::remove(path);
}

TEST_CASE("config: sections, overrides, type parsing, unknown keys") {
  KvConfig c = KvConfig::from_text(
      "# comment\n"
      "top=1\n"
      "[train]\n"
      "lr = 0.001\n"
      "steps=200\n"
      "flag = true\n"
      "[eval]\n"
      "mode=benign\n");
  c.set_override("train.lr=0.01");
  CHECK(c.get_int("top", 0) == 1);
  CHECK(c.get_double("train.lr", 0) == doctest::Approx(0.01));
  CHECK(c.get_int("train.steps", 0) == 200);
  CHECK(c.get_bool("train.flag", false));
  CHECK(c.get_str("eval.mode", "") == "benign");
  CHECK(c.get_str("eval.absent", "dflt") == "dflt");
  CHECK_NOTHROW(c.check_all_consumed());

  KvConfig d = KvConfig::from_text("[a]\nx=1\ny=2\n");
  d.get_int("a.x", 0);
  CHECK_THROWS_WITH_AS(d.check_all_consumed(), doctest::Contains("a.y"),
                       std::invalid_argument);

  CHECK_THROWS(KvConfig::from_text("not a key value line\n"));
  KvConfig e = KvConfig::from_text("[a]\nx=oops\n");
  CHECK_THROWS(e.get_double("a.x", 0));
}
