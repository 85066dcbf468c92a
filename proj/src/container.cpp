#include "mdeh/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace mdeh {

namespace {
constexpr char kMagic[4] = {'D', 'H', 'T', '1'};
constexpr std::uint32_t kMaxDim = 1u << 28;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("tensor container: truncated file " + path);
  return v;
}
}  // namespace

void write_tensor_container(const std::string& path, const NamedTensors& tensors) {
  const std::string tmp = path + ".tmp";
  std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("tensor container: cannot open " + tmp);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff)
      throw std::invalid_argument("tensor container: name too long: " + name);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  os.close();
  if (!os) throw std::runtime_error("tensor container: write failure for " + path);
  std::filesystem::rename(tmp, path);
}

NamedTensors read_tensor_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("tensor container: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor container: bad magic in " + path);
  const auto count = get<std::uint32_t>(is, path);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("tensor container: truncated file " + path);
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw std::runtime_error("tensor container: implausible rank in " + path);
    std::vector<int> shape(rank);
    std::int64_t n = 1;
    for (auto& d : shape) {
      const auto dim = get<std::uint32_t>(is, path);
      if (dim > kMaxDim) throw std::runtime_error("tensor container: dimension overflow in " + path);
      d = static_cast<int>(dim);
      n *= d;
    }
    std::vector<float> data(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw std::runtime_error("tensor container: truncated file " + path);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("tensor container: missing tensor " + name);
}

}  // namespace mdeh
