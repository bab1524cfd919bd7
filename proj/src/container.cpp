#include "croma/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace croma {

namespace {

static_assert(std::endian::native == std::endian::little,
              "CRMA writer assumes a little-endian host");
static_assert(sizeof(double) == 8);

constexpr char kMagic[4] = {'C', 'R', 'M', 'A'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF64 = 0;

template <typename T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("CRMA: truncated file");
  return v;
}

}  // namespace

void write_crma(const std::string& path, const Shape& shape, const std::vector<double>& data) {
  if (numel_of(shape) != data.size())
    throw std::invalid_argument("write_crma: data length does not match shape");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_crma: cannot open " + path);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, kDtypeF64);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(e));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write_crma: write failed for " + path);
}

void write_crma(const std::string& path, const Tensor& t) {
  write_crma(path, t.shape(), t.value());
}

CrmaArray read_crma(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_crma: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("read_crma: bad magic in " + path);
  if (get<std::uint32_t>(is) != kVersion)
    throw std::runtime_error("read_crma: unsupported version in " + path);
  if (get<std::uint32_t>(is) != kDtypeF64)
    throw std::runtime_error("read_crma: unsupported dtype in " + path);
  const auto ndim = get<std::uint32_t>(is);
  CrmaArray out;
  out.shape.reserve(ndim);
  for (std::uint32_t i = 0; i < ndim; ++i)
    out.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is)));
  out.data.resize(numel_of(out.shape));
  is.read(reinterpret_cast<char*>(out.data.data()),
          static_cast<std::streamsize>(out.data.size() * sizeof(double)));
  if (!is) throw std::runtime_error("read_crma: truncated payload in " + path);
  return out;
}

}  // namespace croma
