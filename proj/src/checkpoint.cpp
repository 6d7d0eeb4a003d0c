#include "rfo/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rfo {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'O', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void save_tensors(const std::string& path, const ParamSet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(set.tensors.size()));
  for (const auto& t : set.tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    bool vec = t.value.cols() == 1;
    put_u32(os, vec ? 1u : 2u);
    put_u32(os, static_cast<std::uint32_t>(t.value.rows()));
    if (!vec) put_u32(os, static_cast<std::uint32_t>(t.value.cols()));
    for (long i = 0; i < t.value.rows(); ++i)
      for (long j = 0; j < t.value.cols(); ++j) put_f64(os, t.value(i, j));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

ParamSet load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in " + path);
  std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  std::uint32_t count = get_u32(is);
  ParamSet set;
  set.tensors.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t nlen = get_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint32_t rank = get_u32(is);
    if (rank < 1 || rank > 2) throw std::runtime_error("bad rank in " + path);
    std::uint32_t rows = get_u32(is);
    std::uint32_t cols = rank == 2 ? get_u32(is) : 1;
    Mat m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = get_f64(is);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    set.tensors.push_back({std::move(name), std::move(m)});
  }
  return set;
}

}  // namespace rfo
