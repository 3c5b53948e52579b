#include "reengage/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace reengage::checkpoint {

namespace {

constexpr char kMagic[8] = {'G', 'C', 'R', 'L', 'C', 'P', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated stream");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write(std::ostream& os, const Contents& contents) {
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(contents.config_echo.size()));
  os.write(contents.config_echo.data(),
           static_cast<std::streamsize>(contents.config_echo.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(contents.arrays.size()));
  for (const auto& [name, m] : contents.arrays) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const bool vector_like = m.cols() == 1;
    put<std::uint8_t>(os, vector_like ? 1 : 2);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    if (!vector_like) put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

void write_file(const std::string& path, const Contents& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  write(f, contents);
}

Contents read(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Contents out;
  const auto config_len = get<std::uint32_t>(is);
  out.config_echo.resize(config_len);
  is.read(out.config_echo.data(), config_len);
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = get<std::uint8_t>(is);
    if (ndim != 1 && ndim != 2) throw std::runtime_error("checkpoint: bad ndim");
    const auto rows = static_cast<Eigen::Index>(get<std::uint64_t>(is));
    const Eigen::Index cols = ndim == 2 ? static_cast<Eigen::Index>(get<std::uint64_t>(is)) : 1;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get<double>(is);
    out.arrays.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

Contents read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  return read(f);
}

}  // namespace reengage::checkpoint
