#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdmp/nn.hpp"

namespace cdmp {

/// Binary tensor container: magic, then (name, rows, cols, dtype, data)
/// records. Little-endian, float32 or float64 payloads.
namespace blob {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

constexpr char kMagic[8] = {'C', 'D', 'M', 'P', 'T', 'N', 'S', '1'};

template <class S>
void write_matrix(std::ostream& os, const std::string& name, const Mat<S>& m) {
  write_string(os, name);
  write_u32(os, static_cast<std::uint32_t>(m.rows()));
  write_u32(os, static_cast<std::uint32_t>(m.cols()));
  write_u32(os, sizeof(S) == 4 ? 0u : 1u);
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(S) * static_cast<std::size_t>(m.size())));
}

template <class S>
std::pair<std::string, Mat<S>> read_matrix(std::istream& is) {
  std::string name = read_string(is);
  const std::uint32_t rows = read_u32(is);
  const std::uint32_t cols = read_u32(is);
  const std::uint32_t dtype = read_u32(is);
  if (dtype != (sizeof(S) == 4 ? 0u : 1u))
    throw std::runtime_error("checkpoint: dtype mismatch for tensor " + name);
  Mat<S> m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(S) * static_cast<std::size_t>(m.size())));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
  return {std::move(name), std::move(m)};
}

}  // namespace blob

template <class S>
void save_store(const std::string& path, const ParamStore<S>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(blob::kMagic, sizeof(blob::kMagic));
  blob::write_u32(os, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i)
    blob::write_matrix(os, store.entry_at(i).name, store.entry_at(i).value);
}

/// Loads tensors into an already constructed store; names and shapes must
/// match the architecture exactly.
template <class S>
void load_store(const std::string& path, ParamStore<S>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, blob::kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t n = blob::read_u32(is);
  if (n != store.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [name, m] = blob::read_matrix<S>(is);
    auto& e = store.entry_at(i);
    if (e.name != name)
      throw std::runtime_error("checkpoint: tensor order mismatch at " + name);
    if (e.value.rows() != m.rows() || e.value.cols() != m.cols())
      throw std::runtime_error("checkpoint: shape mismatch at " + name);
    e.value = std::move(m);
  }
}

template <class S>
void save_matrices(std::ostream& os, const std::vector<Mat<S>>& mats) {
  blob::write_u32(os, static_cast<std::uint32_t>(mats.size()));
  for (std::size_t i = 0; i < mats.size(); ++i)
    blob::write_matrix(os, std::to_string(i), mats[i]);
}

template <class S>
std::vector<Mat<S>> load_matrices(std::istream& is) {
  const std::uint32_t n = blob::read_u32(is);
  std::vector<Mat<S>> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(blob::read_matrix<S>(is).second);
  return out;
}

}  // namespace cdmp
