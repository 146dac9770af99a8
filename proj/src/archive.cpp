#include "osdsr/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "osdsr/error.hpp"

namespace osdsr {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'S', 'D', 'S', 'R', 'A', 'R', '1'};

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorKind::Decode, "truncated archive " + path.string());
  }
  return v;
}

}  // namespace

void save_archive(const std::filesystem::path& path, const ArchiveEntries& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(os, entries.size());
  for (const auto& [key, t] : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(key.size()));
    os.write(key.data(), static_cast<std::streamsize>(key.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

ArchiveEntries load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::Decode, path.string() + " is not an osdsr archive");
  }
  const auto count = get<std::uint64_t>(is, path);
  ArchiveEntries out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto key_len = get<std::uint32_t>(is, path);
    std::string key(key_len, '\0');
    if (!is.read(key.data(), key_len)) throw Error(ErrorKind::Decode, "truncated archive " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw Error(ErrorKind::Decode, "implausible rank in " + path.string());
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get<std::int64_t>(is, path)));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
      throw Error(ErrorKind::Decode, "truncated archive " + path.string());
    }
    out.emplace_back(std::move(key), std::move(t));
  }
  return out;
}

const Tensor* find_entry(const ArchiveEntries& entries, const std::string& key) {
  for (const auto& [k, t] : entries) {
    if (k == key) return &t;
  }
  return nullptr;
}

}  // namespace osdsr
