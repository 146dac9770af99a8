#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "osdsr/tensor.hpp"

namespace osdsr {

// Ordered key -> array archive.
//
// Layout (all integers little-endian):
//   magic     8 bytes  "OSDSRAR1"
//   count     u64
//   per entry:
//     key_len u32, key bytes (UTF-8)
//     rank    u32, dims i64[rank]
//     data    f64[numel], IEEE-754 binary64
//
// Entries are written in insertion order, so identical contents give
// identical bytes.
using ArchiveEntries = std::vector<std::pair<std::string, Tensor>>;

void save_archive(const std::filesystem::path& path, const ArchiveEntries& entries);
ArchiveEntries load_archive(const std::filesystem::path& path);
const Tensor* find_entry(const ArchiveEntries& entries, const std::string& key);

}  // namespace osdsr
