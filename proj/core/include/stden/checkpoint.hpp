#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "stden/data.hpp"
#include "stden/model.hpp"

namespace stden {

/// A trained model plus what is needed to use it on raw flows.
struct Checkpoint {
  Model model;
  Normalizer normalizer;
  std::uint64_t seed = 0;
};

/// Binary layout: the line "STDEN1\n", an 8-byte little-endian manifest
/// length, a UTF-8 manifest of `key value` lines (config, then one
/// `tensor <name> <byte offset> <dims...>` line per parameter), then all
/// parameters as little-endian 64-bit reals.
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stden
