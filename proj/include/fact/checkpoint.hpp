// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint of a session state. Layout is documented in
// docs/checkpoint_format.md; every value is little-endian and every double is
// stored as its IEEE-754 bit pattern, so a round trip is bitwise exact.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fact/incremental.hpp"

namespace fact {

inline constexpr std::string_view kCheckpointMagic = "FACTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  SessionState state;
  /// Canonical text of the run configuration that produced the state.
  std::string config_echo;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& cp);
/// Throws ParseError (bad magic or layout), VersionMismatch, ChecksumMismatch.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Throws IoError on filesystem failure.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fact
