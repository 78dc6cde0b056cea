#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hvt/params.hpp"

namespace hvt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named parameter tensors plus optional auxiliary state (optimizer moments, EMA
/// shadow, ...) and the text of the configuration that produced them.
struct Checkpoint {
    std::string config_text;
    ParamSet params;
    ParamSet state;
};

/// Layout, little-endian throughout:
///   "HVTCKPT1" | u32 version | u64 config length | config bytes
///   u64 entry count | entries: u8 group (0 params, 1 state) | u32 name length | name
///                              | u8 dtype (0 f32, 1 f64) | u32 rank | u64 dims[rank] | u64 payload offset
///   u64 payload length | payload | u32 CRC-32 of the payload
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws BadMagicError, VersionError, ChecksumError or FormatError.
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `target` by name. Every tensor of `target` must be
/// present with the same shape, otherwise ManifestError lists the first mismatch.
/// Dtypes are converted when they differ.
void load_params_into(const ParamSet& source, ParamSet& target);

} // namespace hvt
