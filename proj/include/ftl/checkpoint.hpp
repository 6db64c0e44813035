#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ftl/training.hpp"

namespace ftl {

// Binary checkpoint container.
//
//   magic   8 bytes  "FTLCKPT\0"
//   version u32
//   length  u64      payload byte count
//   payload          model config, parameters (name, shape, flags, values), optimizer
//                    moments, counters, generator state, run metadata
//   crc32   u32      over the payload
//
// Integers are little-endian; doubles are stored as their IEEE-754 bit patterns, so a
// load/save cycle is bit-exact.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace ftl
