#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsd/denoiser/network.hpp"

namespace hsd::denoiser {

inline constexpr char kCheckpointMagic[4] = {'H', 'S', 'D', 'W'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout: magic[4] | u16 version | u32 json_len | json | per layer: str name, u32 count, f32[count].
// The JSON carries the descriptor, role and ordered (name, shape) list.
std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net);
Network<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace hsd::denoiser
