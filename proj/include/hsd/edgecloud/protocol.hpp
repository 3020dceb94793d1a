#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsd/core/bytes.hpp"
#include "hsd/diffusion/sampler.hpp"
#include "hsd/hybrid/handoff.hpp"

namespace hsd::edgecloud {

inline constexpr std::array<std::uint8_t, 4> kMagic{'H', 'Y', 'S', 'D'};
inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 4;
inline constexpr std::uint32_t kMaxPayload = 16u << 20;

enum class MessageType : std::uint8_t {
  hello = 1,
  generate_request = 2,
  handoff = 3,
  img2img_request = 4,
  error = 5,
  done = 6,
};

std::string to_string(MessageType type);
bool is_known_type(std::uint8_t raw);

/// Frame whose header carries a protocol version this build does not speak.
class VersionError : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

struct Frame {
  MessageType type = MessageType::hello;
  std::vector<std::uint8_t> payload;

  bool operator==(const Frame&) const = default;
};

struct FrameHeader {
  std::uint16_t version = kProtocolVersion;
  MessageType type = MessageType::hello;
  std::uint32_t length = 0;
};

/// magic | u16 version | u8 type | u32 length | payload, little-endian.
std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Validates magic, version, type and length bound. Throws DecodeError / VersionError.
FrameHeader parse_header(std::span<const std::uint8_t> header);

/// Decodes exactly one frame occupying the whole buffer.
Frame decode_frame(std::span<const std::uint8_t> bytes);

enum class PeerRole : std::uint8_t { edge = 0, cloud = 1 };

struct Hello {
  std::uint16_t version = kProtocolVersion;
  PeerRole role = PeerRole::edge;
  double flops_per_forward = 0.0;  // cloud: large-model FLOPs of one forward pass
  std::string agent;

  std::vector<std::uint8_t> encode() const;
  static Hello decode(std::span<const std::uint8_t> bytes);
  bool operator==(const Hello&) const = default;
};

/// Text-to-image request. The condition is a class id or explicit embedding tokens.
struct GenerateRequest {
  std::uint64_t seed = 0;
  std::int32_t class_id = -1;
  std::vector<float> tokens;  // used when non-empty
  diffusion::SamplerKind sampler = diffusion::SamplerKind::dpm2m;
  std::uint32_t num_inference_steps = 25;
  double guidance_scale = 7.0;
  double eta = 0.0;
  std::uint32_t cloud_steps = 0;
  bool reset_history = false;
  hybrid::TensorPrecision precision = hybrid::TensorPrecision::fp16;

  diffusion::SamplerConfig sampler_config() const;

  std::vector<std::uint8_t> encode() const;
  static GenerateRequest decode(std::span<const std::uint8_t> bytes);
  bool operator==(const GenerateRequest&) const = default;
};

/// Image-to-image request: a clean latent the cloud noises to the start step.
struct Img2ImgRequest {
  GenerateRequest base;
  std::vector<float> latent;
  double strength = 0.5;

  std::vector<std::uint8_t> encode() const;
  static Img2ImgRequest decode(std::span<const std::uint8_t> bytes);
  bool operator==(const Img2ImgRequest&) const = default;
};

enum class ErrorCode : std::uint16_t { malformed = 1, version = 2, bad_request = 3, internal = 4 };

struct ErrorMessage {
  ErrorCode code = ErrorCode::malformed;
  std::string message;

  std::vector<std::uint8_t> encode() const;
  static ErrorMessage decode(std::span<const std::uint8_t> bytes);
  bool operator==(const ErrorMessage&) const = default;
};

/// Edge acknowledgement after finishing the trajectory.
struct Done {
  std::uint32_t steps_completed = 0;

  std::vector<std::uint8_t> encode() const;
  static Done decode(std::span<const std::uint8_t> bytes);
  bool operator==(const Done&) const = default;
};

}  // namespace hsd::edgecloud
