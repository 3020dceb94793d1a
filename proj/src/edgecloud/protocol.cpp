#include "hsd/edgecloud/protocol.hpp"

#include <algorithm>

namespace hsd::edgecloud {

namespace {

void write_floats(ByteWriter& w, std::span<const float> v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (float x : v) w.f32(x);
}

std::vector<float> read_floats(ByteReader& r) {
  const std::size_t n = r.u32();
  if (n > r.remaining() / 4) throw DecodeError("float array longer than payload");
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

void write_request(ByteWriter& w, const GenerateRequest& q) {
  w.u64(q.seed);
  w.u32(static_cast<std::uint32_t>(q.class_id));
  write_floats(w, q.tokens);
  w.u8(static_cast<std::uint8_t>(q.sampler));
  w.u32(q.num_inference_steps);
  w.f64(q.guidance_scale);
  w.f64(q.eta);
  w.u32(q.cloud_steps);
  w.u8(q.reset_history ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(q.precision));
}

GenerateRequest read_request(ByteReader& r) {
  GenerateRequest q;
  q.seed = r.u64();
  q.class_id = static_cast<std::int32_t>(r.u32());
  q.tokens = read_floats(r);
  const auto kind = r.u8();
  if (kind > 2) throw DecodeError("unknown sampler kind");
  q.sampler = static_cast<diffusion::SamplerKind>(kind);
  q.num_inference_steps = r.u32();
  q.guidance_scale = r.f64();
  q.eta = r.f64();
  q.cloud_steps = r.u32();
  const auto reset = r.u8();
  if (reset > 1) throw DecodeError("bad reset_history flag");
  q.reset_history = reset == 1;
  const auto prec = r.u8();
  if (prec > 1) throw DecodeError("unknown tensor precision");
  q.precision = static_cast<hybrid::TensorPrecision>(prec);
  return q;
}

}  // namespace

std::string to_string(MessageType type) {
  switch (type) {
    case MessageType::hello: return "HELLO";
    case MessageType::generate_request: return "GENERATE_REQUEST";
    case MessageType::handoff: return "HANDOFF";
    case MessageType::img2img_request: return "IMG2IMG_REQUEST";
    case MessageType::error: return "ERROR";
    case MessageType::done: return "DONE";
  }
  return "UNKNOWN";
}

bool is_known_type(std::uint8_t raw) { return raw >= 1 && raw <= 6; }

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayload) throw std::length_error("frame payload exceeds limit");
  ByteWriter w;
  w.bytes(kMagic);
  w.u16(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.u32(static_cast<std::uint32_t>(frame.payload.size()));
  w.bytes(frame.payload);
  return w.take();
}

FrameHeader parse_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderBytes) throw DecodeError("frame header truncated");
  ByteReader r(header.first(kHeaderBytes));
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw DecodeError("bad frame magic");
  FrameHeader h;
  h.version = r.u16();
  if (h.version != kProtocolVersion)
    throw VersionError("unsupported protocol version " + std::to_string(h.version));
  const auto type = r.u8();
  if (!is_known_type(type)) throw DecodeError("unknown message type " + std::to_string(type));
  h.type = static_cast<MessageType>(type);
  h.length = r.u32();
  if (h.length > kMaxPayload) throw DecodeError("frame payload length " + std::to_string(h.length) + " exceeds limit");
  return h;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  const auto h = parse_header(bytes);
  if (bytes.size() - kHeaderBytes != h.length)
    throw DecodeError("frame length field " + std::to_string(h.length) + " disagrees with " +
                      std::to_string(bytes.size() - kHeaderBytes) + " payload bytes");
  const auto body = bytes.subspan(kHeaderBytes);
  return {h.type, {body.begin(), body.end()}};
}

std::vector<std::uint8_t> Hello::encode() const {
  ByteWriter w;
  w.u16(version);
  w.u8(static_cast<std::uint8_t>(role));
  w.f64(flops_per_forward);
  w.str(agent);
  return w.take();
}

Hello Hello::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Hello h;
  h.version = r.u16();
  const auto role = r.u8();
  if (role > 1) throw DecodeError("unknown peer role");
  h.role = static_cast<PeerRole>(role);
  h.flops_per_forward = r.f64();
  h.agent = r.str();
  r.expect_end();
  return h;
}

diffusion::SamplerConfig GenerateRequest::sampler_config() const {
  return {sampler, static_cast<int>(std::min<std::uint32_t>(num_inference_steps, 0x7fffffffu)), guidance_scale, eta};
}

std::vector<std::uint8_t> GenerateRequest::encode() const {
  ByteWriter w;
  write_request(w, *this);
  return w.take();
}

GenerateRequest GenerateRequest::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto q = read_request(r);
  r.expect_end();
  return q;
}

std::vector<std::uint8_t> Img2ImgRequest::encode() const {
  ByteWriter w;
  write_request(w, base);
  write_floats(w, latent);
  w.f64(strength);
  return w.take();
}

Img2ImgRequest Img2ImgRequest::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Img2ImgRequest q;
  q.base = read_request(r);
  q.latent = read_floats(r);
  q.strength = r.f64();
  r.expect_end();
  return q;
}

std::vector<std::uint8_t> ErrorMessage::encode() const {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(code));
  w.str(message);
  return w.take();
}

ErrorMessage ErrorMessage::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  ErrorMessage e;
  const auto code = r.u16();
  if (code < 1 || code > 4) throw DecodeError("unknown error code");
  e.code = static_cast<ErrorCode>(code);
  e.message = r.str();
  r.expect_end();
  return e;
}

std::vector<std::uint8_t> Done::encode() const {
  ByteWriter w;
  w.u32(steps_completed);
  return w.take();
}

Done Done::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  Done d;
  d.steps_completed = r.u32();
  r.expect_end();
  return d;
}

}  // namespace hsd::edgecloud
