#include "hsd/hybrid/handoff.hpp"

#include <stdexcept>
#include <string>

#include "hsd/core/bytes.hpp"
#include "hsd/core/half.hpp"

namespace hsd::hybrid {

namespace {

void write_tensor(ByteWriter& w, std::span<const float> v, TensorPrecision p) {
  for (float x : v) {
    if (p == TensorPrecision::fp16)
      w.u16(float_to_half(x));
    else
      w.f32(x);
  }
}

std::vector<float> read_tensor(ByteReader& r, std::size_t n, TensorPrecision p) {
  if (n > r.remaining() / element_bytes(p)) throw DecodeError("handoff: tensor longer than buffer");
  std::vector<float> out(n);
  for (auto& x : out) x = p == TensorPrecision::fp16 ? half_to_float(r.u16()) : r.f32();
  return out;
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("handoff packet: ") + what);
}

}  // namespace

std::size_t element_bytes(TensorPrecision precision) {
  switch (precision) {
    case TensorPrecision::fp32: return 4;
    case TensorPrecision::fp16: return 2;
  }
  throw std::invalid_argument("unknown tensor precision");
}

std::size_t tensor_payload_bytes(std::size_t latent_elems, std::size_t token_elems, TensorPrecision precision) {
  return (latent_elems + token_elems) * element_bytes(precision);
}

std::size_t handoff_overhead_bytes(std::size_t remaining_steps, bool has_history) {
  // version, precision, sampler, seed, position, total, guidance, eta, latent_dim, R
  std::size_t n = 2 + 1 + 1 + 8 + 4 + 4 + 8 + 8 + 4 + 4;
  n += 4 * remaining_steps;
  n += 4 + 4 + 1;  // M, D, history count
  if (has_history) n += 4;
  return n;
}

void HandoffPacket::validate() const {
  check(version == kHandoffVersion, "unsupported version");
  check(precision == TensorPrecision::fp32 || precision == TensorPrecision::fp16, "unknown precision");
  check(!latent.empty(), "empty latent");
  check(step_position + remaining.size() == total_steps, "remaining steps disagree with position");
  for (std::size_t i = 0; i < remaining.size(); ++i) {
    check(remaining[i] >= 1, "remaining timestep below 1");
    if (i > 0) check(remaining[i] < remaining[i - 1], "remaining timesteps not descending");
  }
  check(tokens.size() == static_cast<std::size_t>(num_tokens) * token_dim, "token shape mismatch");
  check(history.size() <= 1, "more than one history entry");
  if (!history.empty()) {
    check(sampler == diffusion::SamplerKind::dpm2m, "history on a single-step sampler");
    check(history.front().t > current_t(), "history timestep not after the current step");
    check(history.front().eps.size() == latent.size(), "history shape mismatch");
  }
}

std::size_t HandoffPacket::encoded_size() const {
  const std::size_t hist = history.empty() ? 0 : latent.size();
  return handoff_overhead_bytes(remaining.size(), !history.empty()) +
         tensor_payload_bytes(latent.size() + hist, tokens.size(), precision);
}

std::vector<std::uint8_t> HandoffPacket::encode() const {
  validate();
  ByteWriter w;
  w.u16(version);
  w.u8(static_cast<std::uint8_t>(precision));
  w.u8(static_cast<std::uint8_t>(sampler));
  w.u64(rng_seed);
  w.u32(step_position);
  w.u32(total_steps);
  w.f64(guidance_scale);
  w.f64(eta);
  w.u32(static_cast<std::uint32_t>(latent.size()));
  w.u32(static_cast<std::uint32_t>(remaining.size()));
  for (int t : remaining) w.u32(static_cast<std::uint32_t>(t));
  w.u32(num_tokens);
  w.u32(token_dim);
  w.u8(static_cast<std::uint8_t>(history.size()));
  for (const auto& h : history) {
    w.u32(static_cast<std::uint32_t>(h.t));
    write_tensor(w, h.eps, precision);
  }
  write_tensor(w, latent, precision);
  write_tensor(w, tokens, precision);
  return w.take();
}

HandoffPacket HandoffPacket::decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  HandoffPacket p;
  p.version = r.u16();
  if (p.version != kHandoffVersion) throw DecodeError("handoff: unsupported version " + std::to_string(p.version));
  const auto prec = r.u8();
  if (prec > 1) throw DecodeError("handoff: unknown precision");
  p.precision = static_cast<TensorPrecision>(prec);
  const auto kind = r.u8();
  if (kind > 2) throw DecodeError("handoff: unknown sampler kind");
  p.sampler = static_cast<diffusion::SamplerKind>(kind);
  p.rng_seed = r.u64();
  p.step_position = r.u32();
  p.total_steps = r.u32();
  p.guidance_scale = r.f64();
  p.eta = r.f64();
  const std::size_t d = r.u32();
  const std::size_t n_rem = r.u32();
  if (n_rem > r.remaining() / 4) throw DecodeError("handoff: step list longer than buffer");
  p.remaining.resize(n_rem);
  for (auto& t : p.remaining) {
    const auto v = r.u32();
    if (v > 0x7fffffffu) throw DecodeError("handoff: timestep out of range");
    t = static_cast<int>(v);
  }
  p.num_tokens = r.u32();
  p.token_dim = r.u32();
  const auto n_hist = r.u8();
  if (n_hist > 1) throw DecodeError("handoff: more than one history entry");
  for (int i = 0; i < n_hist; ++i) {
    diffusion::HistoryEntry h;
    const auto t = r.u32();
    if (t > 0x7fffffffu) throw DecodeError("handoff: timestep out of range");
    h.t = static_cast<int>(t);
    h.eps = read_tensor(r, d, p.precision);
    p.history.push_back(std::move(h));
  }
  p.latent = read_tensor(r, d, p.precision);
  const std::uint64_t n_tok = static_cast<std::uint64_t>(p.num_tokens) * p.token_dim;
  if (n_tok > r.remaining()) throw DecodeError("handoff: token block longer than buffer");
  p.tokens = read_tensor(r, static_cast<std::size_t>(n_tok), p.precision);
  r.expect_end();
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw DecodeError(e.what());
  }
  return p;
}

}  // namespace hsd::hybrid
