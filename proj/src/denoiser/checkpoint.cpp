#include "hsd/denoiser/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "hsd/core/bytes.hpp"

namespace hsd::denoiser {

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net) {
  nlohmann::json meta;
  meta["descriptor"] = net.descriptor().to_json();
  meta["role"] = to_string(net.role());
  meta["layers"] = nlohmann::json::array();
  for (const auto& t : net.params()) meta["layers"].push_back({{"name", t.name}, {"shape", t.shape}});
  const std::string js = meta.dump();

  ByteWriter w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  w.str(js);
  for (const auto& t : net.params()) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.data.size()));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

Network<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  for (char c : kCheckpointMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw DecodeError("checkpoint: bad magic");
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw DecodeError("checkpoint: unsupported version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("checkpoint: bad descriptor json: ") + e.what());
  }
  auto desc = ArchitectureDescriptor::from_json(meta.at("descriptor"));
  Network<float> net(desc, parse_model_role(meta.at("role").get<std::string>()));
  const auto& layers = meta.at("layers");
  if (layers.size() != net.params().size()) throw DecodeError("checkpoint: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& t = net.params().at(i);
    if (layers[i].at("name").get<std::string>() != t.name ||
        layers[i].at("shape").get<std::vector<int>>() != t.shape)
      throw DecodeError("checkpoint: layer table disagrees with descriptor at " + t.name);
    if (r.str() != t.name) throw DecodeError("checkpoint: blob order mismatch at " + t.name);
    if (r.u32() != t.data.size()) throw DecodeError("checkpoint: element count mismatch at " + t.name);
    for (auto& v : t.data) v = r.f32();
  }
  r.expect_end();
  return net;
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace hsd::denoiser
