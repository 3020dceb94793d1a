#include "hsd/denoiser/architecture.hpp"

#include <stdexcept>

namespace hsd::denoiser {

std::string to_string(ModelRole role) { return role == ModelRole::large ? "large" : "small"; }

ModelRole parse_model_role(const std::string& name) {
  if (name == "large") return ModelRole::large;
  if (name == "small") return ModelRole::small;
  throw std::invalid_argument("unknown model role: " + name);
}

std::vector<BlockRef> ArchitectureDescriptor::blocks() const {
  std::vector<BlockRef> out;
  const int n = num_res_blocks();
  for (int i = 0; i <= n; ++i) {
    if (has_attention() && i == attention_position) {
      out.push_back({BlockKind::self_attention, 0, "self_attn"});
      out.push_back({BlockKind::cross_attention, 0, "cross_attn"});
    }
    if (i < n) out.push_back({BlockKind::residual, i, "res" + std::to_string(i)});
  }
  return out;
}

void ArchitectureDescriptor::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("descriptor: ") + what);
  };
  require(latent_dim > 0, "latent_dim must be positive");
  require(num_tokens > 0, "num_tokens must be positive");
  require(model_dim > 0, "model_dim must be positive");
  for (int h : res_hidden) require(h > 0, "residual widths must be positive");
  require(train_steps > 0, "train_steps must be positive");
  require(time_embed_dim >= 0 && time_embed_dim % 2 == 0, "time_embed_dim must be even and nonnegative");
  require(time_embed_dim == 0 || time_hidden > 0, "time_hidden must be positive");
  if (has_attention()) {
    require(attention_position <= num_res_blocks(), "attention_position beyond residual blocks");
    for (const auto* a : {&self_attention, &cross_attention}) {
      require(a->num_heads > 0 && a->embed_dim > 0, "attention widths must be positive");
      require(a->embed_dim % a->num_heads == 0, "embed_dim must be divisible by num_heads");
    }
    require(num_condition_tokens > 0, "num_condition_tokens must be positive");
    require(num_classes > 0, "num_classes must be positive");
  }
}

nlohmann::json ArchitectureDescriptor::to_json() const {
  return {
      {"latent_dim", latent_dim},
      {"num_tokens", num_tokens},
      {"model_dim", model_dim},
      {"res_hidden", res_hidden},
      {"num_res_blocks", num_res_blocks()},
      {"attention_position", attention_position},
      {"self_attention", {{"embed_dim", self_attention.embed_dim}, {"num_heads", self_attention.num_heads}}},
      {"cross_attention", {{"embed_dim", cross_attention.embed_dim}, {"num_heads", cross_attention.num_heads}}},
      {"num_condition_tokens", num_condition_tokens},
      {"num_classes", num_classes},
      {"time_embed_dim", time_embed_dim},
      {"time_hidden", time_hidden},
      {"train_steps", train_steps},
      {"output_norm", output_norm},
  };
}

ArchitectureDescriptor ArchitectureDescriptor::from_json(const nlohmann::json& j) {
  ArchitectureDescriptor d;
  d.latent_dim = j.at("latent_dim").get<int>();
  d.num_tokens = j.at("num_tokens").get<int>();
  d.model_dim = j.at("model_dim").get<int>();
  d.res_hidden = j.at("res_hidden").get<std::vector<int>>();
  if (j.contains("num_res_blocks") && j.at("num_res_blocks").get<int>() != d.num_res_blocks())
    throw std::invalid_argument("descriptor: num_res_blocks disagrees with res_hidden");
  d.attention_position = j.at("attention_position").get<int>();
  d.self_attention = {j.at("self_attention").at("embed_dim").get<int>(),
                      j.at("self_attention").at("num_heads").get<int>()};
  d.cross_attention = {j.at("cross_attention").at("embed_dim").get<int>(),
                       j.at("cross_attention").at("num_heads").get<int>()};
  d.num_condition_tokens = j.at("num_condition_tokens").get<int>();
  d.num_classes = j.at("num_classes").get<int>();
  d.time_embed_dim = j.at("time_embed_dim").get<int>();
  d.time_hidden = j.at("time_hidden").get<int>();
  d.train_steps = j.at("train_steps").get<int>();
  d.output_norm = j.at("output_norm").get<bool>();
  d.validate();
  return d;
}

ArchitectureDescriptor default_large_descriptor() { return ArchitectureDescriptor{}; }

std::vector<ParamShape> parameter_shapes(const ArchitectureDescriptor& d) {
  d.validate();
  std::vector<ParamShape> out;
  const int D = d.model_dim;
  if (d.time_embed_dim > 0) {
    out.push_back({"time.fc1.w", {d.time_hidden, d.time_embed_dim}});
    out.push_back({"time.fc1.b", {d.time_hidden}});
    out.push_back({"time.fc2.w", {D, d.time_hidden}});
    out.push_back({"time.fc2.b", {D}});
  }
  out.push_back({"in.w", {d.num_tokens * D, d.latent_dim}});
  out.push_back({"in.b", {d.num_tokens * D}});
  if (d.has_attention()) out.push_back({"cond.embed", {d.num_classes + 1, d.condition_width()}});
  for (const auto& b : d.blocks()) {
    out.push_back({b.name + ".ln.g", {D}});
    out.push_back({b.name + ".ln.b", {D}});
    if (b.kind == BlockKind::residual) {
      const int h = d.res_hidden[static_cast<std::size_t>(b.index)];
      out.push_back({b.name + ".fc1.w", {h, D}});
      out.push_back({b.name + ".fc1.b", {h}});
      out.push_back({b.name + ".fc2.w", {D, h}});
      out.push_back({b.name + ".fc2.b", {D}});
    } else {
      const int e = (b.kind == BlockKind::self_attention ? d.self_attention : d.cross_attention).embed_dim;
      for (const char* p : {"q", "k", "v"}) {
        out.push_back({b.name + "." + p + ".w", {e, D}});
        out.push_back({b.name + "." + p + ".b", {e}});
      }
      out.push_back({b.name + ".o.w", {D, e}});
      out.push_back({b.name + ".o.b", {D}});
    }
  }
  if (d.output_norm) {
    out.push_back({"out.ln.g", {D}});
    out.push_back({"out.ln.b", {D}});
  }
  out.push_back({"out.w", {d.latent_dim, d.num_tokens * D}});
  out.push_back({"out.b", {d.latent_dim}});
  return out;
}

long long parameter_count(const ArchitectureDescriptor& desc) {
  long long n = 0;
  for (const auto& p : parameter_shapes(desc)) {
    long long c = 1;
    for (int s : p.shape) c *= s;
    n += c;
  }
  return n;
}

}  // namespace hsd::denoiser
