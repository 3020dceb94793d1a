#include "hsd/eval/flops.hpp"

namespace hsd::eval {

double linear_flops(int in, int out, bool bias, int rows) {
  return static_cast<double>(rows) * (2.0 * in * out + (bias ? out : 0));
}

double attention_core_flops(int queries, int keys, int heads, int head_dim) {
  return 2.0 * (2.0 * queries * keys * head_dim * heads);
}

std::vector<FlopsEntry> flops_breakdown(const denoiser::ArchitectureDescriptor& d) {
  d.validate();
  std::vector<FlopsEntry> out;
  const int D = d.model_dim, S = d.num_tokens, M = d.num_condition_tokens;
  if (d.time_embed_dim > 0) {
    out.push_back({"time.fc1", linear_flops(d.time_embed_dim, d.time_hidden, true)});
    out.push_back({"time.fc2", linear_flops(d.time_hidden, D, true)});
  }
  out.push_back({"in", linear_flops(d.latent_dim, S * D, true)});
  for (const auto& b : d.blocks()) {
    if (b.kind == denoiser::BlockKind::residual) {
      const int h = d.res_hidden[static_cast<std::size_t>(b.index)];
      out.push_back({b.name + ".fc1", linear_flops(D, h, true, S)});
      out.push_back({b.name + ".fc2", linear_flops(h, D, true, S)});
    } else {
      const bool cross = b.kind == denoiser::BlockKind::cross_attention;
      const auto& a = cross ? d.cross_attention : d.self_attention;
      const int kv_rows = cross ? M : S;
      out.push_back({b.name + ".q", linear_flops(D, a.embed_dim, true, S)});
      out.push_back({b.name + ".k", linear_flops(D, a.embed_dim, true, kv_rows)});
      out.push_back({b.name + ".v", linear_flops(D, a.embed_dim, true, kv_rows)});
      out.push_back({b.name + ".core", attention_core_flops(S, kv_rows, a.num_heads, a.head_dim())});
      out.push_back({b.name + ".o", linear_flops(a.embed_dim, D, true, S)});
    }
  }
  out.push_back({"out", linear_flops(S * D, d.latent_dim, true)});
  return out;
}

double flops_count(const denoiser::ArchitectureDescriptor& desc) {
  double total = 0.0;
  for (const auto& e : flops_breakdown(desc)) total += e.flops;
  return total;
}

int forwards_per_step(double w) { return (w == 0.0 || w == 1.0) ? 1 : 2; }

}  // namespace hsd::eval
