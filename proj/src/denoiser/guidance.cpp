#include "hsd/denoiser/guidance.hpp"

namespace hsd::denoiser {

diffusion::EpsModel make_eps_model(const Network<float>& net, std::vector<float> cond_tokens,
                                   std::vector<float> null_tokens, double w) {
  if (!net.descriptor().has_attention()) {
    return [&net](std::span<const float> z, int t) { return net.predict(z, t, {}); };
  }
  const auto width = static_cast<std::size_t>(net.descriptor().condition_width());
  if (cond_tokens.size() != width || null_tokens.size() != width)
    throw std::invalid_argument("make_eps_model: condition token shape mismatch");
  if (w == 1.0) {
    return [&net, cond = std::move(cond_tokens)](std::span<const float> z, int t) { return net.predict(z, t, cond); };
  }
  if (w == 0.0) {
    return [&net, null = std::move(null_tokens)](std::span<const float> z, int t) { return net.predict(z, t, null); };
  }
  std::vector<float> both(null_tokens);
  both.insert(both.end(), cond_tokens.begin(), cond_tokens.end());
  const auto cond = Condition<float>::from_tokens(std::move(both));
  return [&net, cond, w](std::span<const float> z, int t) {
    std::vector<float> zz(z.begin(), z.end());
    zz.insert(zz.end(), z.begin(), z.end());
    const int ts[2] = {t, t};
    const auto r = net.forward(zz, ts, cond, false);
    const auto d = z.size();
    const std::span<const float> e(r.eps);
    return diffusion::cfg_combine(e.first(d), e.subspan(d, d), w);
  };
}

diffusion::EpsModel make_eps_model(const Network<float>& net, int class_id, double w) {
  if (!net.descriptor().has_attention()) return make_eps_model(net, {}, {}, w);
  return make_eps_model(net, net.condition_tokens(class_id), net.condition_tokens(net.descriptor().null_class()), w);
}

}  // namespace hsd::denoiser
