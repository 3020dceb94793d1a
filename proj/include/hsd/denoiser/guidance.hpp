#pragma once

#include <vector>

#include "hsd/denoiser/network.hpp"
#include "hsd/diffusion/sampler.hpp"

namespace hsd::denoiser {

/// Wraps a network as a classifier-free-guided noise predictor.
///
/// Both branches run as one batch of two; w == 1 (w == 0) evaluates only the
/// conditional (unconditional) branch. The network must outlive the result.
diffusion::EpsModel make_eps_model(const Network<float>& net, std::vector<float> cond_tokens,
                                   std::vector<float> null_tokens, double guidance_scale);

/// Same, with tokens taken from the network's own embedding table.
diffusion::EpsModel make_eps_model(const Network<float>& net, int class_id, double guidance_scale);

}  // namespace hsd::denoiser
