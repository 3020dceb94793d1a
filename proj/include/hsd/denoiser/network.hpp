#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hsd/denoiser/architecture.hpp"
#include "hsd/denoiser/params.hpp"

namespace hsd::denoiser {

/// Condition input for a batch. Either explicit tokens (B x M*D, or a single
/// M*D row broadcast to the batch) or class ids looked up in the embedding
/// table. Only class lookups send gradient into the table.
template <class Scalar>
struct Condition {
  std::vector<int> classes;
  std::vector<Scalar> tokens;

  static Condition from_classes(std::vector<int> c) { return {std::move(c), {}}; }
  static Condition from_tokens(std::vector<Scalar> t) { return {{}, std::move(t)}; }
};

template <class Scalar>
struct LayerNormCache {
  std::vector<Scalar> xhat;
  std::vector<Scalar> rstd;
};

template <class Scalar>
struct BlockCache {
  std::vector<Scalar> x_in;
  LayerNormCache<Scalar> ln;
  std::vector<Scalar> y;     // normalized input
  std::vector<Scalar> hpre;  // residual: pre-activation
  std::vector<Scalar> act;   // residual: activation
  std::vector<Scalar> q, k, v, p, o;  // attention
};

template <class Scalar>
struct ForwardCache {
  int batch = 0;
  std::vector<Scalar> z;
  std::vector<Scalar> time_feats, time_hpre, time_h;
  std::vector<Scalar> cond_tokens;  // B x M*D
  std::vector<int> cond_classes;    // empty when tokens were given
  std::vector<BlockCache<Scalar>> blocks;
  std::vector<Scalar> final_x;
  LayerNormCache<Scalar> final_ln;
  std::vector<Scalar> final_y;
};

template <class Scalar>
struct ForwardResult {
  int batch = 0;
  std::vector<Scalar> eps;                         // B x d
  std::vector<std::vector<Scalar>> block_outputs;  // per block, B x S x D
  std::optional<ForwardCache<Scalar>> cache;       // present when requested
};

/// Token-based epsilon predictor with hand-written reverse-mode gradients.
///
/// Forward passes are const and keep no state, so one instance can serve
/// concurrent callers. Weights are owned by value.
template <class Scalar>
class Network {
 public:
  Network() = default;
  Network(ArchitectureDescriptor desc, ModelRole role);

  /// Fan-in scaled Gaussian weights, unit LayerNorm gains, zero biases.
  static Network initialized(ArchitectureDescriptor desc, ModelRole role, std::uint64_t seed);

  const ArchitectureDescriptor& descriptor() const { return desc_; }
  ModelRole role() const { return role_; }
  void set_role(ModelRole r) { role_ = r; }

  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }

  /// Embedding tokens (M*D) for a class id; null_class() gives the unconditional token.
  std::vector<Scalar> condition_tokens(int class_id) const;

  /// Batched forward. z is B x d, t holds B training-step indices in [1, T].
  ForwardResult<Scalar> forward(std::span<const Scalar> z, std::span<const int> t,
                                const Condition<Scalar>& cond, bool keep_cache = false) const;

  /// Single-sample convenience wrapper; returns eps only.
  std::vector<Scalar> predict(std::span<const Scalar> z, int t, std::span<const Scalar> cond_tokens) const;

  /// Accumulates dL/dparams into `grads` (same layout as params()).
  /// block_grads, when given, holds dL/d(block output) per block.
  void backward(const ForwardResult<Scalar>& fwd, std::span<const Scalar> eps_grad,
                const std::vector<std::vector<Scalar>>* block_grads, ParamStore<Scalar>& grads) const;

  ParamStore<Scalar> backward(const ForwardResult<Scalar>& fwd, std::span<const Scalar> eps_grad,
                              const std::vector<std::vector<Scalar>>* block_grads = nullptr) const;

  template <class Other>
  Network<Other> cast() const {
    Network<Other> out(desc_, role_);
    out.params() = params_.template cast<Other>();
    out.rebind();
    return out;
  }

  /// Re-derives the cached layout after params() was replaced wholesale.
  void rebind();

 private:
  struct BlockLayout {
    BlockKind kind;
    std::size_t ln_g, ln_b;
    std::size_t w1, b1, w2, b2;            // residual fc1 / fc2
    std::size_t qw, qb, kw, kb, vw, vb, ow, ob;  // attention
    int hidden = 0;
    int heads = 0;
    int head_dim = 0;
  };
  struct Layout {
    std::size_t t1w = 0, t1b = 0, t2w = 0, t2b = 0;
    std::size_t in_w = 0, in_b = 0;
    std::size_t embed = 0;
    std::vector<BlockLayout> blocks;
    std::size_t out_g = 0, out_b = 0;
    std::size_t out_w = 0, out_bias = 0;
  };

  void build_layout();
  std::vector<Scalar> time_features(int t) const;

  ArchitectureDescriptor desc_;
  ModelRole role_ = ModelRole::large;
  ParamStore<Scalar> params_;
  Layout layout_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace hsd::denoiser
