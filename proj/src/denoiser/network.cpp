#include "hsd/denoiser/network.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hsd/core/rng.hpp"

namespace hsd::denoiser {

namespace {

constexpr double kLayerNormEps = 1e-5;

// Y[n x out] = X[n x in] * W^T + b, W row-major [out x in].
template <class T>
void linear_forward(const T* x, int n, int in, const T* w, const T* b, int out, T* y) {
  thread_local std::vector<T> wt;
  wt.resize(static_cast<std::size_t>(in) * out);
  for (int o = 0; o < out; ++o)
    for (int j = 0; j < in; ++j) wt[static_cast<std::size_t>(j) * out + o] = w[static_cast<std::size_t>(o) * in + j];
  for (int i = 0; i < n; ++i) {
    T* yi = y + static_cast<std::size_t>(i) * out;
    const T* xi = x + static_cast<std::size_t>(i) * in;
    for (int o = 0; o < out; ++o) yi[o] = b ? b[o] : T(0);
    for (int j = 0; j < in; ++j) {
      const T xv = xi[j];
      const T* wr = wt.data() + static_cast<std::size_t>(j) * out;
      for (int o = 0; o < out; ++o) yi[o] += xv * wr[o];
    }
  }
}

// Accumulates dX (optional), dW, db for Y = X W^T + b.
template <class T>
void linear_backward(const T* x, int n, int in, const T* w, int out, const T* dy, T* dx, T* dw, T* db) {
  for (int i = 0; i < n; ++i) {
    const T* dyi = dy + static_cast<std::size_t>(i) * out;
    const T* xi = x + static_cast<std::size_t>(i) * in;
    for (int o = 0; o < out; ++o) {
      const T g = dyi[o];
      if (db) db[o] += g;
      T* dwr = dw + static_cast<std::size_t>(o) * in;
      for (int j = 0; j < in; ++j) dwr[j] += g * xi[j];
    }
    if (dx) {
      T* dxi = dx + static_cast<std::size_t>(i) * in;
      for (int o = 0; o < out; ++o) {
        const T g = dyi[o];
        const T* wr = w + static_cast<std::size_t>(o) * in;
        for (int j = 0; j < in; ++j) dxi[j] += g * wr[j];
      }
    }
  }
}

template <class T>
void layernorm_forward(const T* x, int n, int dim, const T* g, const T* b, T* y, LayerNormCache<T>& cache) {
  cache.xhat.resize(static_cast<std::size_t>(n) * dim);
  cache.rstd.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * dim;
    T mean = 0;
    for (int j = 0; j < dim; ++j) mean += xi[j];
    mean /= static_cast<T>(dim);
    T var = 0;
    for (int j = 0; j < dim; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(dim);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd[static_cast<std::size_t>(i)] = rstd;
    T* xh = cache.xhat.data() + static_cast<std::size_t>(i) * dim;
    T* yi = y + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) {
      xh[j] = (xi[j] - mean) * rstd;
      yi[j] = xh[j] * g[j] + b[j];
    }
  }
}

// dx is accumulated.
template <class T>
void layernorm_backward(const LayerNormCache<T>& cache, int n, int dim, const T* g, const T* dy, T* dx, T* dg,
                        T* db) {
  std::vector<T> dxh(static_cast<std::size_t>(dim));
  for (int i = 0; i < n; ++i) {
    const T* xh = cache.xhat.data() + static_cast<std::size_t>(i) * dim;
    const T* dyi = dy + static_cast<std::size_t>(i) * dim;
    T mean_d = 0, mean_dx = 0;
    for (int j = 0; j < dim; ++j) {
      dg[j] += dyi[j] * xh[j];
      db[j] += dyi[j];
      dxh[static_cast<std::size_t>(j)] = dyi[j] * g[j];
      mean_d += dxh[static_cast<std::size_t>(j)];
      mean_dx += dxh[static_cast<std::size_t>(j)] * xh[j];
    }
    mean_d /= static_cast<T>(dim);
    mean_dx /= static_cast<T>(dim);
    const T rstd = cache.rstd[static_cast<std::size_t>(i)];
    T* dxi = dx + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) dxi[j] += rstd * (dxh[static_cast<std::size_t>(j)] - mean_d - xh[j] * mean_dx);
  }
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
void silu_forward(const std::vector<T>& x, std::vector<T>& y) {
  y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
}

// dx = dy * silu'(x), overwritten.
template <class T>
void silu_backward(const std::vector<T>& x, const std::vector<T>& dy, std::vector<T>& dx) {
  dx.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
  }
}

// Multi-head attention core for one batch. q: B*S x E, k/v: B*L x E, p: B x H x S x L, o: B*S x E.
template <class T>
void attention_forward(const std::vector<T>& q, const std::vector<T>& k, const std::vector<T>& v, int batch,
                       int s_len, int l_len, int heads, int hd, std::vector<T>& p, std::vector<T>& o) {
  const int e = heads * hd;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  p.assign(static_cast<std::size_t>(batch) * heads * s_len * l_len, T(0));
  o.assign(static_cast<std::size_t>(batch) * s_len * e, T(0));
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < s_len; ++i) {
        const T* qi = q.data() + (static_cast<std::size_t>(b) * s_len + i) * e + h * hd;
        T* pi = p.data() + ((static_cast<std::size_t>(b) * heads + h) * s_len + i) * l_len;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < l_len; ++j) {
          const T* kj = k.data() + (static_cast<std::size_t>(b) * l_len + j) * e + h * hd;
          T acc = 0;
          for (int c = 0; c < hd; ++c) acc += qi[c] * kj[c];
          pi[j] = acc * scale;
          mx = std::max(mx, pi[j]);
        }
        T sum = 0;
        for (int j = 0; j < l_len; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        for (int j = 0; j < l_len; ++j) pi[j] /= sum;
        T* oi = o.data() + (static_cast<std::size_t>(b) * s_len + i) * e + h * hd;
        for (int j = 0; j < l_len; ++j) {
          const T* vj = v.data() + (static_cast<std::size_t>(b) * l_len + j) * e + h * hd;
          for (int c = 0; c < hd; ++c) oi[c] += pi[j] * vj[c];
        }
      }
    }
  }
}

template <class T>
void attention_backward(const std::vector<T>& q, const std::vector<T>& k, const std::vector<T>& v,
                        const std::vector<T>& p, const std::vector<T>& d_o, int batch, int s_len, int l_len,
                        int heads, int hd, std::vector<T>& dq, std::vector<T>& dk, std::vector<T>& dv) {
  const int e = heads * hd;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  dq.assign(q.size(), T(0));
  dk.assign(k.size(), T(0));
  dv.assign(v.size(), T(0));
  std::vector<T> dp(static_cast<std::size_t>(l_len));
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < s_len; ++i) {
        const std::size_t row = static_cast<std::size_t>(b) * s_len + i;
        const T* doi = d_o.data() + row * e + h * hd;
        const T* pi = p.data() + ((static_cast<std::size_t>(b) * heads + h) * s_len + i) * l_len;
        T dot = 0;
        for (int j = 0; j < l_len; ++j) {
          const std::size_t kv_row = static_cast<std::size_t>(b) * l_len + j;
          const T* vj = v.data() + kv_row * e + h * hd;
          T* dvj = dv.data() + kv_row * e + h * hd;
          T acc = 0;
          for (int c = 0; c < hd; ++c) {
            acc += doi[c] * vj[c];
            dvj[c] += pi[j] * doi[c];
          }
          dp[static_cast<std::size_t>(j)] = acc;
          dot += pi[j] * acc;
        }
        const T* qi = q.data() + row * e + h * hd;
        T* dqi = dq.data() + row * e + h * hd;
        for (int j = 0; j < l_len; ++j) {
          const T ds = pi[j] * (dp[static_cast<std::size_t>(j)] - dot) * scale;
          const std::size_t kv_row = static_cast<std::size_t>(b) * l_len + j;
          const T* kj = k.data() + kv_row * e + h * hd;
          T* dkj = dk.data() + kv_row * e + h * hd;
          for (int c = 0; c < hd; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  }
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

template <class Scalar>
Network<Scalar>::Network(ArchitectureDescriptor desc, ModelRole role)
    : desc_(std::move(desc)), role_(role), params_(parameter_shapes(desc_)) {
  build_layout();
}

template <class Scalar>
Network<Scalar> Network<Scalar>::initialized(ArchitectureDescriptor desc, ModelRole role, std::uint64_t seed) {
  Network net(std::move(desc), role);
  Rng rng(mix_seed(seed, 77));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& t : net.params_) {
    const auto& n = t.name;
    const bool is_gain = n.size() >= 5 && n.compare(n.size() - 5, 5, ".ln.g") == 0;
    const bool is_bias = n.back() == 'b' && n[n.size() - 2] == '.';
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), Scalar(1));
    } else if (is_bias) {
      std::fill(t.data.begin(), t.data.end(), Scalar(0));
    } else if (n == "cond.embed") {
      for (auto& v : t.data) v = static_cast<Scalar>(normal(rng));
    } else {
      const double std = 1.0 / std::sqrt(static_cast<double>(t.shape.back()));
      for (auto& v : t.data) v = static_cast<Scalar>(std * normal(rng));
    }
  }
  return net;
}

template <class Scalar>
void Network<Scalar>::rebind() {
  build_layout();
}

template <class Scalar>
void Network<Scalar>::build_layout() {
  Layout l;
  const auto& p = params_;
  if (desc_.time_embed_dim > 0) {
    l.t1w = p.index_of("time.fc1.w");
    l.t1b = p.index_of("time.fc1.b");
    l.t2w = p.index_of("time.fc2.w");
    l.t2b = p.index_of("time.fc2.b");
  }
  l.in_w = p.index_of("in.w");
  l.in_b = p.index_of("in.b");
  if (desc_.has_attention()) l.embed = p.index_of("cond.embed");
  for (const auto& b : desc_.blocks()) {
    BlockLayout bl{};
    bl.kind = b.kind;
    bl.ln_g = p.index_of(b.name + ".ln.g");
    bl.ln_b = p.index_of(b.name + ".ln.b");
    if (b.kind == BlockKind::residual) {
      bl.w1 = p.index_of(b.name + ".fc1.w");
      bl.b1 = p.index_of(b.name + ".fc1.b");
      bl.w2 = p.index_of(b.name + ".fc2.w");
      bl.b2 = p.index_of(b.name + ".fc2.b");
      bl.hidden = desc_.res_hidden[static_cast<std::size_t>(b.index)];
    } else {
      const auto& spec = b.kind == BlockKind::self_attention ? desc_.self_attention : desc_.cross_attention;
      bl.qw = p.index_of(b.name + ".q.w");
      bl.qb = p.index_of(b.name + ".q.b");
      bl.kw = p.index_of(b.name + ".k.w");
      bl.kb = p.index_of(b.name + ".k.b");
      bl.vw = p.index_of(b.name + ".v.w");
      bl.vb = p.index_of(b.name + ".v.b");
      bl.ow = p.index_of(b.name + ".o.w");
      bl.ob = p.index_of(b.name + ".o.b");
      bl.heads = spec.num_heads;
      bl.head_dim = spec.head_dim();
    }
    l.blocks.push_back(bl);
  }
  if (desc_.output_norm) {
    l.out_g = p.index_of("out.ln.g");
    l.out_b = p.index_of("out.ln.b");
  }
  l.out_w = p.index_of("out.w");
  l.out_bias = p.index_of("out.b");
  // Shapes must agree with the descriptor.
  const auto shapes = parameter_shapes(desc_);
  if (shapes.size() != p.size()) throw std::invalid_argument("network: parameter count disagrees with descriptor");
  for (const auto& s : shapes)
    if (p.at(s.name).shape != s.shape) throw std::invalid_argument("network: shape mismatch for " + s.name);
  layout_ = std::move(l);
}

template <class Scalar>
std::vector<Scalar> Network<Scalar>::time_features(int t) const {
  const int half = desc_.time_embed_dim / 2;
  std::vector<Scalar> f(static_cast<std::size_t>(desc_.time_embed_dim));
  const double s = static_cast<double>(t) / desc_.train_steps;
  const double step = half > 1 ? std::log(1000.0) / (half - 1) : 0.0;
  for (int j = 0; j < half; ++j) {
    const double w = std::exp(step * j);
    f[static_cast<std::size_t>(j)] = static_cast<Scalar>(std::sin(s * w));
    f[static_cast<std::size_t>(half + j)] = static_cast<Scalar>(std::cos(s * w));
  }
  return f;
}

template <class Scalar>
std::vector<Scalar> Network<Scalar>::condition_tokens(int class_id) const {
  if (!desc_.has_attention()) return {};
  if (class_id < 0 || class_id > desc_.num_classes) throw std::out_of_range("condition class out of range");
  const auto& e = params_.at(layout_.embed).data;
  const auto w = static_cast<std::size_t>(desc_.condition_width());
  return {e.begin() + static_cast<std::ptrdiff_t>(class_id * w),
          e.begin() + static_cast<std::ptrdiff_t>((class_id + 1) * w)};
}

template <class Scalar>
ForwardResult<Scalar> Network<Scalar>::forward(std::span<const Scalar> z, std::span<const int> t,
                                               const Condition<Scalar>& cond, bool keep_cache) const {
  const int d = desc_.latent_dim, S = desc_.num_tokens, D = desc_.model_dim;
  const int B = static_cast<int>(t.size());
  if (B == 0) throw std::invalid_argument("forward: empty batch");
  if (z.size() != static_cast<std::size_t>(B) * d) throw std::invalid_argument("forward: latent shape mismatch");
  for (int ti : t)
    if (ti < 1 || ti > desc_.train_steps) throw std::out_of_range("forward: t out of range: " + std::to_string(ti));
  const int n = B * S;
  auto P = [&](std::size_t idx) { return params_.at(idx).data.data(); };

  ForwardCache<Scalar> c;
  c.batch = B;
  c.z.assign(z.begin(), z.end());

  // Condition tokens.
  const int M = desc_.num_condition_tokens;
  const auto cw = static_cast<std::size_t>(desc_.condition_width());
  if (desc_.has_attention()) {
    if (!cond.tokens.empty()) {
      if (cond.tokens.size() == cw) {
        c.cond_tokens.resize(cw * B);
        for (int b = 0; b < B; ++b) std::copy(cond.tokens.begin(), cond.tokens.end(), c.cond_tokens.begin() + b * cw);
      } else if (cond.tokens.size() == cw * B) {
        c.cond_tokens = cond.tokens;
      } else {
        throw std::invalid_argument("forward: condition token shape mismatch");
      }
    } else {
      if (cond.classes.size() != static_cast<std::size_t>(B))
        throw std::invalid_argument("forward: need one condition class per sample");
      c.cond_classes = cond.classes;
      c.cond_tokens.resize(cw * B);
      const auto& e = params_.at(layout_.embed).data;
      for (int b = 0; b < B; ++b) {
        const int cls = cond.classes[static_cast<std::size_t>(b)];
        if (cls < 0 || cls > desc_.num_classes) throw std::out_of_range("forward: condition class out of range");
        std::copy(e.begin() + cls * cw, e.begin() + (cls + 1) * cw, c.cond_tokens.begin() + b * cw);
      }
    }
  }

  // Input lift + time embedding.
  std::vector<Scalar> x(static_cast<std::size_t>(n) * D);
  linear_forward(z.data(), B, d, P(layout_.in_w), P(layout_.in_b), S * D, x.data());
  if (desc_.time_embed_dim > 0) {
    const int E = desc_.time_embed_dim, H = desc_.time_hidden;
    c.time_feats.resize(static_cast<std::size_t>(B) * E);
    for (int b = 0; b < B; ++b) {
      auto f = time_features(t[static_cast<std::size_t>(b)]);
      std::copy(f.begin(), f.end(), c.time_feats.begin() + static_cast<std::ptrdiff_t>(b) * E);
    }
    c.time_hpre.resize(static_cast<std::size_t>(B) * H);
    linear_forward(c.time_feats.data(), B, E, P(layout_.t1w), P(layout_.t1b), H, c.time_hpre.data());
    silu_forward(c.time_hpre, c.time_h);
    std::vector<Scalar> temb(static_cast<std::size_t>(B) * D);
    linear_forward(c.time_h.data(), B, H, P(layout_.t2w), P(layout_.t2b), D, temb.data());
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < D; ++j)
          x[(static_cast<std::size_t>(b) * S + i) * D + j] += temb[static_cast<std::size_t>(b) * D + j];
  }

  ForwardResult<Scalar> r;
  r.batch = B;
  c.blocks.resize(layout_.blocks.size());
  for (std::size_t bi = 0; bi < layout_.blocks.size(); ++bi) {
    const auto& bl = layout_.blocks[bi];
    auto& bc = c.blocks[bi];
    bc.x_in = x;
    bc.y.resize(x.size());
    layernorm_forward(x.data(), n, D, P(bl.ln_g), P(bl.ln_b), bc.y.data(), bc.ln);
    std::vector<Scalar> delta(x.size());
    if (bl.kind == BlockKind::residual) {
      bc.hpre.resize(static_cast<std::size_t>(n) * bl.hidden);
      linear_forward(bc.y.data(), n, D, P(bl.w1), P(bl.b1), bl.hidden, bc.hpre.data());
      silu_forward(bc.hpre, bc.act);
      linear_forward(bc.act.data(), n, bl.hidden, P(bl.w2), P(bl.b2), D, delta.data());
    } else {
      const int E = bl.heads * bl.head_dim;
      const bool cross = bl.kind == BlockKind::cross_attention;
      const int L = cross ? M : S;
      const Scalar* kv_src = cross ? c.cond_tokens.data() : bc.y.data();
      bc.q.resize(static_cast<std::size_t>(n) * E);
      bc.k.resize(static_cast<std::size_t>(B) * L * E);
      bc.v.resize(static_cast<std::size_t>(B) * L * E);
      linear_forward(bc.y.data(), n, D, P(bl.qw), P(bl.qb), E, bc.q.data());
      linear_forward(kv_src, B * L, D, P(bl.kw), P(bl.kb), E, bc.k.data());
      linear_forward(kv_src, B * L, D, P(bl.vw), P(bl.vb), E, bc.v.data());
      attention_forward(bc.q, bc.k, bc.v, B, S, L, bl.heads, bl.head_dim, bc.p, bc.o);
      linear_forward(bc.o.data(), n, E, P(bl.ow), P(bl.ob), D, delta.data());
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
    r.block_outputs.push_back(x);
  }

  c.final_x = x;
  const Scalar* head_in = x.data();
  if (desc_.output_norm) {
    c.final_y.resize(x.size());
    layernorm_forward(x.data(), n, D, P(layout_.out_g), P(layout_.out_b), c.final_y.data(), c.final_ln);
    head_in = c.final_y.data();
  }
  r.eps.resize(static_cast<std::size_t>(B) * d);
  linear_forward(head_in, B, S * D, P(layout_.out_w), P(layout_.out_bias), d, r.eps.data());
  if (keep_cache) r.cache = std::move(c);
  return r;
}

template <class Scalar>
std::vector<Scalar> Network<Scalar>::predict(std::span<const Scalar> z, int t,
                                             std::span<const Scalar> cond_tokens) const {
  const int ts[1] = {t};
  auto cond = Condition<Scalar>::from_tokens({cond_tokens.begin(), cond_tokens.end()});
  return forward(z, ts, cond, false).eps;
}

template <class Scalar>
ParamStore<Scalar> Network<Scalar>::backward(const ForwardResult<Scalar>& fwd, std::span<const Scalar> eps_grad,
                                             const std::vector<std::vector<Scalar>>* block_grads) const {
  auto grads = params_.zeros_like();
  backward(fwd, eps_grad, block_grads, grads);
  return grads;
}

template <class Scalar>
void Network<Scalar>::backward(const ForwardResult<Scalar>& fwd, std::span<const Scalar> eps_grad,
                               const std::vector<std::vector<Scalar>>* block_grads,
                               ParamStore<Scalar>& grads) const {
  if (!fwd.cache) throw std::logic_error("backward called without a cached forward pass");
  const auto& c = *fwd.cache;
  const int d = desc_.latent_dim, S = desc_.num_tokens, D = desc_.model_dim;
  const int B = c.batch, n = B * S, M = desc_.num_condition_tokens;
  if (eps_grad.size() != static_cast<std::size_t>(B) * d) throw std::invalid_argument("backward: eps_grad shape");
  if (block_grads && block_grads->size() != layout_.blocks.size())
    throw std::invalid_argument("backward: block_grads count mismatch");
  if (grads.size() != params_.size()) throw std::invalid_argument("backward: gradient store layout mismatch");
  auto P = [&](std::size_t idx) { return params_.at(idx).data.data(); };
  auto G = [&](std::size_t idx) { return grads.at(idx).data.data(); };

  // Output head.
  std::vector<Scalar> dx(static_cast<std::size_t>(n) * D, Scalar(0));
  const Scalar* head_in = desc_.output_norm ? c.final_y.data() : c.final_x.data();
  if (desc_.output_norm) {
    std::vector<Scalar> dy(dx.size(), Scalar(0));
    linear_backward(head_in, B, S * D, P(layout_.out_w), d, eps_grad.data(), dy.data(), G(layout_.out_w),
                    G(layout_.out_bias));
    layernorm_backward(c.final_ln, n, D, P(layout_.out_g), dy.data(), dx.data(), G(layout_.out_g), G(layout_.out_b));
  } else {
    linear_backward(head_in, B, S * D, P(layout_.out_w), d, eps_grad.data(), dx.data(), G(layout_.out_w),
                    G(layout_.out_bias));
  }

  const auto cw = static_cast<std::size_t>(desc_.condition_width());
  std::vector<Scalar> dcond(desc_.has_attention() ? cw * B : 0, Scalar(0));

  for (std::size_t bi = layout_.blocks.size(); bi-- > 0;) {
    if (block_grads) {
      const auto& bg = (*block_grads)[bi];
      if (!bg.empty()) {
        if (bg.size() != dx.size()) throw std::invalid_argument("backward: block grad shape mismatch");
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += bg[i];
      }
    }
    const auto& bl = layout_.blocks[bi];
    const auto& bc = c.blocks[bi];
    // x_out = x_in + f(LN(x_in)); dx flows to x_in directly and through f.
    std::vector<Scalar> dy(dx.size(), Scalar(0));
    if (bl.kind == BlockKind::residual) {
      std::vector<Scalar> dact(static_cast<std::size_t>(n) * bl.hidden, Scalar(0));
      linear_backward(bc.act.data(), n, bl.hidden, P(bl.w2), D, dx.data(), dact.data(), G(bl.w2), G(bl.b2));
      std::vector<Scalar> dpre;
      silu_backward(bc.hpre, dact, dpre);
      linear_backward(bc.y.data(), n, D, P(bl.w1), bl.hidden, dpre.data(), dy.data(), G(bl.w1), G(bl.b1));
    } else {
      const int E = bl.heads * bl.head_dim;
      const bool cross = bl.kind == BlockKind::cross_attention;
      const int L = cross ? M : S;
      std::vector<Scalar> d_o(static_cast<std::size_t>(n) * E, Scalar(0));
      linear_backward(bc.o.data(), n, E, P(bl.ow), D, dx.data(), d_o.data(), G(bl.ow), G(bl.ob));
      std::vector<Scalar> dq, dk, dv;
      attention_backward(bc.q, bc.k, bc.v, bc.p, d_o, B, S, L, bl.heads, bl.head_dim, dq, dk, dv);
      linear_backward(bc.y.data(), n, D, P(bl.qw), E, dq.data(), dy.data(), G(bl.qw), G(bl.qb));
      Scalar* dkv = cross ? dcond.data() : dy.data();
      const Scalar* kv_src = cross ? c.cond_tokens.data() : bc.y.data();
      linear_backward(kv_src, B * L, D, P(bl.kw), E, dk.data(), dkv, G(bl.kw), G(bl.kb));
      linear_backward(kv_src, B * L, D, P(bl.vw), E, dv.data(), dkv, G(bl.vw), G(bl.vb));
    }
    layernorm_backward(bc.ln, n, D, P(bl.ln_g), dy.data(), dx.data(), G(bl.ln_g), G(bl.ln_b));
  }

  // Condition embedding rows.
  if (desc_.has_attention() && !c.cond_classes.empty()) {
    auto* ge = G(layout_.embed);
    for (int b = 0; b < B; ++b) {
      const auto cls = static_cast<std::size_t>(c.cond_classes[static_cast<std::size_t>(b)]);
      for (std::size_t j = 0; j < cw; ++j) ge[cls * cw + j] += dcond[static_cast<std::size_t>(b) * cw + j];
    }
  }

  // Time path: temb is broadcast over tokens.
  if (desc_.time_embed_dim > 0) {
    const int E = desc_.time_embed_dim, H = desc_.time_hidden;
    std::vector<Scalar> dtemb(static_cast<std::size_t>(B) * D, Scalar(0));
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < D; ++j)
          dtemb[static_cast<std::size_t>(b) * D + j] += dx[(static_cast<std::size_t>(b) * S + i) * D + j];
    std::vector<Scalar> dh(static_cast<std::size_t>(B) * H, Scalar(0));
    linear_backward(c.time_h.data(), B, H, P(layout_.t2w), D, dtemb.data(), dh.data(), G(layout_.t2w),
                    G(layout_.t2b));
    std::vector<Scalar> dpre;
    silu_backward(c.time_hpre, dh, dpre);
    linear_backward(c.time_feats.data(), B, E, P(layout_.t1w), H, dpre.data(), static_cast<Scalar*>(nullptr),
                    G(layout_.t1w), G(layout_.t1b));
  }

  linear_backward(c.z.data(), B, d, P(layout_.in_w), S * D, dx.data(), static_cast<Scalar*>(nullptr), G(layout_.in_w),
                  G(layout_.in_b));
}

template class Network<float>;
template class Network<double>;

}  // namespace hsd::denoiser
