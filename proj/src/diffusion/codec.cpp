#include "hsd/diffusion/codec.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace hsd::diffusion {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Solves [X 1] * [W^T; b^T] = Y; returns (W row-major out x in, b).
std::pair<std::vector<double>, std::vector<double>> fit_affine(std::span<const double> xs,
                                                              std::span<const double> ys, int in_dim,
                                                              int out_dim) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("codec fit: dims must be positive");
  if (xs.size() % static_cast<std::size_t>(in_dim) != 0 || ys.size() % static_cast<std::size_t>(out_dim) != 0)
    throw std::invalid_argument("codec fit: ragged input");
  const auto n = static_cast<Eigen::Index>(xs.size() / static_cast<std::size_t>(in_dim));
  if (n != static_cast<Eigen::Index>(ys.size() / static_cast<std::size_t>(out_dim)))
    throw std::invalid_argument("codec fit: sample count mismatch");
  if (n < in_dim + 1) throw std::invalid_argument("codec fit: too few samples");

  RowMat a(n, in_dim + 1);
  RowMat y = Eigen::Map<const RowMat>(ys.data(), n, out_dim);
  a.leftCols(in_dim) = Eigen::Map<const RowMat>(xs.data(), n, in_dim);
  a.col(in_dim).setOnes();
  const RowMat sol = a.colPivHouseholderQr().solve(y);  // (in+1) x out

  std::vector<double> w(static_cast<std::size_t>(out_dim * in_dim));
  std::vector<double> b(static_cast<std::size_t>(out_dim));
  for (int o = 0; o < out_dim; ++o) {
    for (int i = 0; i < in_dim; ++i) w[static_cast<std::size_t>(o * in_dim + i)] = sol(i, o);
    b[static_cast<std::size_t>(o)] = sol(in_dim, o);
  }
  return {std::move(w), std::move(b)};
}

std::vector<float> apply(const std::vector<double>& w, const std::vector<double>& b, std::span<const float> x,
                         int in_dim, int out_dim) {
  if (x.size() != static_cast<std::size_t>(in_dim)) throw std::invalid_argument("codec: dimension mismatch");
  std::vector<float> out(static_cast<std::size_t>(out_dim));
  for (int o = 0; o < out_dim; ++o) {
    double acc = b[static_cast<std::size_t>(o)];
    for (int i = 0; i < in_dim; ++i) acc += w[static_cast<std::size_t>(o * in_dim + i)] * x[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace

LatentCodec LatentCodec::identity(int dim) {
  if (dim <= 0) throw std::invalid_argument("codec: dim must be positive");
  LatentCodec c;
  c.data_dim_ = c.latent_dim_ = dim;
  c.identity_ = true;
  return c;
}

LatentCodec LatentCodec::from_affine(std::vector<double> enc_w, std::vector<double> enc_b,
                                     std::vector<double> dec_w, std::vector<double> dec_b, int data_dim,
                                     int latent_dim) {
  const auto n = static_cast<std::size_t>(data_dim * latent_dim);
  if (enc_w.size() != n || dec_w.size() != n || enc_b.size() != static_cast<std::size_t>(latent_dim) ||
      dec_b.size() != static_cast<std::size_t>(data_dim))
    throw std::invalid_argument("codec: affine parameter shape mismatch");
  LatentCodec c;
  c.data_dim_ = data_dim;
  c.latent_dim_ = latent_dim;
  c.enc_w_ = std::move(enc_w);
  c.enc_b_ = std::move(enc_b);
  c.dec_w_ = std::move(dec_w);
  c.dec_b_ = std::move(dec_b);
  c.encoder_fitted_ = c.decoder_fitted_ = true;
  return c;
}

std::vector<float> LatentCodec::encode(std::span<const float> x) const {
  if (identity_) {
    if (x.size() != static_cast<std::size_t>(data_dim_)) throw std::invalid_argument("codec: dimension mismatch");
    return {x.begin(), x.end()};
  }
  if (!encoder_fitted_) throw std::logic_error("codec: encoder not fitted");
  return apply(enc_w_, enc_b_, x, data_dim_, latent_dim_);
}

std::vector<float> LatentCodec::decode(std::span<const float> z) const {
  if (identity_) {
    if (z.size() != static_cast<std::size_t>(latent_dim_)) throw std::invalid_argument("codec: dimension mismatch");
    return {z.begin(), z.end()};
  }
  if (!decoder_fitted_) throw std::logic_error("codec: decoder not fitted");
  return apply(dec_w_, dec_b_, z, latent_dim_, data_dim_);
}

void LatentCodec::fit_encoder(std::span<const double> xs, std::span<const double> zs, int data_dim,
                              int latent_dim) {
  auto [w, b] = fit_affine(xs, zs, data_dim, latent_dim);
  data_dim_ = data_dim;
  latent_dim_ = latent_dim;
  enc_w_ = std::move(w);
  enc_b_ = std::move(b);
  identity_ = false;
  encoder_fitted_ = true;
  decoder_fitted_ = false;
}

void LatentCodec::fit_decoder(std::span<const double> zs, std::span<const double> xs) {
  if (!encoder_fitted_) throw std::logic_error("codec: fit the encoder before the decoder");
  auto [w, b] = fit_affine(zs, xs, latent_dim_, data_dim_);
  dec_w_ = std::move(w);
  dec_b_ = std::move(b);
  decoder_fitted_ = true;
}

void LatentCodec::set_decoder_pseudo_inverse() {
  if (!encoder_fitted_) throw std::logic_error("codec: fit the encoder before the decoder");
  const RowMat e = Eigen::Map<const RowMat>(enc_w_.data(), latent_dim_, data_dim_);
  const RowMat pinv = e.completeOrthogonalDecomposition().pseudoInverse();  // data x latent
  const Eigen::VectorXd eb = Eigen::Map<const Eigen::VectorXd>(enc_b_.data(), latent_dim_);
  const Eigen::VectorXd db = -pinv * eb;
  dec_w_.assign(pinv.data(), pinv.data() + pinv.size());
  dec_b_.assign(db.data(), db.data() + db.size());
  decoder_fitted_ = true;
}

double LatentCodec::decode_flops() const {
  return 2.0 * data_dim_ * latent_dim_ + data_dim_;
}

double LatentCodec::encode_flops() const {
  return 2.0 * data_dim_ * latent_dim_ + latent_dim_;
}

}  // namespace hsd::diffusion
