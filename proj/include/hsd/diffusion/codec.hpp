#pragma once

#include <span>
#include <vector>

namespace hsd::diffusion {

/// Affine latent codec: z = E x + e, x = D z + d. Identity by default.
///
/// The encoder is fitted to a reference encoder by least squares (the toy
/// analogue of distilling a compact encoder with an L2 loss); the decoder is
/// either fitted the same way or set to the pseudo-inverse of the encoder.
class LatentCodec {
 public:
  static LatentCodec identity(int dim);

  int data_dim() const { return data_dim_; }
  int latent_dim() const { return latent_dim_; }
  bool is_identity() const { return identity_; }
  bool encoder_ready() const { return identity_ || encoder_fitted_; }
  bool decoder_ready() const { return identity_ || decoder_fitted_; }

  std::vector<float> encode(std::span<const float> x) const;
  std::vector<float> decode(std::span<const float> z) const;

  /// Least-squares fit of E, e from paired rows (x_i -> z_i).
  void fit_encoder(std::span<const double> xs, std::span<const double> zs, int data_dim, int latent_dim);
  /// Least-squares fit of D, d from paired rows (z_i -> x_i).
  void fit_decoder(std::span<const double> zs, std::span<const double> xs);
  /// D = pinv(E), d = -pinv(E) e.
  void set_decoder_pseudo_inverse();

  const std::vector<double>& encoder_matrix() const { return enc_w_; }  // latent x data, row-major
  const std::vector<double>& encoder_bias() const { return enc_b_; }
  const std::vector<double>& decoder_matrix() const { return dec_w_; }  // data x latent, row-major
  const std::vector<double>& decoder_bias() const { return dec_b_; }

  /// Multiply-add count of one decode (2mn + bias adds).
  double decode_flops() const;
  double encode_flops() const;

  static LatentCodec from_affine(std::vector<double> enc_w, std::vector<double> enc_b,
                                 std::vector<double> dec_w, std::vector<double> dec_b, int data_dim,
                                 int latent_dim);

 private:
  int data_dim_ = 0;
  int latent_dim_ = 0;
  bool identity_ = false;
  bool encoder_fitted_ = false;
  bool decoder_fitted_ = false;
  std::vector<double> enc_w_, enc_b_, dec_w_, dec_b_;
};

}  // namespace hsd::diffusion
