#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace hsd::denoiser {

enum class ModelRole { large, small };

std::string to_string(ModelRole role);
ModelRole parse_model_role(const std::string& name);

struct AttentionSpec {
  int embed_dim = 64;
  int num_heads = 4;

  int head_dim() const { return num_heads > 0 ? embed_dim / num_heads : 0; }
  bool operator==(const AttentionSpec&) const = default;
};

enum class BlockKind { residual, self_attention, cross_attention };

struct BlockRef {
  BlockKind kind;
  int index;  // position in res_hidden for residual blocks, 0 otherwise
  std::string name;
};

/// Shape of a token-based epsilon predictor.
///
/// The latent z (latent_dim) is lifted to num_tokens tokens of width
/// model_dim. Residual MLP blocks act token-wise; one self-attention block
/// over the latent tokens and one cross-attention block over the condition
/// tokens sit after `attention_position` residual blocks. The first linear
/// layer of each residual block and the heads of both attention layers are
/// the prunable structures; pruning never changes model_dim, so every block
/// output keeps its shape.
struct ArchitectureDescriptor {
  int latent_dim = 2;
  int num_tokens = 4;
  int model_dim = 64;
  std::vector<int> res_hidden{128, 128, 128, 128};
  int attention_position = 2;  // < 0 disables attention (and conditioning)
  AttentionSpec self_attention{64, 4};
  AttentionSpec cross_attention{64, 4};
  int num_condition_tokens = 4;
  int num_classes = 4;
  int time_embed_dim = 16;  // sinusoidal features of t/T; 0 disables the time path
  int time_hidden = 32;
  int train_steps = 1000;
  bool output_norm = true;

  int num_res_blocks() const { return static_cast<int>(res_hidden.size()); }
  bool has_attention() const { return attention_position >= 0; }
  int condition_width() const { return num_condition_tokens * model_dim; }
  int null_class() const { return num_classes; }

  std::vector<BlockRef> blocks() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ArchitectureDescriptor from_json(const nlohmann::json& j);

  bool operator==(const ArchitectureDescriptor&) const = default;
};

/// 4 residual blocks of width 128, attention width 64 with 4 heads.
ArchitectureDescriptor default_large_descriptor();

struct ParamShape {
  std::string name;
  std::vector<int> shape;
};

/// Ordered parameter list implied by a descriptor.
std::vector<ParamShape> parameter_shapes(const ArchitectureDescriptor& desc);
long long parameter_count(const ArchitectureDescriptor& desc);

}  // namespace hsd::denoiser
