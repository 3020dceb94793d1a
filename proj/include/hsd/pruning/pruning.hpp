#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsd/core/data.hpp"
#include "hsd/denoiser/network.hpp"
#include "hsd/denoiser/training.hpp"
#include "hsd/diffusion/sampler.hpp"

namespace hsd::pruning {

enum class UnitKind { res_first_layer, self_attn_heads, cross_attn_heads };

std::string to_string(UnitKind kind);
UnitKind parse_unit_kind(const std::string& name);

/// A prunable structure: the first linear layer of a residual block (grouping = single
/// hidden rows) or an attention layer (grouping = whole heads).
struct PrunableUnit {
  std::string name;  // block name: "res0", "self_attn", "cross_attn"
  UnitKind kind;
  int width = 0;  // hidden rows or heads
};

/// Units in block order.
std::vector<PrunableUnit> prunable_units(const denoiser::ArchitectureDescriptor& desc);

/// Surviving count for a ratio: round half away from zero of (1 - ratio) * width, at least 1.
int kept_units(int width, double ratio);

/// Per-group L1 norms of a unit: |fc1 row| for residual blocks; for attention heads the
/// summed |q|, |k|, |v| rows and |o| columns of the head.
std::vector<double> unit_l1_norms(const denoiser::Network<float>& net, const std::string& unit);

/// Indices of the `keep` largest norms, ascending; ties prefer the lower index.
std::vector<int> select_by_l1(std::span<const double> norms, int keep);

struct Prompt {
  int condition = 0;
  std::uint64_t seed = 0;
};

/// `count` prompts cycling through the classes, with derived trajectory seeds.
std::vector<Prompt> make_prompts(int count, int num_classes, std::uint64_t seed);

struct ProbeConfig {
  double probe_ratio = 0.5;
  int num_prompts = 50;
  diffusion::SamplerConfig sampler{diffusion::SamplerKind::ddim, 25, 7.0, 0.0};
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Final latents for each prompt (num_prompts x d).
std::vector<float> generate_latents(const denoiser::Network<float>& net, const diffusion::NoiseSchedule& schedule,
                                    std::span<const Prompt> prompts, const diffusion::SamplerConfig& sampler);

/// ||avg(z0) - avg(z0')||_2 + ||std(z0) - std(z0')||_2 with per-coordinate statistics over the
/// prompt batch (population standard deviation).
double significance_score(std::span<const float> z0, std::span<const float> z0_modified, int dim);

struct ScoreDetail {
  double score = 0.0;
  int dim = 0;
  std::vector<float> z0_reference;
  std::vector<float> z0_modified;
};

/// Scores one unit: prune it alone at probe_ratio (a copy; `model` is untouched), regenerate
/// the prompts, compare final-latent statistics. probe_ratio 0 is the null modification.
ScoreDetail probe_score(const denoiser::Network<float>& model, const diffusion::NoiseSchedule& schedule,
                        const std::string& unit, double probe_ratio, std::span<const Prompt> prompts,
                        const diffusion::SamplerConfig& sampler);

struct UnitScore {
  std::string name;
  UnitKind kind;
  int width = 0;
  double score = 0.0;
};

struct ScoreTable {
  std::vector<UnitScore> units;  // block order
  ProbeConfig probe;
  std::vector<Prompt> prompts;

  nlohmann::json to_json() const;
  static ScoreTable from_json(const nlohmann::json& j);
};

/// Scores every prunable unit; units run in parallel on private copies when probe.threads > 1.
ScoreTable score_units(const denoiser::Network<float>& model, const diffusion::NoiseSchedule& schedule,
                       const ProbeConfig& probe);

struct UnitPlan {
  std::string name;
  UnitKind kind;
  int width = 0;
  double score = 0.0;
  int rank = 0;           // ascending score rank, 0 = least significant
  double quantile = 0.0;  // rank / n
  double ratio = 0.0;
  int kept = 0;
};

struct PruningPlan {
  double a = 0.3;
  double b = 0.8;
  std::vector<UnitPlan> units;  // block order
  denoiser::ArchitectureDescriptor source;
  denoiser::ArchitectureDescriptor result;

  nlohmann::json to_json() const;
  static PruningPlan from_json(const nlohmann::json& j);
};

/// Rank units by score (ties: the earlier layer ranks higher) and map rank quantile
/// q = rank / n to a ratio: q < a -> 0.75, q >= b -> 0.25, otherwise 0.50.
PruningPlan assign_ratios(const ScoreTable& scores, double a, double b, const denoiser::ArchitectureDescriptor& source);

/// Plan that prunes a single unit at `ratio` and leaves the rest intact.
PruningPlan single_unit_plan(const denoiser::ArchitectureDescriptor& source, const std::string& unit, double ratio);

/// Plan with explicit per-unit ratios (missing units keep ratio 0).
PruningPlan explicit_plan(const denoiser::ArchitectureDescriptor& source,
                          const std::vector<std::pair<std::string, double>>& ratios);

/// Structured L1 pruning: keeps the top rows/heads of every unit, removes the matching
/// input columns of the following projection. Block output widths are unchanged.
denoiser::Network<float> prune(const denoiser::Network<float>& model, const PruningPlan& plan);

struct SmallModelReport {
  long long params_before = 0;
  long long params_after = 0;
  double flops_before = 0.0;
  double flops_after = 0.0;
  ScoreTable scores;
  PruningPlan plan;
  denoiser::TrainingLog distill_log;

  double param_reduction() const { return 1.0 - static_cast<double>(params_after) / static_cast<double>(params_before); }
  nlohmann::json to_json() const;
};

struct SmallModel {
  denoiser::Network<float> pruned;     // before distillation
  denoiser::Network<float> distilled;  // final small model
  SmallModelReport report;
};

/// score -> assign -> prune -> distill.
SmallModel build_small_model(const denoiser::Network<float>& teacher, const LabeledData& data,
                             const diffusion::NoiseSchedule& schedule, double a, double b,
                             const denoiser::DistillConfig& distill_config, const ProbeConfig& probe);

nlohmann::json training_log_json(const denoiser::TrainingLog& log);

}  // namespace hsd::pruning
