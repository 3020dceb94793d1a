#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsd/denoiser/architecture.hpp"
#include "hsd/denoiser/training.hpp"
#include "hsd/diffusion/sampler.hpp"
#include "hsd/diffusion/schedule.hpp"
#include "hsd/edgecloud/cost.hpp"
#include "hsd/eval/dataset.hpp"
#include "hsd/hybrid/handoff.hpp"
#include "hsd/pruning/pruning.hpp"

namespace hsd::eval {

inline constexpr int kConfigVersion = 1;
inline constexpr int kResultsVersion = 1;

struct DatasetConfig {
  DatasetKind kind = DatasetKind::gaussian_mixture;
  int num_components = 4;
  int train_size = 4096;
  int test_size = 2048;
  std::uint64_t seed = 1;
  DatasetOptions options;
};

struct ScheduleConfig {
  diffusion::ScheduleKind kind = diffusion::ScheduleKind::linear;
  int train_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  diffusion::NoiseSchedule build() const;
};

struct PruningConfig {
  double a = 0.3;
  double b = 0.8;
  pruning::ProbeConfig probe;
};

struct EvaluationConfig {
  std::vector<int> k_sweep;
  int num_samples = 512;
  int sw_projections = 64;
  std::uint64_t sample_seed = 7;
  std::uint64_t metric_seed = 11;
  hybrid::TensorPrecision handoff_precision = hybrid::TensorPrecision::fp16;
};

struct CheckpointConfig {
  std::string dir;       // empty: keep models in memory only
  bool require = false;  // fail instead of training when a checkpoint is missing
};

/// Whole experiment, read from one JSON document with nested sections.
struct ExperimentConfig {
  DatasetConfig dataset;
  ScheduleConfig schedule;
  denoiser::ArchitectureDescriptor model;
  denoiser::TrainConfig training;
  PruningConfig pruning;
  denoiser::DistillConfig distill;
  diffusion::SamplerConfig sampler;
  EvaluationConfig evaluation;
  std::vector<std::uint64_t> training_seeds{1};
  edgecloud::ChannelModel channel;
  CheckpointConfig checkpoints;
  std::string output_dir = "results";
  int threads = 1;

  /// Throws std::invalid_argument on schema or value errors.
  void validate() const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static ExperimentConfig load(const std::filesystem::path& path);
};

struct MetricsRecord {
  std::string method;  // small_only, hybrid, large_only
  int k = 0;
  std::uint64_t seed = 0;  // training seed
  double sliced_wasserstein = 0.0;
  double mode_agreement = 0.0;
  double condition_accuracy = 0.0;
  double flops = 0.0;        // whole trajectory
  double cloud_flops = 0.0;
  double edge_flops = 0.0;
  std::size_t payload_bytes = 0;
  double transmission_s = 0.0;
  long long params_large = 0;
  long long params_small = 0;

  nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& j);
};

std::string method_for(int k, int steps);

/// Column order of results.csv.
const std::vector<std::string>& csv_columns();
std::string to_csv(const std::vector<MetricsRecord>& records);

/// Models and samples of one training seed.
struct SeedArtifacts {
  std::uint64_t seed = 0;
  denoiser::Network<float> large;
  pruning::SmallModel small;
  denoiser::TrainingLog large_log;
};

/// Train (or load) the large model and derive the small one for a training seed.
SeedArtifacts prepare_models(const ExperimentConfig& config, const ToyDataset& train, std::uint64_t seed);

struct SweepResult {
  std::vector<MetricsRecord> records;
  // Generated samples per k (num_samples x dim), in k_sweep order, plus the prompted classes.
  std::vector<std::vector<float>> samples;
  std::vector<int> classes;
};

/// Samples every k in the sweep and scores it against the test split.
SweepResult evaluate_sweep(const ExperimentConfig& config, const SeedArtifacts& models, const ToyDataset& test,
                           const diffusion::NoiseSchedule& schedule);

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  std::filesystem::path output_dir;
};

/// Runs all training seeds and writes results.csv, results.json, scatter SVGs and the
/// per-seed model reports. Nothing is written if the configuration is invalid.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// 2-D scatter of reference points (grey) and generated points (coloured by class).
std::string scatter_svg(std::span<const float> reference, std::span<const float> generated,
                        std::span<const int> classes, int dim, const std::string& title);

/// Aggregated table per (method, k) over training seeds, as markdown.
std::string report_markdown(const std::vector<MetricsRecord>& records);

std::vector<MetricsRecord> load_results(const std::filesystem::path& results_json);

/// Output directory with the HYBRIDSD_OUTPUT_DIR override applied.
std::filesystem::path resolve_output_dir(const std::string& configured);

}  // namespace hsd::eval
