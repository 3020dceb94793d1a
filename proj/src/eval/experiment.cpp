#include "hsd/eval/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "hsd/core/parallel.hpp"
#include "hsd/core/rng.hpp"
#include "hsd/denoiser/checkpoint.hpp"
#include "hsd/eval/flops.hpp"
#include "hsd/eval/metrics.hpp"
#include "hsd/hybrid/hybrid.hpp"

namespace hsd::eval {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument("config: section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown key '" + key + "' in section '" + section + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json sampler_json(const diffusion::SamplerConfig& s) {
  return {{"kind", diffusion::to_string(s.kind)},
          {"steps", s.num_inference_steps},
          {"guidance_scale", s.guidance_scale},
          {"eta", s.eta}};
}

diffusion::SamplerConfig sampler_from(const json& j, diffusion::SamplerConfig s, const std::string& section) {
  check_keys(j, {"kind", "steps", "guidance_scale", "eta"}, section);
  std::string kind = diffusion::to_string(s.kind);
  read(j, "kind", kind);
  try {
    s.kind = diffusion::parse_sampler_kind(kind);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  read(j, "steps", s.num_inference_steps);
  read(j, "guidance_scale", s.guidance_scale);
  read(j, "eta", s.eta);
  return s;
}

std::string precision_name(hybrid::TensorPrecision p) { return p == hybrid::TensorPrecision::fp16 ? "fp16" : "fp32"; }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

diffusion::NoiseSchedule ScheduleConfig::build() const {
  return diffusion::build_schedule(train_steps, beta_min, beta_max, kind);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (dataset.num_components < 1) fail("dataset.num_components must be >= 1");
  if (dataset.train_size < dataset.num_components || dataset.test_size < dataset.num_components)
    fail("dataset sizes must be >= num_components");
  if (dataset.kind == DatasetKind::two_moons && dataset.num_components != 2) fail("two_moons needs 2 components");
  if (schedule.train_steps < 1) fail("schedule.train_steps must be >= 1");
  model.validate();
  if (model.train_steps != schedule.train_steps) fail("model.train_steps must equal schedule.train_steps");
  if (model.num_classes != dataset.num_components) fail("model.num_classes must equal dataset.num_components");
  if (model.latent_dim != 2) fail("model.latent_dim must be 2 for the toy datasets");
  if (training.steps < 0 || training.batch_size < 1) fail("training steps/batch_size invalid");
  if (training.final_lr_fraction < 0.0 || training.final_lr_fraction > 1.0) fail("training.final_lr_fraction must lie in [0, 1]");
  if (distill.final_lr_fraction < 0.0 || distill.final_lr_fraction > 1.0) fail("distill.final_lr_fraction must lie in [0, 1]");
  distill.validate();
  if (!(pruning.a >= 0.0 && pruning.a < pruning.b && pruning.b <= 1.0)) fail("pruning needs 0 <= a < b <= 1");
  if (!(pruning.probe.probe_ratio > 0.0 && pruning.probe.probe_ratio < 1.0)) fail("pruning.probe_ratio must be in (0, 1)");
  if (pruning.probe.num_prompts < 1) fail("pruning.num_prompts must be >= 1");
  pruning.probe.sampler.validate(schedule.train_steps);
  sampler.validate(schedule.train_steps);
  if (evaluation.k_sweep.empty()) fail("evaluation.k_sweep must not be empty");
  std::set<int> seen;
  for (int k : evaluation.k_sweep) {
    if (k < 0 || k > sampler.num_inference_steps)
      fail("k=" + std::to_string(k) + " outside [0, " + std::to_string(sampler.num_inference_steps) + "]");
    if (!seen.insert(k).second) fail("duplicate k=" + std::to_string(k) + " in k_sweep");
  }
  if (evaluation.num_samples < 1) fail("evaluation.num_samples must be >= 1");
  if (evaluation.sw_projections < 1) fail("evaluation.sw_projections must be >= 1");
  if (training_seeds.empty()) fail("training_seeds must not be empty");
  if (std::set<std::uint64_t>(training_seeds.begin(), training_seeds.end()).size() != training_seeds.size())
    fail("duplicate training seed");
  channel.validate();
  if (threads < 1) fail("threads must be >= 1");
  if (checkpoints.require && checkpoints.dir.empty()) fail("checkpoints.require needs checkpoints.dir");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"version", "output_dir", "threads", "dataset", "schedule", "model", "training", "pruning", "distill",
                 "sampler", "evaluation", "training_seeds", "channel", "checkpoints"},
             "root");
  if (j.contains("version") && j.at("version") != kConfigVersion)
    throw std::invalid_argument("config: unsupported version " + j.at("version").dump());
  ExperimentConfig c;
  read(j, "output_dir", c.output_dir);
  read(j, "threads", c.threads);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"kind", "num_components", "train_size", "test_size", "seed", "radius", "std"}, "dataset");
    std::string kind = to_string(c.dataset.kind);
    read(d, "kind", kind);
    try {
      c.dataset.kind = parse_dataset_kind(kind);
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
    read(d, "num_components", c.dataset.num_components);
    read(d, "train_size", c.dataset.train_size);
    read(d, "test_size", c.dataset.test_size);
    read(d, "seed", c.dataset.seed);
    read(d, "radius", c.dataset.options.radius);
    read(d, "std", c.dataset.options.std);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, {"kind", "train_steps", "beta_min", "beta_max"}, "schedule");
    std::string kind = diffusion::to_string(c.schedule.kind);
    read(s, "kind", kind);
    try {
      c.schedule.kind = diffusion::parse_schedule_kind(kind);
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
    read(s, "train_steps", c.schedule.train_steps);
    read(s, "beta_min", c.schedule.beta_min);
    read(s, "beta_max", c.schedule.beta_max);
  }

  // Model: defaults patched by the given fields; classes and steps follow dataset/schedule.
  json m = denoiser::default_large_descriptor().to_json();
  m.erase("num_res_blocks");
  m["num_classes"] = c.dataset.num_components;
  m["train_steps"] = c.schedule.train_steps;
  if (j.contains("model")) {
    const auto& mj = j.at("model");
    std::set<std::string> allowed;
    for (const auto& [key, _] : m.items()) allowed.insert(key);
    check_keys(mj, allowed, "model");
    m.merge_patch(mj);
  }
  try {
    c.model = denoiser::ArchitectureDescriptor::from_json(m);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: bad model section: ") + e.what());
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, {"learning_rate", "final_lr_fraction", "batch_size", "steps", "cond_dropout", "log_every", "validation_size"}, "training");
    read(t, "learning_rate", c.training.learning_rate);
    read(t, "final_lr_fraction", c.training.final_lr_fraction);
    read(t, "batch_size", c.training.batch_size);
    read(t, "steps", c.training.steps);
    read(t, "cond_dropout", c.training.cond_dropout);
    read(t, "log_every", c.training.log_every);
    read(t, "validation_size", c.training.validation_size);
  }
  if (j.contains("pruning")) {
    const auto& p = j.at("pruning");
    check_keys(p, {"a", "b", "probe_ratio", "num_prompts", "probe_seed", "probe_sampler"}, "pruning");
    read(p, "a", c.pruning.a);
    read(p, "b", c.pruning.b);
    read(p, "probe_ratio", c.pruning.probe.probe_ratio);
    read(p, "num_prompts", c.pruning.probe.num_prompts);
    read(p, "probe_seed", c.pruning.probe.seed);
    if (p.contains("probe_sampler"))
      c.pruning.probe.sampler = sampler_from(p.at("probe_sampler"), c.pruning.probe.sampler, "pruning.probe_sampler");
  }
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    check_keys(d, {"lambda_outkd", "lambda_featkd", "learning_rate", "final_lr_fraction", "batch_size", "steps", "cond_dropout", "log_every",
                   "validation_size", "frozen"},
               "distill");
    read(d, "lambda_outkd", c.distill.lambda_outkd);
    read(d, "lambda_featkd", c.distill.lambda_featkd);
    read(d, "learning_rate", c.distill.learning_rate);
    read(d, "final_lr_fraction", c.distill.final_lr_fraction);
    read(d, "batch_size", c.distill.batch_size);
    read(d, "steps", c.distill.steps);
    read(d, "cond_dropout", c.distill.cond_dropout);
    read(d, "log_every", c.distill.log_every);
    read(d, "validation_size", c.distill.validation_size);
    read(d, "frozen", c.distill.frozen);
  }
  if (j.contains("sampler")) c.sampler = sampler_from(j.at("sampler"), c.sampler, "sampler");
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    check_keys(e, {"k_sweep", "num_samples", "sw_projections", "sample_seed", "metric_seed", "handoff_precision"},
               "evaluation");
    read(e, "k_sweep", c.evaluation.k_sweep);
    read(e, "num_samples", c.evaluation.num_samples);
    read(e, "sw_projections", c.evaluation.sw_projections);
    read(e, "sample_seed", c.evaluation.sample_seed);
    read(e, "metric_seed", c.evaluation.metric_seed);
    std::string prec = precision_name(c.evaluation.handoff_precision);
    read(e, "handoff_precision", prec);
    if (prec == "fp16")
      c.evaluation.handoff_precision = hybrid::TensorPrecision::fp16;
    else if (prec == "fp32")
      c.evaluation.handoff_precision = hybrid::TensorPrecision::fp32;
    else
      throw std::invalid_argument("config: handoff_precision must be fp16 or fp32");
  }
  read(j, "training_seeds", c.training_seeds);
  if (j.contains("channel")) {
    const auto& ch = j.at("channel");
    check_keys(ch, {"bandwidth_bps", "latency_s"}, "channel");
    read(ch, "bandwidth_bps", c.channel.bandwidth_bps);
    read(ch, "latency_s", c.channel.latency_s);
  }
  if (j.contains("checkpoints")) {
    const auto& ck = j.at("checkpoints");
    check_keys(ck, {"dir", "require"}, "checkpoints");
    read(ck, "dir", c.checkpoints.dir);
    read(ck, "require", c.checkpoints.require);
  }
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  json m = model.to_json();
  m.erase("num_res_blocks");
  return {
      {"version", kConfigVersion},
      {"output_dir", output_dir},
      {"threads", threads},
      {"dataset",
       {{"kind", eval::to_string(dataset.kind)},
        {"num_components", dataset.num_components},
        {"train_size", dataset.train_size},
        {"test_size", dataset.test_size},
        {"seed", dataset.seed},
        {"radius", dataset.options.radius},
        {"std", dataset.options.std}}},
      {"schedule",
       {{"kind", diffusion::to_string(schedule.kind)},
        {"train_steps", schedule.train_steps},
        {"beta_min", schedule.beta_min},
        {"beta_max", schedule.beta_max}}},
      {"model", m},
      {"training",
       {{"learning_rate", training.learning_rate},
        {"final_lr_fraction", training.final_lr_fraction},
        {"batch_size", training.batch_size},
        {"steps", training.steps},
        {"cond_dropout", training.cond_dropout},
        {"log_every", training.log_every},
        {"validation_size", training.validation_size}}},
      {"pruning",
       {{"a", pruning.a},
        {"b", pruning.b},
        {"probe_ratio", pruning.probe.probe_ratio},
        {"num_prompts", pruning.probe.num_prompts},
        {"probe_seed", pruning.probe.seed},
        {"probe_sampler", sampler_json(pruning.probe.sampler)}}},
      {"distill",
       {{"lambda_outkd", distill.lambda_outkd},
        {"lambda_featkd", distill.lambda_featkd},
        {"learning_rate", distill.learning_rate},
        {"final_lr_fraction", distill.final_lr_fraction},
        {"batch_size", distill.batch_size},
        {"steps", distill.steps},
        {"cond_dropout", distill.cond_dropout},
        {"log_every", distill.log_every},
        {"validation_size", distill.validation_size},
        {"frozen", distill.frozen}}},
      {"sampler", sampler_json(sampler)},
      {"evaluation",
       {{"k_sweep", evaluation.k_sweep},
        {"num_samples", evaluation.num_samples},
        {"sw_projections", evaluation.sw_projections},
        {"sample_seed", evaluation.sample_seed},
        {"metric_seed", evaluation.metric_seed},
        {"handoff_precision", precision_name(evaluation.handoff_precision)}}},
      {"training_seeds", training_seeds},
      {"channel", {{"bandwidth_bps", channel.bandwidth_bps}, {"latency_s", channel.latency_s}}},
      {"checkpoints", {{"dir", checkpoints.dir}, {"require", checkpoints.require}}},
  };
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string method_for(int k, int steps) {
  if (k == 0) return "small_only";
  if (k == steps) return "large_only";
  return "hybrid";
}

json MetricsRecord::to_json() const {
  return {{"method", method},
          {"k", k},
          {"seed", seed},
          {"sliced_wasserstein", sliced_wasserstein},
          {"mode_agreement", mode_agreement},
          {"condition_accuracy", condition_accuracy},
          {"flops", flops},
          {"cloud_flops", cloud_flops},
          {"edge_flops", edge_flops},
          {"payload_bytes", payload_bytes},
          {"transmission_s", transmission_s},
          {"params_large", params_large},
          {"params_small", params_small}};
}

MetricsRecord MetricsRecord::from_json(const json& j) {
  MetricsRecord r;
  r.method = j.at("method").get<std::string>();
  r.k = j.at("k").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.sliced_wasserstein = j.at("sliced_wasserstein").get<double>();
  r.mode_agreement = j.at("mode_agreement").get<double>();
  r.condition_accuracy = j.at("condition_accuracy").get<double>();
  r.flops = j.at("flops").get<double>();
  r.cloud_flops = j.at("cloud_flops").get<double>();
  r.edge_flops = j.at("edge_flops").get<double>();
  r.payload_bytes = j.at("payload_bytes").get<std::size_t>();
  r.transmission_s = j.at("transmission_s").get<double>();
  r.params_large = j.at("params_large").get<long long>();
  r.params_small = j.at("params_small").get<long long>();
  return r;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"method",         "k",           "seed",           "sliced_wasserstein",
                                             "mode_agreement", "condition_accuracy", "flops",  "cloud_flops",
                                             "edge_flops",     "payload_bytes", "transmission_s", "params_large",
                                             "params_small"};
  return cols;
}

std::string to_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : records) {
    os << r.method << ',' << r.k << ',' << r.seed << ',' << fmt(r.sliced_wasserstein) << ',' << fmt(r.mode_agreement)
       << ',' << fmt(r.condition_accuracy) << ',' << fmt(r.flops) << ',' << fmt(r.cloud_flops) << ','
       << fmt(r.edge_flops) << ',' << r.payload_bytes << ',' << fmt(r.transmission_s) << ',' << r.params_large << ','
       << r.params_small << '\n';
  }
  return os.str();
}

SeedArtifacts prepare_models(const ExperimentConfig& config, const ToyDataset& train, std::uint64_t seed) {
  const auto schedule = config.schedule.build();
  SeedArtifacts art;
  art.seed = seed;
  namespace fs = std::filesystem;
  const bool use_ckpt = !config.checkpoints.dir.empty();
  const fs::path dir = config.checkpoints.dir;
  const fs::path large_path = dir / ("large_seed" + std::to_string(seed) + ".hsdw");
  const fs::path small_path = dir / ("small_seed" + std::to_string(seed) + ".hsdw");

  if (use_ckpt && fs::exists(large_path) && fs::exists(small_path)) {
    art.large = denoiser::load_checkpoint(large_path);
    art.small.distilled = denoiser::load_checkpoint(small_path);
    if (!(art.large.descriptor() == config.model))
      throw std::invalid_argument("checkpoint " + large_path.string() + " does not match the configured model");
    auto& rep = art.small.report;
    rep.params_before = denoiser::parameter_count(art.large.descriptor());
    rep.params_after = denoiser::parameter_count(art.small.distilled.descriptor());
    rep.flops_before = flops_count(art.large.descriptor());
    rep.flops_after = flops_count(art.small.distilled.descriptor());
    return art;
  }
  if (config.checkpoints.require)
    throw std::runtime_error("missing checkpoint for training seed " + std::to_string(seed) + " in " + dir.string());

  art.large = denoiser::Network<float>::initialized(config.model, denoiser::ModelRole::large, mix_seed(seed, 1));
  auto tc = config.training;
  tc.seed = mix_seed(seed, 2);
  art.large_log = denoiser::train_task(art.large, train.data, schedule, tc);

  auto dc = config.distill;
  dc.seed = mix_seed(seed, 3);
  art.small = pruning::build_small_model(art.large, train.data, schedule, config.pruning.a, config.pruning.b, dc,
                                         config.pruning.probe);
  if (use_ckpt) {
    fs::create_directories(dir);
    denoiser::save_checkpoint(art.large, large_path);
    denoiser::save_checkpoint(art.small.distilled, small_path);
  }
  return art;
}

SweepResult evaluate_sweep(const ExperimentConfig& config, const SeedArtifacts& models, const ToyDataset& test,
                           const diffusion::NoiseSchedule& schedule) {
  const auto& ev = config.evaluation;
  const int n = config.sampler.num_inference_steps;
  const int dim = test.dim();
  const int count = ev.num_samples;

  SweepResult out;
  out.classes.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.classes[static_cast<std::size_t>(i)] = i % test.num_components;

  auto generate = [&](int k) {
    hybrid::HybridPlan plan;
    plan.large = &models.large;
    plan.small = &models.small.distilled;
    plan.sampler = config.sampler;
    plan.cloud_steps = k;
    plan.precision = ev.handoff_precision;
    std::vector<float> pts(static_cast<std::size_t>(count) * dim);
    std::size_t payload = 0;
    parallel_for(count, config.threads, [&](int i) {
      const auto r = hybrid::run_hybrid(plan, schedule, mix_seed(ev.sample_seed, static_cast<std::uint64_t>(i)),
                                        hybrid::ConditionInput::from_class(out.classes[static_cast<std::size_t>(i)]));
      std::copy(r.sample.begin(), r.sample.end(), pts.begin() + static_cast<std::ptrdiff_t>(i) * dim);
      if (i == 0) payload = r.packet.encoded_size();
    });
    return std::pair{pts, payload};
  };

  const auto [reference, ref_payload] = generate(n);
  (void)ref_payload;
  const int fwd = forwards_per_step(config.sampler.guidance_scale);
  const double f_l = flops_count(models.large.descriptor()) * fwd;
  const double f_s = flops_count(models.small.distilled.descriptor()) * fwd;
  const long long p_l = denoiser::parameter_count(models.large.descriptor());
  const long long p_s = denoiser::parameter_count(models.small.distilled.descriptor());

  for (int k : ev.k_sweep) {
    auto [pts, payload] = k == n ? std::pair{reference, ref_payload} : generate(k);
    MetricsRecord r;
    r.method = method_for(k, n);
    r.k = k;
    r.seed = models.seed;
    r.sliced_wasserstein = sliced_wasserstein(pts, test.data.points, dim, ev.sw_projections, ev.metric_seed);
    r.mode_agreement = mode_agreement(pts, reference, test.component_means, dim);
    r.condition_accuracy = condition_accuracy(pts, out.classes, test.component_means, dim);
    r.flops = edgecloud::hybrid_total_flops(n * f_s, n * f_l, n, k);
    const auto cost = edgecloud::split_cost({f_l, f_s, 0.0, n, k}, payload, config.channel);
    r.cloud_flops = cost.cloud_flops;
    r.edge_flops = cost.edge_flops;
    r.payload_bytes = payload;
    r.transmission_s = cost.transmission_s;
    r.params_large = p_l;
    r.params_small = p_s;
    out.records.push_back(r);
    out.samples.push_back(std::move(pts));
  }
  return out;
}

std::filesystem::path resolve_output_dir(const std::string& configured) {
  if (const char* env = std::getenv("HYBRIDSD_OUTPUT_DIR"); env && *env) return env;
  return configured;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto schedule = config.schedule.build();
  const auto train = gen_dataset(config.dataset.kind, config.dataset.train_size, config.dataset.num_components,
                                 config.dataset.seed, config.dataset.options);
  const auto test = gen_dataset(config.dataset.kind, config.dataset.test_size, config.dataset.num_components,
                                mix_seed(config.dataset.seed, 77), config.dataset.options);

  const int n_seeds = static_cast<int>(config.training_seeds.size());
  std::vector<SeedArtifacts> arts(static_cast<std::size_t>(n_seeds));
  std::vector<SweepResult> sweeps(static_cast<std::size_t>(n_seeds));
  const int outer = std::min(config.threads, n_seeds);
  auto inner_cfg = config;
  inner_cfg.threads = std::max(1, config.threads / std::max(1, outer));
  inner_cfg.pruning.probe.threads = inner_cfg.threads;
  parallel_for(n_seeds, outer, [&](int s) {
    const auto seed = config.training_seeds[static_cast<std::size_t>(s)];
    arts[static_cast<std::size_t>(s)] = prepare_models(inner_cfg, train, seed);
    sweeps[static_cast<std::size_t>(s)] = evaluate_sweep(inner_cfg, arts[static_cast<std::size_t>(s)], test, schedule);
  });

  ExperimentResult result;
  result.output_dir = resolve_output_dir(config.output_dir);
  std::filesystem::create_directories(result.output_dir);
  json models = json::array();
  for (int s = 0; s < n_seeds; ++s) {
    const auto& sw = sweeps[static_cast<std::size_t>(s)];
    const auto& art = arts[static_cast<std::size_t>(s)];
    result.records.insert(result.records.end(), sw.records.begin(), sw.records.end());
    for (std::size_t i = 0; i < sw.records.size(); ++i) {
      const auto& r = sw.records[i];
      const auto name = "scatter_seed" + std::to_string(r.seed) + "_k" + std::to_string(r.k) + ".svg";
      write_text(result.output_dir / name,
                 scatter_svg(test.data.points, sw.samples[i], sw.classes, test.dim(),
                             r.method + " k=" + std::to_string(r.k) + " seed=" + std::to_string(r.seed)));
    }
    json m = art.small.report.to_json();
    m["seed"] = art.seed;
    m["large_training"] = pruning::training_log_json(art.large_log);
    models.push_back(std::move(m));
  }
  write_text(result.output_dir / "results.csv", to_csv(result.records));
  json records = json::array();
  for (const auto& r : result.records) records.push_back(r.to_json());
  json doc{{"version", kResultsVersion}, {"config", config.to_json()}, {"records", records}, {"models", models}};
  write_text(result.output_dir / "results.json", doc.dump(2) + "\n");
  write_text(result.output_dir / "report.md", report_markdown(result.records));
  return result;
}

std::string scatter_svg(std::span<const float> reference, std::span<const float> generated, std::span<const int> classes,
                        int dim, const std::string& title) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  const int size = 420, pad = 30;
  double lo_x = -1, hi_x = 1, lo_y = -1, hi_y = 1;
  bool first = true;
  auto extend = [&](std::span<const float> pts) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(dim) <= pts.size(); i += static_cast<std::size_t>(dim)) {
      const double x = pts[i], y = dim > 1 ? pts[i + 1] : 0.0;
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        lo_x = hi_x = x;
        lo_y = hi_y = y;
        first = false;
      }
      lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
      lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
    }
  };
  extend(reference);
  extend(generated);
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-6}) * 1.05;
  const double cx = 0.5 * (lo_x + hi_x), cy = 0.5 * (lo_y + hi_y);
  auto px = [&](double x) { return pad + (x - cx + span / 2) / span * (size - 2 * pad); };
  auto py = [&](double y) { return size - pad - (y - cy + span / 2) / span * (size - 2 * pad); };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\" viewBox=\"0 0 "
     << size << ' ' << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">" << title << "</text>\n";
  for (std::size_t i = 0; i + static_cast<std::size_t>(dim) <= reference.size(); i += static_cast<std::size_t>(dim)) {
    const double x = reference[i], y = dim > 1 ? reference[i + 1] : 0.0;
    if (!std::isfinite(x) || !std::isfinite(y)) continue;
    os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"1.5\" fill=\"#bbbbbb\"/>\n";
  }
  for (std::size_t i = 0, p = 0; i + static_cast<std::size_t>(dim) <= generated.size(); i += static_cast<std::size_t>(dim), ++p) {
    const double x = generated[i], y = dim > 1 ? generated[i + 1] : 0.0;
    if (!std::isfinite(x) || !std::isfinite(y)) continue;
    const int c = p < classes.size() ? classes[p] : 0;
    os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2\" fill=\"" << palette[static_cast<std::size_t>(c) % 8]
       << "\" fill-opacity=\"0.7\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string report_markdown(const std::vector<MetricsRecord>& records) {
  struct Agg {
    std::string method;
    std::vector<double> sw, ma, ca;
    double flops = 0, cloud = 0, edge = 0, tx = 0;
    std::size_t payload = 0;
    long long pl = 0, ps = 0;
  };
  std::map<int, Agg> by_k;
  for (const auto& r : records) {
    auto& a = by_k[r.k];
    a.method = r.method;
    a.sw.push_back(r.sliced_wasserstein);
    a.ma.push_back(r.mode_agreement);
    a.ca.push_back(r.condition_accuracy);
    a.flops = r.flops;
    a.cloud = r.cloud_flops;
    a.edge = r.edge_flops;
    a.payload = r.payload_bytes;
    a.tx = r.transmission_s;
    a.pl = r.params_large;
    a.ps = r.params_small;
  }
  std::ostringstream os;
  os << "| method | k | seeds | sliced W2 | mode agreement | condition acc. | FLOPs | cloud FLOPs | edge FLOPs | "
        "payload B | transmit s |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  os << std::setprecision(4);
  for (const auto& [k, a] : by_k) {
    os << "| " << a.method << " | " << k << " | " << a.sw.size() << " | " << mean(a.sw) << " | " << mean(a.ma) << " | "
       << mean(a.ca) << " | " << std::setprecision(6) << a.flops << " | " << a.cloud << " | " << a.edge << " | "
       << a.payload << " | " << a.tx << std::setprecision(4) << " |\n";
  }
  if (!records.empty()) {
    os << "\nParameters: large " << records.front().params_large << ", small " << records.front().params_small << ".\n";
  }
  return os.str();
}

std::vector<MetricsRecord> load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  const auto doc = json::parse(in);
  if (doc.at("version") != kResultsVersion) throw std::invalid_argument("unsupported results version");
  std::vector<MetricsRecord> out;
  for (const auto& r : doc.at("records")) out.push_back(MetricsRecord::from_json(r));
  return out;
}

}  // namespace hsd::eval
