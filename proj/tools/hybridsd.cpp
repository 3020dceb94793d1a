#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "hsd/core/rng.hpp"
#include "hsd/denoiser/checkpoint.hpp"
#include "hsd/denoiser/training.hpp"
#include "hsd/edgecloud/service.hpp"
#include "hsd/eval/experiment.hpp"
#include "hsd/eval/flops.hpp"
#include "hsd/hybrid/hybrid.hpp"
#include "hsd/pruning/pruning.hpp"

using namespace hsd;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

eval::ExperimentConfig load_config(const std::string& path) {
  auto config = eval::ExperimentConfig::load(path);
  if (const char* env = std::getenv("HYBRIDSD_THREADS"); env && *env) {
    config.threads = std::max(1, std::atoi(env));
    config.pruning.probe.threads = config.threads;
  }
  return config;
}

// Output paths relative to HYBRIDSD_OUTPUT_DIR when it is set.
fs::path output_path(const std::string& p) {
  const fs::path path = p;
  if (const char* env = std::getenv("HYBRIDSD_OUTPUT_DIR"); env && *env && path.is_relative()) {
    fs::create_directories(env);
    return fs::path(env) / path;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

void write_json(const std::string& p, const json& j) {
  const auto path = output_path(p);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
  std::cout << "wrote " << path.string() << '\n';
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return json::parse(is);
}

void save_model(const denoiser::Network<float>& net, const std::string& p) {
  const auto path = output_path(p);
  denoiser::save_checkpoint(net, path);
  std::cout << "wrote " << path.string() << " (" << denoiser::parameter_count(net.descriptor()) << " parameters)\n";
}

// Schedule from a config file, or from a bare "schedule" section.
diffusion::NoiseSchedule load_schedule(const std::string& path) {
  const auto j = read_json(path);
  if (j.contains("schedule") || j.contains("version")) return eval::ExperimentConfig::from_json(j).schedule.build();
  return eval::ExperimentConfig::from_json(json{{"schedule", j}}).schedule.build();
}

std::pair<std::string, int> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw CLI::ValidationError("address", "expected host:port, got " + addr);
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

eval::ToyDataset train_split(const eval::ExperimentConfig& c) {
  return eval::gen_dataset(c.dataset.kind, c.dataset.train_size, c.dataset.num_components, c.dataset.seed,
                           c.dataset.options);
}

diffusion::SamplerConfig sampler_with(const eval::ExperimentConfig& c, std::optional<double> guidance) {
  auto s = c.sampler;
  if (guidance) s.guidance_scale = *guidance;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid large/small diffusion sampling on toy data"};
  app.require_subcommand(1);
  std::string config_path = "configs/default.json";
  app.add_option("-c,--config", config_path, "Experiment configuration (JSON)");

  std::uint64_t seed = 1;
  std::string out, model_path, teacher_path, scores_path, plan_path, large_path, small_path, schedule_path;
  std::optional<double> guidance;

  auto* train = app.add_subcommand("train", "Train the large model for one training seed");
  train->add_option("--seed", seed, "Training seed");
  train->add_option("-o,--out", out, "Checkpoint path")->required();
  train->callback([&] {
    const auto c = load_config(config_path);
    c.validate();
    auto net = denoiser::Network<float>::initialized(c.model, denoiser::ModelRole::large, mix_seed(seed, 1));
    auto tc = c.training;
    tc.seed = mix_seed(seed, 2);
    const auto log = denoiser::train_task(net, train_split(c).data, c.schedule.build(), tc);
    std::cout << "validation loss " << log.initial_validation.task << " -> " << log.final_validation.task << '\n';
    save_model(net, out);
    write_json(out + ".log.json", pruning::training_log_json(log));
  });

  auto* score = app.add_subcommand("score", "Significance score of every prunable unit");
  score->add_option("-m,--model", model_path, "Large model checkpoint")->required()->check(CLI::ExistingFile);
  score->add_option("-o,--out", out, "Score table (JSON)")->required();
  score->callback([&] {
    const auto c = load_config(config_path);
    const auto table = pruning::score_units(denoiser::load_checkpoint(model_path), c.schedule.build(), c.pruning.probe);
    for (const auto& u : table.units) std::cout << u.name << '\t' << u.score << '\n';
    write_json(out, table.to_json());
  });

  auto* prune = app.add_subcommand("prune", "Structured L1 pruning from a score table or a saved plan");
  prune->add_option("-m,--model", model_path, "Large model checkpoint")->required()->check(CLI::ExistingFile);
  auto* scores_opt = prune->add_option("--scores", scores_path, "Score table from `score`")->check(CLI::ExistingFile);
  auto* plan_opt = prune->add_option("--plan", plan_path, "Replay a saved pruning plan")->check(CLI::ExistingFile);
  scores_opt->excludes(plan_opt);
  prune->add_option("-o,--out", out, "Pruned checkpoint")->required();
  prune->callback([&] {
    const auto c = load_config(config_path);
    const auto model = denoiser::load_checkpoint(model_path);
    pruning::PruningPlan plan;
    if (!plan_path.empty()) {
      plan = pruning::PruningPlan::from_json(read_json(plan_path));
    } else if (!scores_path.empty()) {
      plan = pruning::assign_ratios(pruning::ScoreTable::from_json(read_json(scores_path)), c.pruning.a, c.pruning.b,
                                    model.descriptor());
    } else {
      throw CLI::ValidationError("prune", "one of --scores or --plan is required");
    }
    const auto pruned = pruning::prune(model, plan);
    for (const auto& u : plan.units) std::cout << u.name << "\tratio " << u.ratio << "\tkept " << u.kept << '/' << u.width << '\n';
    save_model(pruned, out);
    write_json(out + ".plan.json", plan.to_json());
  });

  auto* dist = app.add_subcommand("distill", "Distill a pruned student from its teacher");
  dist->add_option("-s,--student", model_path, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
  dist->add_option("-t,--teacher", teacher_path, "Large checkpoint")->required()->check(CLI::ExistingFile);
  dist->add_option("--seed", seed, "Training seed");
  dist->add_option("-o,--out", out, "Distilled checkpoint")->required();
  dist->callback([&] {
    const auto c = load_config(config_path);
    auto student = denoiser::load_checkpoint(model_path);
    const auto teacher = denoiser::load_checkpoint(teacher_path);
    auto dc = c.distill;
    dc.seed = mix_seed(seed, 3);
    const auto log = denoiser::distill(student, teacher, train_split(c).data, c.schedule.build(), dc);
    std::cout << "validation total " << log.initial_validation.total << " -> " << log.final_validation.total << '\n';
    save_model(student, out);
    write_json(out + ".log.json", pruning::training_log_json(log));
  });

  int k = 0, count = 256, condition = 0;
  auto* smp = app.add_subcommand("sample", "In-process hybrid sampling");
  smp->add_option("--large", large_path, "Large checkpoint")->required()->check(CLI::ExistingFile);
  smp->add_option("--small", small_path, "Small checkpoint")->required()->check(CLI::ExistingFile);
  smp->add_option("-k,--cloud-steps", k, "Large-model steps before the handoff");
  smp->add_option("-n,--count", count, "Number of samples (classes cycle)")->check(CLI::PositiveNumber);
  smp->add_option("--seed", seed, "First trajectory seed");
  smp->add_option("-w,--guidance", guidance, "Override the guidance scale");
  smp->add_option("-o,--out", out, "CSV of samples; an SVG scatter is written next to it")->required();
  smp->callback([&] {
    const auto c = load_config(config_path);
    const auto schedule = c.schedule.build();
    const auto large = denoiser::load_checkpoint(large_path);
    const auto small = denoiser::load_checkpoint(small_path);
    const hybrid::HybridPlan plan{&large, &small, sampler_with(c, guidance), k};
    plan.validate(schedule);
    const int dim = large.descriptor().latent_dim;
    const int classes = large.descriptor().num_classes;
    std::vector<float> points;
    std::vector<int> labels;
    std::ostringstream csv;
    csv << "seed,class";
    for (int d = 0; d < dim; ++d) csv << ",x" << d;
    csv << '\n';
    for (int i = 0; i < count; ++i) {
      const auto s = seed + static_cast<std::uint64_t>(i);
      const auto r = hybrid::run_hybrid(plan, schedule, s, hybrid::ConditionInput::from_class(i % classes));
      csv << s << ',' << i % classes;
      for (float v : r.sample) csv << ',' << v;
      csv << '\n';
      points.insert(points.end(), r.sample.begin(), r.sample.end());
      labels.push_back(i % classes);
    }
    const auto path = output_path(out);
    std::ofstream(path) << csv.str();
    const auto ref = eval::gen_dataset(c.dataset.kind, c.dataset.test_size, c.dataset.num_components,
                                       mix_seed(c.dataset.seed, 77), c.dataset.options);
    auto svg_path = path;
    svg_path.replace_extension(".svg");
    std::ofstream(svg_path) << eval::scatter_svg(ref.data.points, points, labels, dim,
                                                 eval::method_for(k, plan.total_steps()) + " k=" + std::to_string(k));
    std::cout << "wrote " << path.string() << " and " << svg_path.string() << '\n';
  });

  std::string bind = "127.0.0.1:7070", log_path;
  auto* serve = app.add_subcommand("serve", "Run the cloud side (large model) until interrupted");
  serve->add_option("--bind", bind, "host:port to listen on");
  serve->add_option("--large", large_path, "Large checkpoint")->required()->check(CLI::ExistingFile);
  serve->add_option("--schedule", schedule_path, "Config or schedule JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--log", log_path, "Request log (JSON lines)");
  serve->callback([&] {
    const auto schedule = load_schedule(schedule_path);
    const auto large = denoiser::load_checkpoint(large_path);
    const auto [host, port] = split_address(bind);
    edgecloud::CloudServer server(large, schedule, {host, port, 30.0, log_path});
    const int bound = server.start();
    std::cout << "serving on " << host << ':' << bound << std::endl;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    std::cout << "served " << server.log().size() << " requests\n";
  });

  std::string server_addr = "127.0.0.1:7070", precision = "fp16";
  double bandwidth = 18.88e6, latency = 0.0;
  bool no_delay = false;
  auto* client = app.add_subcommand("client", "Edge side: request the cloud phase and finish locally");
  client->add_option("--server", server_addr, "host:port of the cloud server");
  client->add_option("--small", small_path, "Small checkpoint")->required()->check(CLI::ExistingFile);
  client->add_option("--schedule", schedule_path, "Config or schedule JSON")->required()->check(CLI::ExistingFile);
  client->add_option("-k,--cloud-steps", k, "Large-model steps before the handoff");
  client->add_option("--seed", seed, "Trajectory seed");
  client->add_option("--condition", condition, "Class id");
  client->add_option("-w,--guidance", guidance, "Override the guidance scale");
  client->add_option("--precision", precision, "Handoff tensors")->check(CLI::IsMember({"fp16", "fp32"}));
  client->add_option("--bandwidth", bandwidth, "Channel bandwidth in bit/s")->check(CLI::PositiveNumber);
  client->add_option("--latency", latency, "Channel latency in seconds")->check(CLI::NonNegativeNumber);
  client->add_flag("--no-delay", no_delay, "Report transmission time without sleeping for it");
  client->add_option("-o,--out", out, "Result JSON (sample and cost report)")->required();
  client->callback([&] {
    const auto c = load_config(config_path);
    const auto schedule = load_schedule(schedule_path);
    const auto small = denoiser::load_checkpoint(small_path);
    const auto [host, port] = split_address(server_addr);
    edgecloud::EdgeRequest req;
    req.seed = seed;
    req.condition = hybrid::ConditionInput::from_class(condition);
    req.sampler = sampler_with(c, guidance);
    req.cloud_steps = k;
    req.precision = precision == "fp32" ? hybrid::TensorPrecision::fp32 : hybrid::TensorPrecision::fp16;
    const edgecloud::ChannelModel channel{bandwidth, latency, std::nullopt, 0.0};
    const auto r = edgecloud::edge_run({host, port, 30.0, !no_delay}, req, small, schedule,
                                       diffusion::LatentCodec::identity(small.descriptor().latent_dim), channel);
    json j{{"version", 1},   {"seed", seed},          {"condition", condition}, {"cloud_steps", k},
           {"sample", r.sample}, {"cost", r.cost.to_json()}, {"wall_s", r.wall_s}};
    std::cout << r.cost.to_json().dump(2) << '\n';
    write_json(out, j);
  });

  auto* exp = app.add_subcommand("experiment", "Train, prune, distill and sweep k for every training seed");
  std::string exp_out;
  exp->add_option("-o,--out", exp_out, "Results directory (overrides the config)");
  exp->callback([&] {
    auto c = load_config(config_path);
    if (!exp_out.empty()) c.output_dir = exp_out;
    const auto result = eval::run_experiment(c);
    std::cout << eval::report_markdown(result.records) << "results in " << result.output_dir.string() << '\n';
  });

  std::string results_path;
  auto* report = app.add_subcommand("report", "Aggregate a results.json into a markdown table");
  report->add_option("results", results_path, "results.json from `experiment`")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--out", out, "Write the table to a file instead of stdout");
  report->callback([&] {
    const auto table = eval::report_markdown(eval::load_results(results_path));
    if (out.empty()) {
      std::cout << table;
    } else {
      std::ofstream(output_path(out)) << table;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
