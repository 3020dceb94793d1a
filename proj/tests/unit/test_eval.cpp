#include <doctest.h>

#include <Eigen/Dense>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "helpers.hpp"
#include "hsd/edgecloud/cost.hpp"
#include "hsd/eval/dataset.hpp"
#include "hsd/eval/experiment.hpp"
#include "hsd/eval/flops.hpp"
#include "hsd/eval/metrics.hpp"

using namespace hsd;
using namespace hsd::eval;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.dataset.num_components = 4;
  c.dataset.train_size = 256;
  c.dataset.test_size = 128;
  c.schedule.train_steps = 50;
  c.model = testutil::small_descriptor(50);
  c.training.steps = 40;
  c.training.log_every = 0;
  c.training.validation_size = 32;
  c.distill.steps = 10;
  c.distill.log_every = 0;
  c.distill.validation_size = 32;
  c.pruning.probe.num_prompts = 4;
  c.pruning.probe.sampler = {diffusion::SamplerKind::ddim, 5, 1.0, 0.0};
  c.sampler = {diffusion::SamplerKind::dpm2m, 5, 1.0, 0.0};
  c.evaluation.k_sweep = {0, 2, 5};
  c.evaluation.num_samples = 16;
  c.evaluation.sw_projections = 8;
  c.training_seeds = {1, 2};
  c.output_dir = out.string();
  return c;
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hsd_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("1-D Wasserstein distance against quantile-function integrals") {
  CHECK(wasserstein2_1d({0, 1}, {1, 2}) == doctest::Approx(1.0));
  CHECK(wasserstein2_1d({0, 1}, {0, 0, 1}) == doctest::Approx(std::sqrt(1.0 / 6.0)));
  CHECK(wasserstein2_1d({3}, {0, 4}) == doctest::Approx(std::sqrt((9.0 + 1.0) / 2.0)));
  CHECK(wasserstein2_1d({2, 0, 1}, {1, 2, 0}) == 0.0);
  CHECK_THROWS(wasserstein2_1d({}, {1}));

  // equal sizes: root mean square of sorted differences
  Rng rng(51);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(50), b(50);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = 2.0 * n(rng) + 1.0;
    auto sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double acc = 0;
    for (std::size_t i = 0; i < 50; ++i) acc += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    CHECK(wasserstein2_1d(a, b) == doctest::Approx(std::sqrt(acc / 50)).epsilon(1e-12));
    // duplicating every point leaves the measure unchanged
    auto a2 = a;
    a2.insert(a2.end(), a.begin(), a.end());
    CHECK(wasserstein2_1d(a2, b) == doctest::Approx(wasserstein2_1d(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("sliced Wasserstein: worked example and pseudometric properties") {
  const std::vector<float> a{0.0f, 1.0f}, b{1.0f, 2.0f};
  CHECK(sliced_wasserstein(a, b, 1, 16, 3) == doctest::Approx(1.0));

  Rng rng(52);
  std::normal_distribution<double> n(0.0, 1.0);
  auto cloud = [&](double shift) {
    std::vector<float> p(200);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(n(rng) + (i % 2 ? shift : 0.0));
    return p;
  };
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = cloud(0.0), y = cloud(1.0), z = cloud(-0.5);
    const double xy = sliced_wasserstein(x, y, 2, 32, 9), yx = sliced_wasserstein(y, x, 2, 32, 9);
    CHECK(sliced_wasserstein(x, x, 2, 32, 9) == 0.0);
    CHECK(xy == doctest::Approx(yx).epsilon(1e-12));
    CHECK(xy <= sliced_wasserstein(x, z, 2, 32, 9) + sliced_wasserstein(z, y, 2, 32, 9) + 1e-12);
  }
  // translation by a vector v moves every projection by <u, v>
  std::vector<float> p(100), q(100);
  for (std::size_t i = 0; i < 50; ++i) {
    p[2 * i] = static_cast<float>(n(rng));
    p[2 * i + 1] = static_cast<float>(n(rng));
    q[2 * i] = p[2 * i] + 3.0f;
    q[2 * i + 1] = p[2 * i + 1] - 4.0f;
  }
  const auto dirs = projection_directions(2, 32, 9);
  double expected = 0;
  for (int k = 0; k < 32; ++k) expected += std::abs(3.0 * dirs[static_cast<std::size_t>(2 * k)] - 4.0 * dirs[static_cast<std::size_t>(2 * k + 1)]);
  CHECK(sliced_wasserstein(p, q, 2, 32, 9) == doctest::Approx(expected / 32).epsilon(1e-6));
  for (int k = 0; k < 32; ++k)
    CHECK(std::hypot(dirs[static_cast<std::size_t>(2 * k)], dirs[static_cast<std::size_t>(2 * k + 1)]) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mode agreement and condition accuracy") {
  const std::vector<float> means{3, 0, 0, 3, -3, 0, 0, -3};
  CHECK(nearest_component(std::vector<float>{2.0f, 0.5f}, means, 2) == 0);
  CHECK(nearest_component(std::vector<float>{1.5f, 1.5f}, means, 2) == 0);  // tie goes to the lower index
  CHECK(nearest_component(std::vector<float>{0.1f, -9.0f}, means, 2) == 3);

  // each paired sample keeps its mode with probability p
  const double p = 0.7;
  const int n = 4000;
  Rng rng(53);
  std::bernoulli_distribution keep(p);
  std::uniform_int_distribution<int> mode(0, 3), shift(1, 3);
  std::vector<float> a, b;
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    const int c = mode(rng);
    const int d = keep(rng) ? c : (c + shift(rng)) % 4;
    a.insert(a.end(), {means[static_cast<std::size_t>(2 * c)] * 0.9f, means[static_cast<std::size_t>(2 * c + 1)] * 0.9f});
    b.insert(b.end(), {means[static_cast<std::size_t>(2 * d)] * 1.1f, means[static_cast<std::size_t>(2 * d + 1)] * 1.1f});
    labels.push_back(c);
  }
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(mode_agreement(a, b, means, 2) - p) < 4 * se);
  CHECK(mode_agreement(a, a, means, 2) == 1.0);
  CHECK(condition_accuracy(a, labels, means, 2) == 1.0);
  CHECK(std::abs(condition_accuracy(b, labels, means, 2) - p) < 4 * se);
  CHECK_THROWS(mode_agreement(a, std::span(b).first(2), means, 2));
}

TEST_CASE("datasets are deterministic and labelled cyclically") {
  const auto a = gen_dataset(DatasetKind::gaussian_mixture, 400, 4, 5);
  const auto b = gen_dataset(DatasetKind::gaussian_mixture, 400, 4, 5);
  CHECK(a.data.points == b.data.points);
  CHECK(a.data.points != gen_dataset(DatasetKind::gaussian_mixture, 400, 4, 6).data.points);
  for (std::size_t i = 0; i < 400; ++i) CHECK(a.data.labels[i] == static_cast<int>(i % 4));
  for (int j = 0; j < 4; ++j) {
    const double ang = 2 * std::numbers::pi * j / 4;
    CHECK(a.component_means[static_cast<std::size_t>(2 * j)] == doctest::Approx(3 * std::cos(ang)).epsilon(1e-6));
    CHECK(a.component_means[static_cast<std::size_t>(2 * j + 1)] == doctest::Approx(3 * std::sin(ang)).epsilon(1e-6));
  }
  // component samples sit near their mean
  CHECK(condition_accuracy(a.data.points, a.data.labels, a.component_means, 2) > 0.99);
  const auto moons = gen_dataset(DatasetKind::two_moons, 100, 2, 1);
  CHECK(moons.data.size() == 100u);
  CHECK_THROWS(gen_dataset(DatasetKind::two_moons, 100, 3, 1));
}

TEST_CASE("FLOPs of the default large model match the fixture table") {
  std::ifstream in(testutil::fixture("flops_large.csv"));
  REQUIRE(in);
  std::string line;
  std::vector<FlopsEntry> table;
  double total = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("layer,", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    REQUIRE(f.size() == 7u);
    if (f[0] == "total") {
      total = std::stod(f[6]);
      continue;
    }
    const double rows = std::stod(f[1]), in_w = std::stod(f[2]), out_w = std::stod(f[3]), bias = std::stod(f[4]);
    double flops = 0;
    if (f[5].rfind("heads=", 0) == 0)
      flops = 2 * (2 * rows * in_w * out_w * std::stod(f[5].substr(6)));
    else
      flops = rows * (2 * in_w * out_w + bias * out_w);
    REQUIRE(flops == std::stod(f[6]));
    table.push_back({f[0], flops});
  }
  const auto mine = flops_breakdown(denoiser::default_large_descriptor());
  REQUIRE(mine.size() == table.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    CHECK(mine[i].layer == table[i].layer);
    CHECK(mine[i].flops == table[i].flops);
  }
  CHECK(flops_count(denoiser::default_large_descriptor()) == total);
  CHECK(forwards_per_step(0.0) == 1);
  CHECK(forwards_per_step(1.0) == 1);
  CHECK(forwards_per_step(7.5) == 2);
}

TEST_CASE("trajectory FLOPs are linear in k") {
  const double fs = 1000, fl = 2500;
  const int n = 25;
  for (int k = 0; k <= n; ++k) {
    const double f = edgecloud::hybrid_total_flops(n * fs, n * fl, n, k);
    CHECK(f == doctest::Approx(n * fs + k * (fl - fs)));
    const auto c = edgecloud::split_cost({fl, fs, 0.0, n, k});
    CHECK(c.total_flops == doctest::Approx(f));
  }
}

TEST_CASE("edge-cloud cost table: per-step costs by least squares") {
  std::ifstream in(testutil::fixture("split_cost_rows.json"));
  REQUIRE(in);
  const auto doc = nlohmann::json::parse(in);
  const auto& rows = doc.at("rows");
  Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int j = 0; j < 4; ++j) A(static_cast<Eigen::Index>(i), j) = rows[i].at("coeffs")[static_cast<std::size_t>(j)].get<double>();
    y(static_cast<Eigen::Index>(i)) = rows[i].at("value").get<double>();
  }
  CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(A.topRows(3)).rank() == 2);
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(y);
  CHECK((A * x - y).norm() < 1e-9);
  const auto& sol = doc.at("solution");
  CHECK(x(0) == doctest::Approx(sol.at("f_L").get<double>()));
  CHECK(x(1) == doctest::Approx(sol.at("f_S").get<double>()));
  CHECK(x(2) == doctest::Approx(sol.at("f_V").get<double>()));
  CHECK(x(3) == doctest::Approx(sol.at("f_v").get<double>()));

  const auto& ex = doc.at("expected_split");
  const int steps = ex.at("steps"), k = ex.at("cloud_steps");
  const auto full = edgecloud::split_cost({x(0), x(1), x(2), steps, k});
  const auto light = edgecloud::split_cost({x(0), x(1), x(3), steps, k});
  CHECK(full.cloud_flops == doctest::Approx(ex.at("cloud").get<double>()));
  CHECK(full.edge_flops == doctest::Approx(ex.at("edge_full").get<double>()));
  CHECK(full.total_flops == doctest::Approx(ex.at("total_full").get<double>()));
  CHECK(light.edge_flops == doctest::Approx(ex.at("edge_light").get<double>()));
  CHECK(light.total_flops == doctest::Approx(ex.at("total_light").get<double>()));
  CHECK(full.all_cloud_flops == doctest::Approx(ex.at("cloud_only_full").get<double>()));
  CHECK(std::round(100 * full.cloud_reduction) == ex.at("reported_cloud_reduction_percent").get<double>());
}

TEST_CASE("config: JSON round trip and schema errors") {
  const auto c = tiny_config("out");
  CHECK_NOTHROW(c.validate());
  const auto j = c.to_json();
  CHECK(ExperimentConfig::from_json(j).to_json() == j);

  auto bad = j;
  bad["training"]["stepz"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), std::invalid_argument);
  bad = j;
  bad["version"] = 99;
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), std::invalid_argument);

  auto v = c;
  v.evaluation.k_sweep = {0, 6};
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  v.evaluation.k_sweep = {2, 2};
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  v = c;
  v.model.num_classes = 3;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  v = c;
  v.training.final_lr_fraction = 1.5;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  CHECK(method_for(0, 25) == "small_only");
  CHECK(method_for(12, 25) == "hybrid");
  CHECK(method_for(25, 25) == "large_only");
}

TEST_CASE("run_experiment: an invalid configuration writes nothing") {
  const auto dir = scratch_dir("invalid");
  auto c = tiny_config(dir);
  c.evaluation.k_sweep.clear();
  CHECK_THROWS_AS(run_experiment(c), std::invalid_argument);
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("run_experiment: tiny end-to-end run") {
  const auto dir = scratch_dir("run");
  const auto c = tiny_config(dir);
  const auto res = run_experiment(c);
  REQUIRE(res.records.size() == 6u);
  for (const char* f : {"results.csv", "results.json", "report.md", "scatter_seed1_k2.svg"}) CHECK(fs::exists(dir / f));

  const auto back = load_results(dir / "results.json");
  REQUIRE(back.size() == res.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].to_json() == res.records[i].to_json());

  for (const auto& r : res.records) {
    CHECK(r.method == method_for(r.k, 5));
    CHECK(r.sliced_wasserstein > 0.0);
    CHECK(r.params_small < r.params_large);
    if (r.k == 5) CHECK(r.mode_agreement == 1.0);
  }
  std::ifstream csv(dir / "results.csv");
  std::string head;
  std::getline(csv, head);
  CHECK(head.rfind("method,k,seed,sliced_wasserstein", 0) == 0);
  // reruns are deterministic
  CHECK(run_experiment(c).records[3].to_json() == res.records[3].to_json());
  fs::remove_all(dir);
}

TEST_CASE("output directory override") {
  ::setenv("HYBRIDSD_OUTPUT_DIR", "/tmp/elsewhere", 1);
  CHECK(resolve_output_dir("results") == fs::path("/tmp/elsewhere"));
  ::unsetenv("HYBRIDSD_OUTPUT_DIR");
  CHECK(resolve_output_dir("results") == fs::path("results"));
}

TEST_CASE("gaussian mixture: empirical means and degenerate sizes") {
  const auto big = gen_dataset(DatasetKind::gaussian_mixture, 10000, 2, 3);
  for (int c = 0; c < 2; ++c) {
    double mx = 0, my = 0;
    int n = 0;
    for (std::size_t i = 0; i < big.data.size(); ++i)
      if (big.data.labels[i] == c) {
        mx += big.data.points[2 * i];
        my += big.data.points[2 * i + 1];
        ++n;
      }
    CHECK(std::abs(mx / n - (c == 0 ? 3.0 : -3.0)) < 0.05);
    CHECK(std::abs(my / n) < 0.05);
  }
  const auto tiny = gen_dataset(DatasetKind::gaussian_mixture, 4, 4, 3);
  CHECK(tiny.data.labels == std::vector<int>{0, 1, 2, 3});
  CHECK_THROWS(gen_dataset(DatasetKind::gaussian_mixture, 3, 4, 3));
  // separation: pairwise mean distance at least 4 standard deviations
  const auto four = gen_dataset(DatasetKind::gaussian_mixture, 100, 4, 3);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double dx = four.component_means[static_cast<std::size_t>(2 * i)] - four.component_means[static_cast<std::size_t>(2 * j)];
      const double dy = four.component_means[static_cast<std::size_t>(2 * i + 1)] - four.component_means[static_cast<std::size_t>(2 * j + 1)];
      CHECK(std::hypot(dx, dy) >= 4 * four.component_std);
    }
}

TEST_CASE("mode agreement: opposite means and independent balanced assignments") {
  const std::vector<float> means{3, 0, -3, 0};
  const std::vector<float> left{3, 0, 3, 0}, right{-3, 0, -3, 0};
  CHECK(mode_agreement(left, right, means, 2) == 0.0);

  Rng rng(54);
  std::bernoulli_distribution coin(0.5);
  std::vector<float> a, b;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    a.insert(a.end(), {coin(rng) ? 3.0f : -3.0f, 0.0f});
    b.insert(b.end(), {coin(rng) ? 3.0f : -3.0f, 0.0f});
  }
  CHECK(std::abs(mode_agreement(a, b, means, 2) - 0.5) < 3 * std::sqrt(0.25 / n));
}

TEST_CASE("sliced Wasserstein: triangle inequality on 100 random triples") {
  Rng rng(55);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> size(5, 40);
  auto cloud = [&] {
    std::vector<float> p(static_cast<std::size_t>(2 * size(rng)));
    const double sx = 2 * n(rng), sy = 2 * n(rng);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(n(rng) + (i % 2 ? sy : sx));
    return p;
  };
  for (int t = 0; t < 100; ++t) {
    const auto x = cloud(), y = cloud(), z = cloud();
    REQUIRE(sliced_wasserstein(x, y, 2, 16, 4) <= sliced_wasserstein(x, z, 2, 16, 4) + sliced_wasserstein(z, y, 2, 16, 4) + 1e-9);
  }
  CHECK_THROWS(sliced_wasserstein(std::vector<float>{1, 2, 3}, std::vector<float>{1, 2}, 2, 4, 1));
}

TEST_CASE("linear FLOPs convention") {
  CHECK(linear_flops(2, 2, false) == 8.0);
  CHECK(linear_flops(2, 2, true) == 10.0);
  CHECK(linear_flops(64, 128, true, 4) == 66048.0);
  CHECK(attention_core_flops(4, 4, 4, 16) == 4096.0);
}
