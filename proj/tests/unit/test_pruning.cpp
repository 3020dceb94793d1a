#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "hsd/denoiser/training.hpp"
#include "hsd/diffusion/schedule.hpp"
#include "hsd/eval/flops.hpp"
#include "hsd/pruning/pruning.hpp"

using namespace hsd;
using namespace hsd::pruning;
using denoiser::ArchitectureDescriptor;
using denoiser::Condition;
using denoiser::ModelRole;
using denoiser::Network;

namespace {

ScoreTable table_for(const ArchitectureDescriptor& d, const std::vector<double>& scores) {
  ScoreTable t;
  const auto units = prunable_units(d);
  REQUIRE(units.size() == scores.size());
  for (std::size_t i = 0; i < units.size(); ++i) t.units.push_back({units[i].name, units[i].kind, units[i].width, scores[i]});
  return t;
}

ArchitectureDescriptor four_unit_descriptor() {
  auto d = testutil::small_descriptor();
  d.res_hidden = {6, 6};
  d.attention_position = 1;
  return d;
}

std::vector<double> ratios(const PruningPlan& p) {
  std::vector<double> r;
  for (const auto& u : p.units) r.push_back(u.ratio);
  return r;
}

// Best `keep`-subset by brute force; ties go to the lexicographically smallest index set.
std::vector<int> exhaustive_best(const std::vector<double>& norms, int keep) {
  const int n = static_cast<int>(norms.size());
  std::vector<int> best;
  double best_sum = -1.0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != keep) continue;
    std::vector<int> idx;
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) {
        idx.push_back(i);
        s += norms[static_cast<std::size_t>(i)];
      }
    if (s > best_sum || (s == best_sum && idx < best)) {
      best_sum = s;
      best = idx;
    }
  }
  return best;
}

// Row-sum oracle computed straight from the parameter tensors.
std::vector<double> l1_oracle(const Network<float>& net, const PrunableUnit& u) {
  const auto& p = net.params();
  const int D = net.descriptor().model_dim;
  std::vector<double> out(static_cast<std::size_t>(u.width), 0.0);
  if (u.kind == UnitKind::res_first_layer) {
    const auto& w = p.at(u.name + ".fc1.w").data;
    for (int r = 0; r < u.width; ++r)
      for (int c = 0; c < D; ++c) out[static_cast<std::size_t>(r)] += std::abs(w[static_cast<std::size_t>(r * D + c)]);
    return out;
  }
  const auto& spec = u.kind == UnitKind::self_attn_heads ? net.descriptor().self_attention : net.descriptor().cross_attention;
  const int hd = spec.head_dim(), E = spec.embed_dim;
  for (int h = 0; h < u.width; ++h) {
    for (const char* m : {".q.w", ".k.w", ".v.w"}) {
      const auto& w = p.at(u.name + m).data;
      for (int r = h * hd; r < (h + 1) * hd; ++r)
        for (int c = 0; c < D; ++c) out[static_cast<std::size_t>(h)] += std::abs(w[static_cast<std::size_t>(r * D + c)]);
    }
    const auto& o = p.at(u.name + ".o.w").data;
    for (int r = 0; r < D; ++r)
      for (int c = h * hd; c < (h + 1) * hd; ++c) out[static_cast<std::size_t>(h)] += std::abs(o[static_cast<std::size_t>(r * E + c)]);
  }
  return out;
}

// Zeroes the rows / heads that `plan` removes, keeping every shape.
Network<float> masked(const Network<float>& net, const PruningPlan& plan) {
  auto out = net;
  auto& p = out.params();
  for (const auto& u : plan.units) {
    if (u.kept == u.width) continue;
    const PrunableUnit unit{u.name, u.kind, u.width};
    const auto keep = select_by_l1(l1_oracle(net, unit), u.kept);
    const int D = net.descriptor().model_dim;
    for (int g = 0; g < u.width; ++g) {
      if (std::find(keep.begin(), keep.end(), g) != keep.end()) continue;
      if (u.kind == UnitKind::res_first_layer) {
        for (int c = 0; c < D; ++c) p.at(u.name + ".fc1.w").data[static_cast<std::size_t>(g * D + c)] = 0.0f;
        p.at(u.name + ".fc1.b").data[static_cast<std::size_t>(g)] = 0.0f;
      } else {
        const auto& spec = u.kind == UnitKind::self_attn_heads ? net.descriptor().self_attention : net.descriptor().cross_attention;
        const int hd = spec.head_dim(), E = spec.embed_dim;
        for (int r = 0; r < D; ++r)
          for (int c = g * hd; c < (g + 1) * hd; ++c) p.at(u.name + ".o.w").data[static_cast<std::size_t>(r * E + c)] = 0.0f;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("kept_units rounding") {
  CHECK(kept_units(4, 0.5) == 2);
  CHECK(kept_units(5, 0.5) == 3);  // 2.5 rounds away from zero
  CHECK(kept_units(128, 0.25) == 96);
  CHECK(kept_units(128, 0.75) == 32);
  CHECK(kept_units(4, 0.75) == 1);
  CHECK(kept_units(1, 0.75) == 1);  // never below one
  CHECK(kept_units(7, 0.0) == 7);
  CHECK_THROWS_AS(kept_units(4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(kept_units(4, -0.1), std::invalid_argument);
}

TEST_CASE("select_by_l1: worked example and ties") {
  const std::vector<double> norms{0.1, 5.0, 0.2, 7.0};
  CHECK(select_by_l1(norms, 2) == std::vector<int>{1, 3});
  CHECK(exhaustive_best(norms, 2) == std::vector<int>{1, 3});
  const std::vector<double> flat{1.0, 1.0, 1.0};
  CHECK(select_by_l1(flat, 2) == std::vector<int>{0, 1});
}

TEST_CASE("select_by_l1 matches exhaustive search on every layer") {
  auto net = Network<float>::initialized(testutil::small_descriptor(), ModelRole::large, 7);
  testutil::jitter(net, 8, 0.2);
  for (const auto& u : prunable_units(net.descriptor())) {
    REQUIRE(u.width <= 12);
    const auto norms = unit_l1_norms(net, u.name);
    const auto oracle = l1_oracle(net, u);
    REQUIRE(norms.size() == oracle.size());
    for (std::size_t i = 0; i < norms.size(); ++i) CHECK(norms[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
    for (int keep = 1; keep <= u.width; ++keep) REQUIRE(select_by_l1(norms, keep) == exhaustive_best(norms, keep));
  }
}

TEST_CASE("prune: zero ratios leave the model unchanged") {
  auto net = Network<float>::initialized(testutil::small_descriptor(), ModelRole::large, 9);
  const auto plan = explicit_plan(net.descriptor(), {});
  const auto out = prune(net, plan);
  CHECK(out.descriptor() == net.descriptor());
  CHECK(out.params() == net.params());
  CHECK(out.role() == ModelRole::small);
}

TEST_CASE("prune: equals the masked model and keeps block widths") {
  auto net = Network<float>::initialized(testutil::small_descriptor(), ModelRole::large, 10);
  testutil::jitter(net, 11, 0.1);
  const auto plan = explicit_plan(net.descriptor(), {{"res0", 0.5}, {"res1", 0.75}, {"res2", 0.25},
                                                     {"self_attn", 0.5}, {"cross_attn", 0.75}});
  const auto small = prune(net, plan);
  const auto mask = masked(net, plan);
  CHECK(small.descriptor().res_hidden == std::vector<int>{6, 3, 6});
  CHECK(small.descriptor().self_attention.num_heads == 1);
  CHECK(small.descriptor().cross_attention.num_heads == 1);

  const auto z = testutil::gaussian(12, 8);
  const std::vector<int> t{1, 30, 60, 100};
  const std::vector<int> cls{0, 1, 3, 4};
  const auto a = small.forward(z, t, Condition<float>::from_classes(cls));
  const auto b = mask.forward(z, t, Condition<float>::from_classes(cls));
  CHECK(testutil::max_abs_diff(a.eps, b.eps) < 1e-6);
  REQUIRE(a.block_outputs.size() == b.block_outputs.size());
  for (std::size_t i = 0; i < a.block_outputs.size(); ++i) {
    CHECK(a.block_outputs[i].size() == b.block_outputs[i].size());
    CHECK(testutil::max_abs_diff(a.block_outputs[i], b.block_outputs[i]) < 1e-6);
  }
  CHECK_THROWS_AS(prune(small, plan), std::invalid_argument);
}

TEST_CASE("assign_ratios: rank rule") {
  const auto d = four_unit_descriptor();
  REQUIRE(prunable_units(d).size() == 4);

  CHECK(ratios(assign_ratios(table_for(d, {1, 2, 3, 4}), 0.25, 0.75, d)) == std::vector<double>{0.75, 0.5, 0.5, 0.25});
  CHECK(ratios(assign_ratios(table_for(d, {4, 3, 2, 1}), 0.25, 0.75, d)) == std::vector<double>{0.25, 0.5, 0.5, 0.75});
  CHECK(ratios(assign_ratios(table_for(d, {1, 2, 3, 4}), 0.0, 1.0, d)) == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  // equal scores: the earlier layer ranks higher
  const auto tied = assign_ratios(table_for(d, {2, 2, 2, 2}), 0.25, 0.75, d);
  CHECK(ratios(tied) == std::vector<double>{0.25, 0.5, 0.5, 0.75});
  CHECK(tied.units[0].rank == 3);
  CHECK(tied.units[3].rank == 0);

  CHECK_THROWS_AS(assign_ratios(table_for(d, {1, 2, 3, 4}), 0.8, 0.2, d), std::invalid_argument);
  CHECK_THROWS_AS(assign_ratios(table_for(d, {1, -2, 3, 4}), 0.25, 0.75, d), std::invalid_argument);
  CHECK_THROWS_AS(assign_ratios(table_for(d, {1, 2, 3, 4}), 0.25, 0.75, testutil::small_descriptor()),
                  std::invalid_argument);
}

TEST_CASE("assign_ratios is monotone in a unit's score") {
  const auto d = denoiser::default_large_descriptor();
  Rng rng(13);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(6);
    for (auto& v : s) v = u(rng);
    const auto base = assign_ratios(table_for(d, s), 0.3, 0.8, d);
    const std::size_t i = static_cast<std::size_t>(trial % 6);
    auto raised = s;
    raised[i] += u(rng);
    const auto up = assign_ratios(table_for(d, raised), 0.3, 0.8, d);
    REQUIRE(up.units[i].ratio <= base.units[i].ratio);
  }
}

TEST_CASE("default plans remove between 50% and 80% of parameters") {
  const auto d = denoiser::default_large_descriptor();
  std::vector<double> s{1, 2, 3, 4, 5, 6};
  const auto before = denoiser::parameter_count(d);
  double lo = 1.0, hi = 0.0;
  do {
    const auto plan = assign_ratios(table_for(d, s), 0.3, 0.8, d);
    const double red = 1.0 - static_cast<double>(denoiser::parameter_count(plan.result)) / static_cast<double>(before);
    lo = std::min(lo, red);
    hi = std::max(hi, red);
  } while (std::next_permutation(s.begin(), s.end()));
  MESSAGE("parameter reduction over all orderings: " << lo << " .. " << hi);
  CHECK(lo >= 0.5);
  CHECK(hi <= 0.8);
}

TEST_CASE("pruned first layer halves its FLOPs") {
  const auto d = denoiser::default_large_descriptor();
  const auto plan = explicit_plan(d, {{"res1", 0.5}});
  auto find = [](const std::vector<eval::FlopsEntry>& v, const std::string& name) {
    for (const auto& e : v)
      if (e.layer == name) return e.flops;
    FAIL("missing layer " << name);
    return 0.0;
  };
  const auto a = eval::flops_breakdown(d);
  const auto b = eval::flops_breakdown(plan.result);
  CHECK(find(b, "res1.fc1") * 2.0 == find(a, "res1.fc1"));
}

TEST_CASE("probe score: null modification, recomputation, non-destructive") {
  const auto schedule = diffusion::build_schedule(100, 1e-4, 0.02);
  auto net = Network<float>::initialized(testutil::small_descriptor(), ModelRole::large, 14);
  testutil::jitter(net, 15, 0.1);
  const auto snapshot = net.params();
  const auto prompts = make_prompts(8, 4, 3);
  const diffusion::SamplerConfig sampler{diffusion::SamplerKind::ddim, 10, 7.0, 0.0};

  const auto null = probe_score(net, schedule, "res1", 0.0, prompts, sampler);
  CHECK(null.score == 0.0);
  CHECK(null.z0_reference == null.z0_modified);

  const auto det = probe_score(net, schedule, "cross_attn", 0.5, prompts, sampler);
  CHECK(net.params() == snapshot);
  CHECK(det.score > 0.0);

  // per-coordinate mean and population std over the prompt batch
  const int dim = det.dim, n = static_cast<int>(prompts.size());
  long double dmean = 0, dstd = 0;
  for (int c = 0; c < dim; ++c) {
    long double m0 = 0, m1 = 0;
    for (int i = 0; i < n; ++i) {
      m0 += det.z0_reference[static_cast<std::size_t>(i * dim + c)];
      m1 += det.z0_modified[static_cast<std::size_t>(i * dim + c)];
    }
    m0 /= n;
    m1 /= n;
    long double v0 = 0, v1 = 0;
    for (int i = 0; i < n; ++i) {
      v0 += std::pow(det.z0_reference[static_cast<std::size_t>(i * dim + c)] - m0, 2);
      v1 += std::pow(det.z0_modified[static_cast<std::size_t>(i * dim + c)] - m1, 2);
    }
    dmean += (m0 - m1) * (m0 - m1);
    dstd += std::pow(std::sqrt(v0 / n) - std::sqrt(v1 / n), 2);
  }
  const double oracle = static_cast<double>(std::sqrt(dmean) + std::sqrt(dstd));
  CHECK(std::abs(det.score - oracle) < 1e-10);
  CHECK(significance_score(det.z0_reference, det.z0_modified, dim) == det.score);
}

TEST_CASE("score table and plan serialize") {
  const auto d = four_unit_descriptor();
  auto t = table_for(d, {0.5, 1.5, 0.25, 3.0});
  t.prompts = make_prompts(3, 4, 1);
  const auto t2 = ScoreTable::from_json(t.to_json());
  REQUIRE(t2.units.size() == 4);
  CHECK(t2.units[3].score == 3.0);
  CHECK(t2.prompts.size() == 3);

  const auto plan = assign_ratios(t, 0.3, 0.8, d);
  const auto back = PruningPlan::from_json(plan.to_json());
  CHECK(back.result == plan.result);
  CHECK(ratios(back) == ratios(plan));
}

TEST_CASE("distillation lowers the student's output error to the teacher") {
  const auto schedule = diffusion::build_schedule(100, 1e-4, 0.02);
  LabeledData data;
  data.dim = 2;
  Rng rng(16);
  std::normal_distribution<double> n(0.0, 0.3);
  for (int i = 0; i < 256; ++i) {
    const int c = i % 4;
    data.points.push_back(static_cast<float>(2.0 * std::cos(c * 1.5707963) + n(rng)));
    data.points.push_back(static_cast<float>(2.0 * std::sin(c * 1.5707963) + n(rng)));
    data.labels.push_back(c);
  }
  auto teacher = Network<float>::initialized(testutil::small_descriptor(), ModelRole::large, 17);
  denoiser::TrainConfig tc;
  tc.steps = 300;
  tc.seed = 1;
  tc.log_every = 0;
  denoiser::train_task(teacher, data, schedule, tc);

  const auto plan = explicit_plan(teacher.descriptor(), {{"res0", 0.75}, {"res1", 0.5}, {"res2", 0.75}, {"self_attn", 0.5}});
  auto student = prune(teacher, plan);
  Rng held(77);
  const auto batch = denoiser::make_batch(data, schedule, held, 128, 0.0, teacher.descriptor().null_class());
  const auto before = denoiser::distill_loss<float>(student, teacher, batch, 1.0, 1.0, nullptr);
  denoiser::DistillConfig dc;
  dc.steps = 300;
  dc.seed = 2;
  dc.log_every = 0;
  denoiser::distill(student, teacher, data, schedule, dc);
  const auto after = denoiser::distill_loss<float>(student, teacher, batch, 1.0, 1.0, nullptr);
  MESSAGE("final-output MSE " << before.feat_kd << " -> " << after.feat_kd);
  CHECK(after.feat_kd < before.feat_kd);
}

TEST_CASE("small model report counts from the descriptor") {
  const auto schedule = diffusion::build_schedule(50, 1e-4, 0.02);
  LabeledData data{2, {1.0f, 0.0f, -1.0f, 0.0f, 0.0f, 1.0f, 0.0f, -1.0f}, {0, 1, 2, 3}};
  auto teacher = Network<float>::initialized(testutil::small_descriptor(50), ModelRole::large, 18);
  ProbeConfig probe;
  probe.num_prompts = 4;
  probe.sampler = {diffusion::SamplerKind::ddim, 5, 7.0, 0.0};
  denoiser::DistillConfig dc;
  dc.steps = 5;
  dc.log_every = 0;
  const auto sm = build_small_model(teacher, data, schedule, 0.3, 0.8, dc, probe);
  CHECK(sm.report.flops_after == eval::flops_count(sm.distilled.descriptor()));
  CHECK(sm.report.flops_before == eval::flops_count(teacher.descriptor()));
  CHECK(sm.report.params_after == denoiser::parameter_count(sm.distilled.descriptor()));
  CHECK(sm.report.param_reduction() > 0.0);
  CHECK(sm.distilled.role() == ModelRole::small);
  CHECK(sm.report.to_json().contains("plan"));
}
