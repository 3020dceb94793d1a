#include "hsd/pruning/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hsd/core/parallel.hpp"
#include "hsd/core/rng.hpp"
#include "hsd/denoiser/guidance.hpp"
#include "hsd/eval/flops.hpp"

namespace hsd::pruning {

using denoiser::ArchitectureDescriptor;
using denoiser::BlockKind;
using denoiser::Network;

std::string to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::res_first_layer: return "res_first_layer";
    case UnitKind::self_attn_heads: return "self_attn_heads";
    case UnitKind::cross_attn_heads: return "cross_attn_heads";
  }
  return "?";
}

UnitKind parse_unit_kind(const std::string& name) {
  if (name == "res_first_layer") return UnitKind::res_first_layer;
  if (name == "self_attn_heads") return UnitKind::self_attn_heads;
  if (name == "cross_attn_heads") return UnitKind::cross_attn_heads;
  throw std::invalid_argument("unknown unit kind: " + name);
}

std::vector<PrunableUnit> prunable_units(const ArchitectureDescriptor& desc) {
  std::vector<PrunableUnit> out;
  for (const auto& b : desc.blocks()) {
    switch (b.kind) {
      case BlockKind::residual:
        out.push_back({b.name, UnitKind::res_first_layer, desc.res_hidden[static_cast<std::size_t>(b.index)]});
        break;
      case BlockKind::self_attention:
        out.push_back({b.name, UnitKind::self_attn_heads, desc.self_attention.num_heads});
        break;
      case BlockKind::cross_attention:
        out.push_back({b.name, UnitKind::cross_attn_heads, desc.cross_attention.num_heads});
        break;
    }
  }
  return out;
}

int kept_units(int width, double ratio) {
  if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("pruning ratio must be in [0, 1)");
  const double raw = (1.0 - ratio) * width;
  const int kept = static_cast<int>(std::floor(raw + 0.5));  // raw >= 0: half away from zero
  return std::clamp(kept, 1, width);
}

namespace {

const PrunableUnit& find_unit(const std::vector<PrunableUnit>& units, const std::string& name) {
  for (const auto& u : units)
    if (u.name == name) return u;
  throw std::out_of_range("unknown prunable unit: " + name);
}

double abs_sum(const float* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(static_cast<double>(p[i]));
  return s;
}

ArchitectureDescriptor apply_widths(ArchitectureDescriptor d, const std::vector<UnitPlan>& units) {
  for (const auto& u : units) {
    switch (u.kind) {
      case UnitKind::res_first_layer: {
        const int idx = std::stoi(u.name.substr(3));
        d.res_hidden[static_cast<std::size_t>(idx)] = u.kept;
        break;
      }
      case UnitKind::self_attn_heads: {
        const int hd = d.self_attention.head_dim();
        d.self_attention = {u.kept * hd, u.kept};
        break;
      }
      case UnitKind::cross_attn_heads: {
        const int hd = d.cross_attention.head_dim();
        d.cross_attention = {u.kept * hd, u.kept};
        break;
      }
    }
  }
  d.validate();
  return d;
}

PruningPlan plan_from_ratios(const ArchitectureDescriptor& source, const std::vector<double>& ratios) {
  const auto units = prunable_units(source);
  PruningPlan plan;
  plan.a = 0.0;
  plan.b = 1.0;
  plan.source = source;
  for (std::size_t i = 0; i < units.size(); ++i) {
    UnitPlan up;
    up.name = units[i].name;
    up.kind = units[i].kind;
    up.width = units[i].width;
    up.rank = static_cast<int>(i);
    up.ratio = ratios[i];
    up.kept = kept_units(up.width, up.ratio);
    plan.units.push_back(up);
  }
  plan.result = apply_widths(source, plan.units);
  return plan;
}

}  // namespace

std::vector<double> unit_l1_norms(const Network<float>& net, const std::string& unit) {
  const auto units = prunable_units(net.descriptor());
  const auto& u = find_unit(units, unit);
  const auto& p = net.params();
  const int D = net.descriptor().model_dim;
  std::vector<double> norms(static_cast<std::size_t>(u.width), 0.0);
  if (u.kind == UnitKind::res_first_layer) {
    const auto& w = p.at(unit + ".fc1.w").data;
    for (int r = 0; r < u.width; ++r)
      norms[static_cast<std::size_t>(r)] = abs_sum(w.data() + static_cast<std::size_t>(r) * D, static_cast<std::size_t>(D));
    return norms;
  }
  const auto& spec = u.kind == UnitKind::self_attn_heads ? net.descriptor().self_attention
                                                         : net.descriptor().cross_attention;
  const int hd = spec.head_dim(), E = spec.embed_dim;
  const auto& ow = p.at(unit + ".o.w").data;
  for (int h = 0; h < u.width; ++h) {
    double s = 0.0;
    for (const char* m : {".q.w", ".k.w", ".v.w"}) {
      const auto& w = p.at(unit + m).data;
      s += abs_sum(w.data() + static_cast<std::size_t>(h) * hd * D, static_cast<std::size_t>(hd) * D);
    }
    for (int r = 0; r < D; ++r) s += abs_sum(ow.data() + static_cast<std::size_t>(r) * E + h * hd, static_cast<std::size_t>(hd));
    norms[static_cast<std::size_t>(h)] = s;
  }
  return norms;
}

std::vector<int> select_by_l1(std::span<const double> norms, int keep) {
  if (keep < 0 || keep > static_cast<int>(norms.size())) throw std::invalid_argument("select_by_l1: bad keep count");
  std::vector<int> idx(norms.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
    return norms[static_cast<std::size_t>(x)] > norms[static_cast<std::size_t>(y)];
  });
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<Prompt> make_prompts(int count, int num_classes, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_prompts: need at least one prompt");
  std::vector<Prompt> out;
  for (int i = 0; i < count; ++i)
    out.push_back({num_classes > 0 ? i % num_classes : 0, mix_seed(seed, 4000 + static_cast<std::uint64_t>(i))});
  return out;
}

std::vector<float> generate_latents(const Network<float>& net, const diffusion::NoiseSchedule& schedule,
                                    std::span<const Prompt> prompts, const diffusion::SamplerConfig& sampler) {
  const int d = net.descriptor().latent_dim;
  std::vector<float> out;
  out.reserve(prompts.size() * static_cast<std::size_t>(d));
  for (const auto& pr : prompts) {
    const auto model = denoiser::make_eps_model(net, pr.condition, sampler.guidance_scale);
    const auto s = diffusion::sample(model, sampler, schedule, pr.seed, d);
    out.insert(out.end(), s.z.begin(), s.z.end());
  }
  return out;
}

double significance_score(std::span<const float> z0, std::span<const float> z1, int dim) {
  if (z0.size() != z1.size() || z0.empty() || z0.size() % static_cast<std::size_t>(dim))
    throw std::invalid_argument("significance_score: shape mismatch");
  const std::size_t n = z0.size() / static_cast<std::size_t>(dim);
  auto stats = [&](std::span<const float> z) {
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0), sd(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < dim; ++k) mean[static_cast<std::size_t>(k)] += z[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < dim; ++k) {
        const double diff = z[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)];
        sd[static_cast<std::size_t>(k)] += diff * diff;
      }
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));
    return std::pair{mean, sd};
  };
  const auto [m0, s0] = stats(z0);
  const auto [m1, s1] = stats(z1);
  double dm = 0.0, ds = 0.0;
  for (int k = 0; k < dim; ++k) {
    dm += (m0[static_cast<std::size_t>(k)] - m1[static_cast<std::size_t>(k)]) * (m0[static_cast<std::size_t>(k)] - m1[static_cast<std::size_t>(k)]);
    ds += (s0[static_cast<std::size_t>(k)] - s1[static_cast<std::size_t>(k)]) * (s0[static_cast<std::size_t>(k)] - s1[static_cast<std::size_t>(k)]);
  }
  return std::sqrt(dm) + std::sqrt(ds);
}

namespace {

ScoreDetail probe_with_reference(const Network<float>& model, const diffusion::NoiseSchedule& schedule,
                                 const std::string& unit, double probe_ratio, std::span<const Prompt> prompts,
                                 const diffusion::SamplerConfig& sampler, std::vector<float> reference) {
  ScoreDetail out;
  out.dim = model.descriptor().latent_dim;
  out.z0_reference = std::move(reference);
  if (probe_ratio == 0.0) {
    find_unit(prunable_units(model.descriptor()), unit);
    out.z0_modified = out.z0_reference;
  } else {
    if (!(probe_ratio > 0.0 && probe_ratio < 1.0)) throw std::invalid_argument("probe_ratio must be in (0, 1)");
    const auto modified = prune(model, single_unit_plan(model.descriptor(), unit, probe_ratio));
    out.z0_modified = generate_latents(modified, schedule, prompts, sampler);
  }
  out.score = significance_score(out.z0_reference, out.z0_modified, out.dim);
  return out;
}

}  // namespace

ScoreDetail probe_score(const Network<float>& model, const diffusion::NoiseSchedule& schedule, const std::string& unit,
                        double probe_ratio, std::span<const Prompt> prompts, const diffusion::SamplerConfig& sampler) {
  if (prompts.empty()) throw std::invalid_argument("probe_score: no prompts");
  find_unit(prunable_units(model.descriptor()), unit);
  auto reference = generate_latents(model, schedule, prompts, sampler);
  return probe_with_reference(model, schedule, unit, probe_ratio, prompts, sampler, std::move(reference));
}

ScoreTable score_units(const Network<float>& model, const diffusion::NoiseSchedule& schedule, const ProbeConfig& probe) {
  ScoreTable table;
  table.probe = probe;
  table.prompts = make_prompts(probe.num_prompts, model.descriptor().num_classes, probe.seed);
  const auto reference = generate_latents(model, schedule, table.prompts, probe.sampler);
  const auto units = prunable_units(model.descriptor());
  table.units.resize(units.size());
  parallel_for(static_cast<int>(units.size()), probe.threads, [&](int i) {
    const auto& u = units[static_cast<std::size_t>(i)];
    const Network<float> local = model;  // private copy per unit
    const auto detail =
        probe_with_reference(local, schedule, u.name, probe.probe_ratio, table.prompts, probe.sampler, reference);
    table.units[static_cast<std::size_t>(i)] = {u.name, u.kind, u.width, detail.score};
  });
  return table;
}

nlohmann::json ScoreTable::to_json() const {
  nlohmann::json j;
  j["probe"] = {{"probe_ratio", probe.probe_ratio},
                {"num_prompts", probe.num_prompts},
                {"seed", probe.seed},
                {"sampler",
                 {{"kind", diffusion::to_string(probe.sampler.kind)},
                  {"steps", probe.sampler.num_inference_steps},
                  {"guidance_scale", probe.sampler.guidance_scale},
                  {"eta", probe.sampler.eta}}}};
  j["prompts"] = nlohmann::json::array();
  for (const auto& p : prompts) j["prompts"].push_back({{"condition", p.condition}, {"seed", p.seed}});
  j["units"] = nlohmann::json::array();
  for (const auto& u : units)
    j["units"].push_back({{"name", u.name}, {"kind", to_string(u.kind)}, {"width", u.width}, {"score", u.score}});
  return j;
}

ScoreTable ScoreTable::from_json(const nlohmann::json& j) {
  ScoreTable t;
  const auto& p = j.at("probe");
  t.probe.probe_ratio = p.at("probe_ratio").get<double>();
  t.probe.num_prompts = p.at("num_prompts").get<int>();
  t.probe.seed = p.at("seed").get<std::uint64_t>();
  const auto& s = p.at("sampler");
  t.probe.sampler.kind = diffusion::parse_sampler_kind(s.at("kind").get<std::string>());
  t.probe.sampler.num_inference_steps = s.at("steps").get<int>();
  t.probe.sampler.guidance_scale = s.at("guidance_scale").get<double>();
  t.probe.sampler.eta = s.at("eta").get<double>();
  for (const auto& pr : j.at("prompts")) t.prompts.push_back({pr.at("condition").get<int>(), pr.at("seed").get<std::uint64_t>()});
  for (const auto& u : j.at("units"))
    t.units.push_back({u.at("name").get<std::string>(), parse_unit_kind(u.at("kind").get<std::string>()),
                       u.at("width").get<int>(), u.at("score").get<double>()});
  return t;
}

PruningPlan assign_ratios(const ScoreTable& scores, double a, double b, const ArchitectureDescriptor& source) {
  if (!(a >= 0.0 && a < b && b <= 1.0)) throw std::invalid_argument("assign_ratios: need 0 <= a < b <= 1");
  const auto units = prunable_units(source);
  if (units.size() != scores.units.size()) throw std::invalid_argument("assign_ratios: score table does not match model");
  for (std::size_t i = 0; i < units.size(); ++i)
    if (units[i].name != scores.units[i].name || units[i].width != scores.units[i].width)
      throw std::invalid_argument("assign_ratios: score table does not match model at " + units[i].name);
  for (const auto& u : scores.units)
    if (!(u.score >= 0.0)) throw std::invalid_argument("assign_ratios: scores must be nonnegative");

  const std::size_t n = units.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Ascending score; on ties the later layer ranks lower.
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (scores.units[x].score != scores.units[y].score) return scores.units[x].score < scores.units[y].score;
    return x > y;
  });
  PruningPlan plan;
  plan.a = a;
  plan.b = b;
  plan.source = source;
  plan.units.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    auto& up = plan.units[i];
    up.name = units[i].name;
    up.kind = units[i].kind;
    up.width = units[i].width;
    up.score = scores.units[i].score;
    up.rank = static_cast<int>(r);
    up.quantile = static_cast<double>(r) / static_cast<double>(n);
    up.ratio = up.quantile < a ? 0.75 : (up.quantile >= b ? 0.25 : 0.50);
    up.kept = kept_units(up.width, up.ratio);
  }
  plan.result = apply_widths(source, plan.units);
  return plan;
}

PruningPlan single_unit_plan(const ArchitectureDescriptor& source, const std::string& unit, double ratio) {
  return explicit_plan(source, {{unit, ratio}});
}

PruningPlan explicit_plan(const ArchitectureDescriptor& source, const std::vector<std::pair<std::string, double>>& ratios) {
  const auto units = prunable_units(source);
  std::vector<double> r(units.size(), 0.0);
  for (const auto& [name, ratio] : ratios) {
    bool found = false;
    for (std::size_t i = 0; i < units.size(); ++i)
      if (units[i].name == name) {
        r[i] = ratio;
        found = true;
      }
    if (!found) throw std::out_of_range("unknown prunable unit: " + name);
  }
  return plan_from_ratios(source, r);
}

nlohmann::json PruningPlan::to_json() const {
  nlohmann::json j;
  j["a"] = a;
  j["b"] = b;
  j["units"] = nlohmann::json::array();
  for (const auto& u : units)
    j["units"].push_back({{"name", u.name},
                          {"kind", to_string(u.kind)},
                          {"width", u.width},
                          {"score", u.score},
                          {"rank", u.rank},
                          {"quantile", u.quantile},
                          {"ratio", u.ratio},
                          {"kept", u.kept}});
  j["source"] = source.to_json();
  j["result"] = result.to_json();
  return j;
}

PruningPlan PruningPlan::from_json(const nlohmann::json& j) {
  PruningPlan p;
  p.a = j.at("a").get<double>();
  p.b = j.at("b").get<double>();
  p.source = ArchitectureDescriptor::from_json(j.at("source"));
  for (const auto& u : j.at("units")) {
    UnitPlan up;
    up.name = u.at("name").get<std::string>();
    up.kind = parse_unit_kind(u.at("kind").get<std::string>());
    up.width = u.at("width").get<int>();
    up.score = u.at("score").get<double>();
    up.rank = u.at("rank").get<int>();
    up.quantile = u.at("quantile").get<double>();
    up.ratio = u.at("ratio").get<double>();
    up.kept = u.at("kept").get<int>();
    p.units.push_back(up);
  }
  p.result = apply_widths(p.source, p.units);
  if (!(p.result == ArchitectureDescriptor::from_json(j.at("result"))))
    throw std::invalid_argument("pruning plan: result descriptor disagrees with unit widths");
  return p;
}

Network<float> prune(const Network<float>& model, const PruningPlan& plan) {
  if (!(plan.source == model.descriptor())) throw std::invalid_argument("prune: plan was built for another descriptor");
  const auto units = prunable_units(model.descriptor());
  if (units.size() != plan.units.size()) throw std::invalid_argument("prune: plan/model unit count mismatch");
  for (const auto& u : plan.units)
    if (u.kept < 1 || u.kept > u.width) throw std::invalid_argument("prune: plan keeps no units in " + u.name);

  Network<float> out(plan.result, denoiser::ModelRole::small);
  const auto& src = model.params();
  auto& dst = out.params();
  // Everything not touched below is copied verbatim.
  for (auto& t : dst) {
    const auto& s = src.at(t.name);
    if (s.shape == t.shape) t.data = s.data;
  }
  const int D = model.descriptor().model_dim;

  auto copy_rows = [](const std::vector<float>& from, std::vector<float>& to, const std::vector<int>& rows, int row_len) {
    std::size_t o = 0;
    for (int r : rows)
      for (int j = 0; j < row_len; ++j) to[o++] = from[static_cast<std::size_t>(r) * row_len + j];
  };
  auto copy_cols = [](const std::vector<float>& from, std::vector<float>& to, int nrows, int src_cols,
                      const std::vector<int>& cols) {
    const auto dst_cols = cols.size();
    for (int r = 0; r < nrows; ++r)
      for (std::size_t c = 0; c < dst_cols; ++c)
        to[static_cast<std::size_t>(r) * dst_cols + c] = from[static_cast<std::size_t>(r) * src_cols + cols[c]];
  };

  for (const auto& u : plan.units) {
    const auto norms = unit_l1_norms(model, u.name);
    const auto keep = select_by_l1(norms, u.kept);
    if (u.kind == UnitKind::res_first_layer) {
      copy_rows(src.at(u.name + ".fc1.w").data, dst.at(u.name + ".fc1.w").data, keep, D);
      copy_rows(src.at(u.name + ".fc1.b").data, dst.at(u.name + ".fc1.b").data, keep, 1);
      copy_cols(src.at(u.name + ".fc2.w").data, dst.at(u.name + ".fc2.w").data, D, u.width, keep);
    } else {
      const auto& spec = u.kind == UnitKind::self_attn_heads ? model.descriptor().self_attention
                                                             : model.descriptor().cross_attention;
      const int hd = spec.head_dim();
      std::vector<int> rows;
      for (int h : keep)
        for (int j = 0; j < hd; ++j) rows.push_back(h * hd + j);
      for (const char* m : {".q", ".k", ".v"}) {
        copy_rows(src.at(u.name + m + ".w").data, dst.at(u.name + m + ".w").data, rows, D);
        copy_rows(src.at(u.name + m + ".b").data, dst.at(u.name + m + ".b").data, rows, 1);
      }
      copy_cols(src.at(u.name + ".o.w").data, dst.at(u.name + ".o.w").data, D, spec.embed_dim, rows);
    }
  }
  return out;
}

nlohmann::json training_log_json(const denoiser::TrainingLog& log) {
  auto terms = [](const denoiser::LossTerms& l) {
    return nlohmann::json{{"task", l.task}, {"out_kd", l.out_kd}, {"feat_kd", l.feat_kd}, {"total", l.total}};
  };
  nlohmann::json j;
  j["steps"] = log.steps_run;
  j["initial_validation"] = terms(log.initial_validation);
  j["final_validation"] = terms(log.final_validation);
  j["entries"] = nlohmann::json::array();
  for (const auto& e : log.entries)
    j["entries"].push_back({{"step", e.step}, {"train", terms(e.train)}, {"validation", terms(e.validation)}});
  return j;
}

nlohmann::json SmallModelReport::to_json() const {
  return {{"params_before", params_before},
          {"params_after", params_after},
          {"param_reduction", param_reduction()},
          {"flops_before", flops_before},
          {"flops_after", flops_after},
          {"scores", scores.to_json()},
          {"plan", plan.to_json()},
          {"distill", training_log_json(distill_log)}};
}

SmallModel build_small_model(const Network<float>& teacher, const LabeledData& data,
                             const diffusion::NoiseSchedule& schedule, double a, double b,
                             const denoiser::DistillConfig& distill_config, const ProbeConfig& probe) {
  SmallModel out;
  auto& rep = out.report;
  rep.scores = score_units(teacher, schedule, probe);
  rep.plan = assign_ratios(rep.scores, a, b, teacher.descriptor());
  out.pruned = prune(teacher, rep.plan);
  out.distilled = out.pruned;
  rep.distill_log = denoiser::distill(out.distilled, teacher, data, schedule, distill_config);
  rep.params_before = denoiser::parameter_count(teacher.descriptor());
  rep.params_after = denoiser::parameter_count(out.distilled.descriptor());
  rep.flops_before = eval::flops_count(teacher.descriptor());
  rep.flops_after = eval::flops_count(out.distilled.descriptor());
  return out;
}

}  // namespace hsd::pruning
