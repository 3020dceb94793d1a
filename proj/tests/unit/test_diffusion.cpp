#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "hsd/diffusion/codec.hpp"
#include "hsd/diffusion/sampler.hpp"
#include "hsd/diffusion/schedule.hpp"

using namespace hsd;
using namespace hsd::diffusion;

TEST_CASE("schedule: small cases") {
  const auto one = build_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar(1) == 0.5);
  CHECK(one.alpha_bar(0) == 1.0);

  const auto tiny = build_schedule(3, 1e-9, 1e-9);
  for (int t = 1; t <= 3; ++t) CHECK(std::abs(tiny.alpha_bar(t) - 1.0) < 1e-8);

  CHECK_THROWS_AS(build_schedule(0, 1e-4, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.0, 0.02), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.1, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(build_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("schedule: cumulative product against an extended-precision oracle") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int i = 0; i < 1000; ++i) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * static_cast<long double>(i) / 999.0L;
    prod *= 1.0L - beta;
  }
  CHECK(std::abs(static_cast<long double>(s.alpha_bar(1000)) - prod) < 1e-10L);
}

TEST_CASE("schedule: alpha_bar strictly decreasing and equal to the running product") {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    const auto s = build_schedule(500, 1e-4, 0.02, kind);
    double prod = 1.0;
    for (int t = 1; t <= s.num_steps(); ++t) {
      REQUIRE(s.beta(t) > 0.0);
      REQUIRE(s.beta(t) < 1.0);
      prod *= 1.0 - s.beta(t);
      REQUIRE(std::abs(s.alpha_bar(t) - prod) <= 1e-12);
      REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
}

TEST_CASE("q_sample: limits and linearity") {
  const std::vector<float> x0{1.25f, -3.5f, 0.1f};
  const std::vector<float> eps{-0.7f, 2.0f, 0.3f};
  CHECK(q_sample(x0, 1.0, eps) == x0);
  CHECK(q_sample(x0, 0.0, eps) == eps);

  const auto s = build_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  std::uniform_int_distribution<int> pick(1, 1000);
  for (int i = 0; i < 100; ++i) {
    const int t = pick(rng);
    const auto x = testutil::gaussian(mix_seed(10, i), 4);
    const auto e = testutil::gaussian(mix_seed(11, i), 4);
    const auto z = q_sample(x, t, e, s);
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    for (std::size_t k = 0; k < 4; ++k) REQUIRE(std::abs(z[k] - (a * x[k] + b * e[k])) < 1e-6);
  }
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), std::out_of_range);
  CHECK_THROWS_AS(q_sample(x0, 1.5, eps), std::invalid_argument);
}

TEST_CASE("q_sample: closed form matches the stepwise chain (Monte-Carlo)") {
  const auto s = build_schedule(200, 1e-4, 0.05);
  const int draws = 100000;
  const double x0 = 1.7;
  Rng rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  double sum = 0.0, sum2 = 0.0;
  for (int d = 0; d < draws; ++d) {
    double z = x0;
    for (int t = 1; t <= s.num_steps(); ++t) z = std::sqrt(1.0 - s.beta(t)) * z + std::sqrt(s.beta(t)) * n(rng);
    sum += z;
    sum2 += z * z;
  }
  const double mean = sum / draws;
  const double var = sum2 / draws - mean * mean;
  const double ab = s.alpha_bar(s.num_steps());
  const double mean_exact = std::sqrt(ab) * x0;
  const double var_exact = 1.0 - ab;
  CHECK(std::abs(mean - mean_exact) < 3.0 * std::sqrt(var_exact / draws));
  CHECK(std::abs(var - var_exact) < 3.0 * var_exact * std::sqrt(2.0 / (draws - 1)));
}

TEST_CASE("inference timesteps") {
  const auto ts = inference_timesteps(1000, 25);
  REQUIRE(ts.size() == 25);
  CHECK(ts.front() == 1000);
  CHECK(ts[1] == 960);
  CHECK(ts.back() == 40);
  CHECK(target_timestep(ts, 24) == 0);
  const auto odd = inference_timesteps(10, 3);
  CHECK(odd == std::vector<int>{10, 7, 4});
  CHECK(inference_timesteps(5, 5) == std::vector<int>{5, 4, 3, 2, 1});
  CHECK_THROWS(inference_timesteps(5, 6));
}

TEST_CASE("cfg_combine") {
  const std::vector<float> u{0.0f, 0.0f}, c{1.0f, 2.0f};
  CHECK(cfg_combine(u, c, 7.0) == std::vector<float>{7.0f, 14.0f});
  const std::vector<float> u2{0.3f, -1.1f}, c2{2.7f, 0.9f};
  CHECK(cfg_combine(u2, c2, 1.0) == c2);
  CHECK(cfg_combine(u2, c2, 0.0) == u2);
}

namespace {

EpsModel perfect_model(std::vector<float> eps) {
  return [eps](std::span<const float>, int) { return eps; };
}

}  // namespace

TEST_CASE("samplers: perfect noise model recovers x0") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  const std::vector<float> x0{0.8f, -1.3f};
  const std::vector<float> eps{0.4f, 1.9f};
  const std::vector<float> noise{5.0f, -5.0f};

  // one ddpm step from t = 1 lands on the clean signal
  const LatentState at1{q_sample(x0, 1, eps, s), 1, 0};
  const auto out = ddpm_step(perfect_model(eps), at1, s, noise);
  CHECK(out.t == 0);
  CHECK(testutil::max_abs_diff(out.z, x0) < 1e-6);

  // z is stored in float; near t = T the 1/sqrt(abar) factor (~160) amplifies its rounding.
  for (int t : {1, 17, 250, 640, 1000}) {
    const auto z = q_sample(x0, t, eps, s);
    CHECK(testutil::max_abs_diff(predict_x0(z, eps, s.alpha_bar(t)), x0) < 1e-5 * (t == 1000 ? 100 : 1));
    const LatentState st{z, t, 0};
    CHECK(testutil::max_abs_diff(ddim_step(perfect_model(eps), st, s, 0.0, {}, 0).z, x0) < 1e-6 * (t == 1000 ? 100 : 1));
    CHECK(testutil::max_abs_diff(dpm2m_step(perfect_model(eps), st, s, {}, 0).state.z, x0) <
          1e-6 * (t == 1000 ? 100 : 1));
  }
}

TEST_CASE("ddpm: vanishing noise leaves the latent in place") {
  const auto s = build_schedule(3, 1e-9, 1e-9);
  const LatentState st{{0.5f, -2.0f}, 2, 0};
  const auto out = ddpm_step(perfect_model({0.3f, 0.1f}), st, s, std::vector<float>{1.0f, 1.0f});
  CHECK(testutil::max_abs_diff(out.z, st.z) < 1e-3);
}

TEST_CASE("samplers are deterministic") {
  const auto s = build_schedule(100, 1e-4, 0.02);
  EpsModel m = [](std::span<const float> z, int t) {
    return std::vector<float>{std::sin(z[0] + 0.01f * t), std::cos(z[1])};
  };
  for (auto kind : {SamplerKind::ddpm, SamplerKind::ddim, SamplerKind::dpm2m}) {
    SamplerConfig c{kind, 10, 1.0, kind == SamplerKind::ddim ? 0.5 : 0.0};
    CHECK(sample(m, c, s, 42, 2).z == sample(m, c, s, 42, 2).z);
    CHECK(sample(m, c, s, 42, 2).z != sample(m, c, s, 43, 2).z);
  }
}

TEST_CASE("ddim eta=1 noise equals the ddpm posterior variance") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 5; ++i) {
    double a = u(rng), b = u(rng);
    const double ab_t = std::min(a, b), ab_s = std::max(a, b);
    const double beta = 1.0 - ab_t / ab_s;
    const double oracle = (1.0 - ab_s) / (1.0 - ab_t) * beta;
    CHECK(ddim_sigma(ab_t, ab_s, 1.0) * ddim_sigma(ab_t, ab_s, 1.0) == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(ddpm_posterior_variance(ab_t, ab_s) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("dpm2m: first-order fallbacks") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  EpsModel m = [](std::span<const float> z, int t) {
    return std::vector<float>{0.3f * z[0] + 0.001f * t, -0.2f * z[1]};
  };
  const LatentState st{{1.1f, -0.4f}, 800, 0};
  CHECK(dpm2m_step(m, st, s, {}, 600).state.z == ddim_step(m, st, s, 0.0, {}, 600).z);

  // a repeated eps makes the extrapolation term vanish
  const std::vector<float> e{0.25f, -0.75f};
  const SolverHistory hist{{900, e}};
  CHECK(dpm2m_update(st.z, e, 800, 600, hist, s) == ddim_update(st.z, e, s.alpha_bar(800), s.alpha_bar(600), 0.0, {}));
  CHECK_THROWS(dpm2m_update(st.z, e, 800, 600, SolverHistory{{700, e}}, s));
}

TEST_CASE("dpm2m: second order on the Gaussian probability-flow ODE") {
  // 1-D data N(mu, sd^2): the optimal noise predictor and the ODE flow are closed form.
  const double mu = 0.7, sd = 0.4;
  const auto s = build_schedule(1000, 1e-4, 0.02);
  auto var = [&](double ab) { return ab * sd * sd + 1.0 - ab; };
  EpsModel oracle = [&](std::span<const float> z, int t) {
    const double ab = s.alpha_bar(t);
    return std::vector<float>{static_cast<float>(std::sqrt(1.0 - ab) * (z[0] - std::sqrt(ab) * mu) / var(ab))};
  };
  auto flow = [&](double z, int from, int to) {
    const double a = s.alpha_bar(from), b = s.alpha_bar(to);
    return std::sqrt(b) * mu + std::sqrt(var(b)) * (z - std::sqrt(a) * mu) / std::sqrt(var(a));
  };

  // Compared at t = 100, a grid point of both step counts; the step into t = 0 is first order for both solvers.
  auto errors = [&](int steps) {
    const auto ts = inference_timesteps(1000, steps);
    double err1 = 0.0, err2 = 0.0;
    for (double z0 : {-2.0, -0.6, 0.3, 1.4, 2.5}) {
      LatentState a{{static_cast<float>(z0)}, ts.front(), 0}, b = a;
      SolverHistory hist;
      for (std::size_t p = 0; a.t > 100; ++p) {
        const int to = target_timestep(ts, p);
        a = ddim_step(oracle, a, s, 0.0, {}, to);
        auto r = dpm2m_step(oracle, b, s, hist, to);
        b = r.state;
        hist = r.history;
      }
      REQUIRE(a.t == 100);
      const double exact = flow(z0, ts.front(), 100);
      err1 += std::abs(a.z[0] - exact);
      err2 += std::abs(b.z[0] - exact);
    }
    return std::pair{err1, err2};
  };
  const auto [err1, err2] = errors(10);
  const auto [fine1, fine2] = errors(20);
  MESSAGE("first order " << err1 << " -> " << fine1 << ", second order " << err2 << " -> " << fine2);
  CHECK(err2 < err1);
  CHECK(fine2 * 4.0 <= fine1);
  // halving the step size: about 2x for first order, clearly more for second order
  CHECK(err1 / fine1 < 2.6);
  CHECK(err2 / fine2 > 3.0);
}

TEST_CASE("step noise is a function of (seed, position)") {
  CHECK(step_noise(3, 4, 2) == step_noise(3, 4, 2));
  CHECK(step_noise(3, 4, 2) != step_noise(3, 5, 2));
  CHECK(initial_noise(3, 2) != step_noise(3, 0, 2));
}

TEST_CASE("codec: identity and least-squares fits") {
  const auto id = LatentCodec::identity(3);
  const std::vector<float> x{0.1f, -2.0f, 7.5f};
  CHECK(id.decode(id.encode(x)) == x);

  // reference affine encoder R: 3 -> 2
  const std::vector<double> R{0.5, -1.0, 2.0, 1.5, 0.25, -0.75};
  const std::vector<double> r{0.3, -0.2};
  Rng rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  const int count = 1000;
  std::vector<double> xs, zs;
  for (int i = 0; i < count; ++i) {
    double v[3] = {n(rng), n(rng), n(rng)};
    xs.insert(xs.end(), v, v + 3);
    for (int o = 0; o < 2; ++o) zs.push_back(R[o * 3] * v[0] + R[o * 3 + 1] * v[1] + R[o * 3 + 2] * v[2] + r[o]);
  }
  LatentCodec c;
  c.fit_encoder(xs, zs, 3, 2);
  double frob = 0.0;
  for (std::size_t i = 0; i < R.size(); ++i) frob += std::pow(c.encoder_matrix()[i] - R[i], 2);
  for (std::size_t i = 0; i < r.size(); ++i) frob += std::pow(c.encoder_bias()[i] - r[i], 2);
  CHECK(std::sqrt(frob) < 1e-6);

  // encoder rows are independent, so E pinv(E) = I and encode(decode(z)) = z
  c.set_decoder_pseudo_inverse();
  for (int i = 0; i < 20; ++i) {
    const std::vector<float> z{static_cast<float>(n(rng)), static_cast<float>(n(rng))};
    CHECK(testutil::max_abs_diff(c.encode(c.decode(z)), z) < 1e-6);
  }
  CHECK(c.decode_flops() == 2.0 * 2 * 3 + 3);
}

TEST_CASE("codec: square encoder round-trips both ways") {
  const std::vector<double> E{2.0, 0.5, -1.0, 1.0};
  std::vector<double> xs, zs;
  Rng rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double a = n(rng), b = n(rng);
    xs.insert(xs.end(), {a, b});
    zs.insert(zs.end(), {E[0] * a + E[1] * b + 0.1, E[2] * a + E[3] * b - 0.1});
  }
  LatentCodec c;
  c.fit_encoder(xs, zs, 2, 2);
  c.set_decoder_pseudo_inverse();
  const std::vector<float> x{0.7f, -1.6f};
  CHECK(testutil::max_abs_diff(c.decode(c.encode(x)), x) < 1e-6);
}
