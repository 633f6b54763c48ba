#include <cmath>
#include <random>

#include "doctest.h"
#include "head/diffusion.hpp"
#include "head/errors.hpp"
#include "oracles.hpp"

using namespace head;

namespace {

MixtureSpec single_gaussian(double mean, double variance, int n = 4) {
  MixtureSpec m;
  m.grid_size = n;
  m.variance = variance;
  SceneComponent c;
  c.weight = 1.0;
  c.mean_image = Grid(n, n, mean);
  m.components.push_back(c);
  return m;
}

MixtureSpec cat_bench(double q) {
  static const auto cat = Catalog::builtin();
  const std::vector<std::string> t{"cat", "bench"};
  return build_conditional_mixture(t, q, cat);
}

}  // namespace

TEST_CASE("cosine schedule") {
  const auto s = make_schedule(50);
  REQUIRE(s.alphabar.size() == 51);
  CHECK(s.alphabar[0] == 1.0);
  CHECK(s.sigma(0) == 0.0);
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.alphabar[static_cast<std::size_t>(t)] < s.alphabar[static_cast<std::size_t>(t - 1)]);
    CHECK(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(s.alphabar[50] > 0.0);
  CHECK(s.alphabar[50] <= 1e-3);
  CHECK(s.alphabar[50] < s.alphabar[25]);
  CHECK(s.alphabar[25] < s.alphabar[8]);
  CHECK_THROWS_AS(make_schedule(1), InvalidT);
  // frozen values of the default schedule
  CHECK(s.alphabar[42] == doctest::Approx(0.0609).epsilon(1e-3));
  CHECK(s.alphabar[34] == doctest::Approx(0.2288).epsilon(1e-3));
  CHECK(s.alphabar[10] == doctest::Approx(0.8987).epsilon(1e-3));
}

TEST_CASE("score vanishes at the mode and matches the analytic Gaussian") {
  const auto s = make_schedule(50);
  const int t = 20;
  auto m = single_gaussian(0.3, 0.04);
  Grid at_mode(4, 4, s.alpha(t) * 0.3);
  const Grid eps0 = exact_epsilon(m, {at_mode, t}, s);
  for (double v : eps0.values()) CHECK(std::abs(v) < 1e-15);

  auto std_normal = single_gaussian(0.0, 1.0);
  Grid z(4, 4);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.1 * static_cast<double>(i) - 0.7;
  const Grid eps = exact_epsilon(std_normal, {z, t}, s);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(eps[i] == doctest::Approx(s.sigma(t) * z[i]).epsilon(1e-13));
  CHECK_THROWS_AS(exact_epsilon(m, {z, 0}, s), InvalidArgument);
}

TEST_CASE("score agrees with finite differences of the log density") {
  const auto s = make_schedule(50);
  std::mt19937_64 gen(3);
  const auto m = cat_bench(0.7);  // 9 components
  for (int t : {5, 20, 45}) {
    const Grid z = oracle::draw_latent(gen, m, s.alpha(t), s.sigma(t));
    const Grid eps = exact_epsilon(m, {z, t}, s);
    const long double h = 1e-4L;
    double err2 = 0, ref2 = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      Grid zp = z, zm = z;
      zp[i] += static_cast<double>(h);
      zm[i] -= static_cast<double>(h);
      const long double grad =
          (oracle::log_density(m, zp, s.alpha(t), s.sigma(t)) - oracle::log_density(m, zm, s.alpha(t), s.sigma(t))) /
          (2 * h);
      const double fd = static_cast<double>(-s.sigma(t) * grad);
      err2 += (eps[i] - fd) * (eps[i] - fd);
      ref2 += fd * fd;
    }
    CHECK(std::sqrt(err2 / ref2) < 1e-5);
  }
}

TEST_CASE("ddim transitions") {
  // alpha_t = 0.8, alpha_t' = 0.95 on a hand-built two-step schedule
  NoiseSchedule s{2, {1.0, 0.95 * 0.95, 0.64}};
  Grid z(1, 1, 0.9), eps(1, 1, 0.5);
  CHECK(ddim_step(z, eps, 2, 2, s) == z);
  CHECK(ddim_step(z, eps, 2, 0, s)[0] == doctest::Approx(0.75));
  CHECK(ddim_step(z, eps, 2, 1, s)[0] == doctest::Approx(0.8686).epsilon(1e-4));
  CHECK_THROWS_AS(ddim_step(z, eps, 1, 2, s), InvalidArgument);
  CHECK_THROWS_AS(ddim_step(z, Grid(2, 1), 2, 1, s), DimensionMismatch);
}

TEST_CASE("predicted final image is the posterior mean") {
  const auto s = make_schedule(50);
  Grid z(4, 4, 0.2);
  auto m = single_gaussian(0.5, 0.01);
  CHECK(predict_final_image(m, {z, 0}, s) == z);

  const int t = 17;
  const double a = s.alpha(t), sg = s.sigma(t);
  const double v = a * a * 0.01 + sg * sg;
  const Grid pfi = predict_final_image(m, {z, t}, s);
  for (double x : pfi.values()) CHECK(x == doctest::Approx(0.5 + a * 0.01 / v * (0.2 - a * 0.5)).epsilon(1e-12));

  std::mt19937_64 gen(11);
  const auto cb = cat_bench(0.6);
  const Grid zz = oracle::draw_latent(gen, cb, s.alpha(30), s.sigma(30));
  const auto ref = oracle::posterior_mean(cb, zz, s.alpha(30), s.sigma(30));
  const Grid got = predict_final_image(cb, {zz, 30}, s);
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - static_cast<double>(ref[i])) < 1e-8);
}

TEST_CASE("attention maps follow responsibilities") {
  const auto s = make_schedule(50);
  const auto cat = Catalog::builtin();
  const std::vector<std::string> one{"cat"};
  const auto sure = build_conditional_mixture(one, 1.0, cat);
  REQUIRE(sure.components.size() == 2);  // two positions

  // latent sitting on the first present component at low noise
  const int t = 3;
  const auto& mu = sure.components[0].mean_image;
  Grid z(16, 16);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = s.alpha(t) * mu[i];
  const Grid att = attention_map(sure, {z, t}, s, "cat");
  CHECK(att.max() > 0.9);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(att[i] == doctest::Approx(mu[i]).epsilon(1e-6));

  const auto maybe = build_conditional_mixture(one, 0.5, cat);
  Grid zero(16, 16);
  CHECK(attention_map(maybe, {zero, t}, s, "cat").max() < 0.1);
  CHECK_THROWS_AS(attention_map(maybe, {zero, t}, s, "dog"), UnknownObject);
}

TEST_CASE("sampler is deterministic and capture-neutral") {
  const auto s = make_schedule(50);
  const auto m = cat_bench(0.8);
  const std::vector<int> steps{16, 8};
  const auto a = sample_with_capture(m, s, 99, steps);
  const auto b = sample_with_capture(m, s, 99, steps);
  CHECK(a.final_image == b.final_image);
  REQUIRE(a.captures.size() == 2);
  CHECK(a.captures[0].step == 8);
  CHECK(a.captures[0].t == 42);
  CHECK(a.captures[1].step == 16);
  CHECK(a.captures[1].t == 34);
  CHECK(a.captures[0].pfi == b.captures[0].pfi);
  CHECK(a.capture_at(16) == &a.captures[1]);
  CHECK(a.capture_at(5) == nullptr);

  const auto plain = sample_with_capture(m, s, 99, std::vector<int>{});
  CHECK(plain.final_image == a.final_image);
  CHECK(plain.nearest_component == a.nearest_component);
  CHECK(sample_with_capture(m, s, 100, steps).final_image != a.final_image);
  CHECK_THROWS_AS(sample_with_capture(m, s, 1, std::vector<int>{50}), InvalidArgument);

  // a capture at step c reproduces the PFI of the latent at T - c
  Trajectory traj(m, s, 99);
  traj.run_to_step(8);
  CHECK(traj.t() == 42);
  CHECK(predict_final_image(m, {traj.latent(), 42}, s) == a.captures[0].pfi);
}
