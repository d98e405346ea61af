#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "sgdiff/ddpm.hpp"

using namespace sgdiff;

TEST_CASE("linear schedule invariants and the small worked example") {
  SECTION("beta override on a 2-step schedule") {
    NoiseSchedule s = make_schedule("linear", 2, 0.1, 0.2);
    REQUIRE(s.beta[1] == Catch::Approx(0.1));
    REQUIRE(s.beta[2] == Catch::Approx(0.2));
    REQUIRE(s.alpha_bar[1] == Catch::Approx(0.9));
    REQUIRE(s.alpha_bar[2] == Catch::Approx(0.72));
    REQUIRE(s.posterior_var[2] == Catch::Approx((1 - 0.9) / (1 - 0.72) * 0.2));
    REQUIRE(s.posterior_var[2] == Catch::Approx(0.0714286).margin(1e-6));
    REQUIRE(s.posterior_var[1] == 0.0);
  }

  SECTION("default 1000-step schedule is strictly decreasing in alpha_bar") {
    NoiseSchedule s = make_schedule("linear", 1000);
    REQUIRE(s.beta[1] == Catch::Approx(1e-4));
    REQUIRE(s.beta[1000] == Catch::Approx(0.02));
    for (std::size_t t = 2; t <= 1000; ++t) {
      REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      REQUIRE(s.beta[t] > s.beta[t - 1]);
    }
  }

  SECTION("posterior variance matches the closed form to 1e-12") {
    NoiseSchedule s = make_schedule("linear", 1000);
    for (std::size_t t = 1; t <= 1000; ++t) {
      const double expect =
          (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
      REQUIRE(std::abs(s.posterior_var[t] - expect) < 1e-12);
    }
  }

  SECTION("T = 0 is rejected") {
    REQUIRE_THROWS_AS(make_schedule("linear", 0), config_error);
  }
}

TEST_CASE("cosine schedule") {
  NoiseSchedule s = make_schedule("cosine", 100);
  REQUIRE(s.alpha_bar[1] < 1.0);
  for (std::size_t t = 2; t <= 100; ++t)
    REQUIRE(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  for (std::size_t t = 1; t <= 100; ++t) REQUIRE(s.beta[t] <= 0.999);
}

TEST_CASE("q_sample closed form") {
  NoiseSchedule s = make_schedule("linear", 2, 0.1, 0.2);

  SECTION("zero noise scales by sqrt(alpha_bar)") {
    Tensor x0 = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor eps(Shape{2, 2});
    Tensor xt = q_sample(x0, 2, eps, s);
    for (std::size_t i = 0; i < 4; ++i)
      REQUIRE(xt.cdata()[i] ==
              Catch::Approx(std::sqrt(0.72) * x0.cdata()[i]));
  }

  SECTION("zero signal scales noise by sqrt(1 - alpha_bar)") {
    Tensor x0(Shape{2, 2});
    Tensor eps = Tensor::from_data({2, 2}, {1, -1, 2, -2});
    Tensor xt = q_sample(x0, 2, eps, s);
    for (std::size_t i = 0; i < 4; ++i)
      REQUIRE(xt.cdata()[i] ==
              Catch::Approx(std::sqrt(0.28) * eps.cdata()[i]));
  }

  SECTION("scalar arithmetic example at alpha_bar = 0.72") {
    Tensor one = Tensor::from_data({1}, {1.0});
    Tensor xt = q_sample(one, 2, one, s);
    REQUIRE(xt.cdata()[0] == Catch::Approx(1.37768).margin(1e-5));
  }

  SECTION("step bounds are enforced") {
    Tensor x(Shape{1});
    REQUIRE_THROWS(q_sample(x, 0, x, s));
    REQUIRE_THROWS(q_sample(x, 3, x, s));
  }
}

TEST_CASE("predict_x0_from_eps inverts q_sample at every step") {
  PrecisionGuard precision(Precision::f32);
  NoiseSchedule s = make_schedule("linear", 1000);
  Rng rng(5);
  Tensor x0 = Tensor::rand_uniform({4, 15}, -1, 1, rng);
  for (std::size_t t = 1; t <= 1000; t += 37) {
    Tensor eps = Tensor::randn(x0.shape(), rng);
    Tensor xt = q_sample(x0, t, eps, s);
    Tensor rec = predict_x0_from_eps(xt, t, eps, s);
    for (std::size_t i = 0; i < x0.numel(); ++i)
      REQUIRE(rec.cdata()[i] == Catch::Approx(x0.cdata()[i]).margin(1e-5));
  }

  SECTION("zero predicted noise rescales xt") {
    Tensor xt = Tensor::from_data({1}, {0.5});
    Tensor zero(Shape{1});
    REQUIRE(predict_x0_from_eps(xt, 500, zero, s).cdata()[0] ==
            Catch::Approx(0.5 / std::sqrt(s.alpha_bar[500])).margin(1e-6));
  }

  SECTION("values stay finite at t = T") {
    Rng r2(9);
    Tensor xt = Tensor::randn({4, 15}, r2);
    Tensor eh = Tensor::randn({4, 15}, r2);
    Tensor x0_hat = predict_x0_from_eps(xt, 1000, eh, s);
    for (double v : x0_hat.cdata()) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("posterior mean: epsilon form, x0 form, and the limit case") {
  NoiseSchedule s = make_schedule("linear", 1000);

  SECTION("scalar substitution") {
    NoiseSchedule s2 = make_schedule("linear", 2, 0.1, 0.2);
    // alpha_2 = 0.8; xt = 1, eps_hat = 0 -> mean = 1/sqrt(0.8)
    Tensor xt = Tensor::from_data({1}, {1.0});
    Tensor eps(Shape{1});
    REQUIRE(posterior_mean(xt, 2, eps, s2).cdata()[0] ==
            Catch::Approx(1.0 / std::sqrt(0.8)).margin(1e-6));
  }

  SECTION("epsilon form agrees with the independent (xt, x0) posterior") {
    PrecisionGuard precision(Precision::f64);
    Rng rng(21);
    Tensor x0 = Tensor::rand_uniform({3, 15}, -1, 1, rng);
    for (std::size_t t : {1ul, 2ul, 17ul, 400ul, 1000ul}) {
      Tensor eps = Tensor::randn(x0.shape(), rng);
      Tensor xt = q_sample(x0, t, eps, s);
      Tensor via_eps = posterior_mean(xt, t, eps, s);
      Tensor via_x0 = posterior_mean_from_x0(xt, t, x0, s);
      for (std::size_t i = 0; i < x0.numel(); ++i)
        REQUIRE(via_eps.cdata()[i] ==
                Catch::Approx(via_x0.cdata()[i]).margin(1e-9));
    }
  }

  SECTION("beta -> 0 limit leaves xt unchanged") {
    NoiseSchedule tiny = make_schedule("linear", 2, 1e-9, 2e-9);
    Tensor xt = Tensor::from_data({1}, {0.7});
    Tensor eps(Shape{1});
    REQUIRE(posterior_mean(xt, 1, eps, tiny).cdata()[0] ==
            Catch::Approx(0.7).margin(1e-8));
  }
}

TEST_CASE("dynamic thresholding") {
  SECTION("already in range at percentile 100 is unchanged") {
    Tensor x = Tensor::from_data({3}, {0.5, -0.25, 1.0});
    Tensor y = dynamic_threshold(x, 100.0);
    REQUIRE(y.cdata() == x.cdata());
  }

  SECTION("worked example at percentile 100") {
    Tensor x = Tensor::from_data({3}, {2.0, -0.5, 0.1});
    Tensor y = dynamic_threshold(x, 100.0);
    REQUIRE(y.cdata()[0] == Catch::Approx(1.0));
    REQUIRE(y.cdata()[1] == Catch::Approx(-0.25));
    REQUIRE(y.cdata()[2] == Catch::Approx(0.05));
  }

  SECTION("85th percentile on a 20x15 matrix: sort oracle and clamp count") {
    PrecisionGuard precision(Precision::f64);
    Rng rng(3);
    Tensor x = Tensor::rand_uniform({20, 15}, -3.0, 3.0, rng);
    // independent sort-based oracle
    std::vector<double> mags;
    for (double v : x.cdata()) mags.push_back(std::abs(v));
    std::sort(mags.begin(), mags.end());
    const std::size_t rank =
        static_cast<std::size_t>(std::ceil(0.85 * double(mags.size())));
    const double s = std::max(1.0, mags[rank - 1]);

    std::size_t clamped = 0;
    for (double v : x.cdata())
      if (std::abs(v) > s) ++clamped;
    REQUIRE(clamped ==
            static_cast<std::size_t>(std::ceil(0.15 * double(mags.size()))));

    Tensor y = dynamic_threshold(x, 85.0);
    double maxabs = 0.0;
    for (double v : y.cdata()) maxabs = std::max(maxabs, std::abs(v));
    REQUIRE(maxabs <= 1.0);
    for (std::size_t i = 0; i < x.numel(); ++i)
      REQUIRE(y.cdata()[i] ==
              std::clamp(x.cdata()[i], -s, s) / s);
  }

  SECTION("idempotent") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor x = Tensor::randn({5, 6}, rng);
      Tensor once = dynamic_threshold(x, 85.0);
      Tensor twice = dynamic_threshold(once, 85.0);
      REQUIRE(once.cdata() == twice.cdata());
    }
  }
}

TEST_CASE("classifier-free guidance combination") {
  Tensor u = Tensor::from_data({3}, {0.0, 1.0, -2.0});
  Tensor c = Tensor::from_data({3}, {1.0, 3.0, 0.5});

  SECTION("w = 1 returns the conditional prediction exactly") {
    REQUIRE(cfg_combine(u, c, 1.0).cdata() == c.cdata());
  }
  SECTION("w = 0 returns the unconditional prediction exactly") {
    REQUIRE(cfg_combine(u, c, 0.0).cdata() == u.cdata());
  }
  SECTION("w = 3 extrapolates") {
    Tensor zero(Shape{1});
    Tensor one = Tensor::from_data({1}, {1.0});
    REQUIRE(cfg_combine(zero, one, 3.0).cdata()[0] == Catch::Approx(3.0));
  }
  SECTION("affine identity for arbitrary w") {
    PrecisionGuard precision(Precision::f64);
    Tensor u64 = u.clone();
    Tensor c64 = c.clone();
    const double w = -0.7;
    Tensor out = cfg_combine(u64, c64, w);
    for (std::size_t i = 0; i < 3; ++i)
      REQUIRE(out.cdata()[i] ==
              (1.0 - w) * u64.cdata()[i] + w * c64.cdata()[i]);
  }
}

TEST_CASE("empirical q_sample variance matches 1 - alpha_bar") {
  NoiseSchedule s = make_schedule("linear", 1000);
  Rng rng(12345);
  const std::size_t n = 100000;
  for (std::size_t t : {1ul, 250ul, 1000ul}) {
    Tensor x0(Shape{1});
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor eps = Tensor::randn({1}, rng);
      const double v = q_sample(x0, t, eps, s).cdata()[0];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / double(n);
    const double var = sum2 / double(n) - mean * mean;
    const double expect = 1.0 - s.alpha_bar[t];
    // standard error of the sample variance of a Gaussian
    const double se = expect * std::sqrt(2.0 / (double(n) - 1.0));
    REQUIRE(std::abs(var - expect) < 3.0 * se);
  }
}
