#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sgdiff/common.hpp"
#include "sgdiff/graph.hpp"
#include "sgdiff/rng.hpp"
#include "sgdiff/tensor.hpp"

namespace sgdiff {

// Precomputed diffusion tables, 1-based in t; index 0 holds the conventions
// beta[0]=0, alpha[0]=1, alpha_bar[0]=1, posterior_var[0]=0.
struct NoiseSchedule {
  std::size_t T = 0;
  std::string kind;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;

  void check_step(std::size_t t, const char* who) const {
    SG_CHECK(t >= 1 && t <= T, who, ": step ", t, " outside [1, ", T, "]");
  }
};

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

// `linear` interpolates beta from beta_start to beta_end; `cosine` follows
// the squared-cosine alpha_bar curve (s = 0.008) with beta clipped to 0.999.
inline NoiseSchedule make_schedule(const std::string& kind, std::size_t T,
                                   double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd) {
  SG_CHECK_CONFIG(T >= 1, "make_schedule: T must be >= 1");
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(T + 1, 0.0);
  if (kind == "linear") {
    for (std::size_t t = 1; t <= T; ++t)
      s.beta[t] = T == 1 ? beta_start
                         : beta_start + (beta_end - beta_start) *
                                            static_cast<double>(t - 1) /
                                            static_cast<double>(T - 1);
  } else if (kind == "cosine") {
    constexpr double kS = 0.008;
    auto f = [T](double t) {
      const double x = (t / static_cast<double>(T) + kS) / (1.0 + kS);
      const double c = std::cos(x * 3.14159265358979323846 / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev_bar = 1.0;
    for (std::size_t t = 1; t <= T; ++t) {
      const double bar = f(static_cast<double>(t)) / f0;
      s.beta[t] = std::min(1.0 - bar / prev_bar, 0.999);
      prev_bar = bar;
    }
  } else {
    throw config_error(msg_cat("make_schedule: unknown kind \"", kind, "\""));
  }

  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.posterior_var.assign(T + 1, 0.0);
  for (std::size_t t = 1; t <= T; ++t) {
    SG_CHECK(s.beta[t] > 0.0 && s.beta[t] < 1.0 &&
                 (t == 1 || s.beta[t] > s.beta[t - 1]),
             "make_schedule: beta table is not strictly increasing in (0,1) ",
             "at t=", t);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.posterior_var[t] =
        (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

struct GuidanceConfig {
  double scale = 3.0;                // w; 1 = pure conditional
  double threshold_percentile = 85;  // in (0, 100]
  enum class Target { kEpsilon, kX0 };
  Target prediction_target = Target::kEpsilon;
};

inline GuidanceConfig::Target parse_target(const std::string& s) {
  if (s == "epsilon") return GuidanceConfig::Target::kEpsilon;
  if (s == "x0") return GuidanceConfig::Target::kX0;
  throw config_error(msg_cat("prediction_target must be epsilon or x0, got \"",
                             s, "\""));
}

inline std::string target_name(GuidanceConfig::Target t) {
  return t == GuidanceConfig::Target::kEpsilon ? "epsilon" : "x0";
}

// X_t = sqrt(alpha_bar_t) X_0 + sqrt(1 - alpha_bar_t) eps
inline Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  sched.check_step(t, "q_sample");
  SG_CHECK(x0.shape() == eps.shape(), "q_sample: shape mismatch ",
           shape_str(x0.shape()), " vs ", shape_str(eps.shape()));
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = a * x0.cdata()[i] + b * eps.cdata()[i];
  return out;
}

// algebraic inverse of q_sample: x0 = (xt - sqrt(1-ab) eps) / sqrt(ab)
inline Tensor predict_x0_from_eps(const Tensor& xt, std::size_t t,
                                  const Tensor& eps_hat,
                                  const NoiseSchedule& sched) {
  sched.check_step(t, "predict_x0_from_eps");
  SG_CHECK(xt.shape() == eps_hat.shape(), "predict_x0_from_eps: shape mismatch ",
           shape_str(xt.shape()), " vs ", shape_str(eps_hat.shape()));
  const double ab = sched.alpha_bar[t];
  SG_CHECK(ab >= 1e-12,
           "predict_x0_from_eps: alpha_bar underflow at t=", t,
           " (schedule misconfiguration)");
  const double inv = 1.0 / std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = (xt.cdata()[i] - b * eps_hat.cdata()[i]) * inv;
  return out;
}

// mu = (xt - beta_t / sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t)
inline Tensor posterior_mean(const Tensor& xt, std::size_t t,
                             const Tensor& eps_hat,
                             const NoiseSchedule& sched) {
  sched.check_step(t, "posterior_mean");
  SG_CHECK(xt.shape() == eps_hat.shape(), "posterior_mean: shape mismatch ",
           shape_str(xt.shape()), " vs ", shape_str(eps_hat.shape()));
  SG_CHECK(sched.alpha_bar[t] >= 1e-12,
           "posterior_mean: alpha_bar underflow at t=", t);
  const double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha[t]);
  const double coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] =
        inv_sqrt_a * (xt.cdata()[i] - coef * eps_hat.cdata()[i]);
  return out;
}

// closed-form q-posterior mean of X_{t-1} given (xt, x0)
inline Tensor posterior_mean_from_x0(const Tensor& xt, std::size_t t,
                                     const Tensor& x0,
                                     const NoiseSchedule& sched) {
  sched.check_step(t, "posterior_mean_from_x0");
  const double ab = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double c0 = std::sqrt(ab_prev) * sched.beta[t] / (1.0 - ab);
  const double ct = std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = c0 * x0.cdata()[i] + ct * xt.cdata()[i];
  return out;
}

// Per-scene percentile clamp-and-rescale: s = max(1, p-th percentile of |v|),
// clamp to [-s, s], divide by s. Output always lies in [-1, 1]; idempotent.
// The percentile of n sorted magnitudes is the ceil(p/100 * n)-th smallest.
inline Tensor dynamic_threshold(const Tensor& x0_hat, double percentile) {
  SG_CHECK(percentile > 0.0 && percentile <= 100.0,
           "dynamic_threshold: percentile must lie in (0, 100]");
  const std::size_t n = x0_hat.numel();
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(x0_hat.cdata()[i]);
  std::sort(mags.begin(), mags.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(n)));
  rank = std::min(std::max<std::size_t>(rank, 1), n);
  const double s = std::max(1.0, mags[rank - 1]);
  Tensor out(x0_hat.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::clamp(x0_hat.cdata()[i], -s, s);
    out.data()[i] = v / s;
  }
  return out;
}

// eps = (1-w) * eps_uncond + w * eps_cond; exact at w = 0 and w = 1
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond,
                          double w) {
  SG_CHECK(eps_uncond.shape() == eps_cond.shape(),
           "cfg_combine: shape mismatch ", shape_str(eps_uncond.shape()),
           " vs ", shape_str(eps_cond.shape()));
  Tensor out(eps_uncond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] =
        (1.0 - w) * eps_uncond.cdata()[i] + w * eps_cond.cdata()[i];
  return out;
}

// denoiser as seen by the sampler: (xt, t, condition) -> prediction
using DenoiseFn =
    std::function<Tensor(const Tensor& xt, std::size_t t, const FusedGraph&)>;

// One reverse step: guided prediction -> x0 estimate -> dynamic threshold ->
// posterior mean recomputed from the thresholded estimate -> Gaussian noise
// scaled by the posterior variance (none at t = 1).
inline Tensor p_sample_step(const Tensor& xt, std::size_t t,
                            const DenoiseFn& model, const FusedGraph& cond,
                            const GuidanceConfig& cfg, Rng& rng,
                            const NoiseSchedule& sched) {
  sched.check_step(t, "p_sample_step");
  const Tensor out_cond = model(xt, t, cond);
  const Tensor out_uncond = model(xt, t, mask_condition(cond));
  for (double v : out_cond.cdata())
    SG_CHECK_NUMERIC(std::isfinite(v),
                     "p_sample_step: non-finite conditional output at t=", t);
  for (double v : out_uncond.cdata())
    SG_CHECK_NUMERIC(std::isfinite(v),
                     "p_sample_step: non-finite unconditional output at t=", t);

  const Tensor guided = cfg_combine(out_uncond, out_cond, cfg.scale);
  const Tensor x0_hat = cfg.prediction_target == GuidanceConfig::Target::kEpsilon
                            ? predict_x0_from_eps(xt, t, guided, sched)
                            : guided;
  const Tensor x0_thr = dynamic_threshold(x0_hat, cfg.threshold_percentile);
  Tensor mean = posterior_mean_from_x0(xt, t, x0_thr, sched);
  if (t == 1) return mean;
  const double sigma = std::sqrt(sched.posterior_var[t]);
  for (auto& v : mean.data()) v += sigma * rng.normal();
  return mean;
}

// Full reverse trajectory from X_T ~ N(0, I) down to the X_0 estimate
// (normalized units). Rows keep the condition graph's labels, padded with
// `empty`.
inline SceneMatrix sample_loop(const DenoiseFn& model, const SceneGraph& graph,
                               const LabelEmbedder& emb, std::size_t n_max,
                               const GuidanceConfig& cfg,
                               const NoiseSchedule& sched, Rng& rng) {
  Tensor xt(Shape{n_max, kSceneDim});
  for (auto& v : xt.data()) v = rng.normal();
  const FusedGraph cond = fuse_condition(xt, graph, emb);
  for (std::size_t t = sched.T; t >= 1; --t)
    xt = p_sample_step(xt, t, model, cond, cfg, rng, sched);
  SceneMatrix scene;
  scene.rows = xt;
  scene.labels = graph.node_labels;
  scene.labels.resize(n_max, kEmptyLabel);
  return scene;
}

}  // namespace sgdiff
