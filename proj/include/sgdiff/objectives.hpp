#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sgdiff/data.hpp"
#include "sgdiff/ddpm.hpp"
#include "sgdiff/denoiser.hpp"
#include "sgdiff/graph.hpp"
#include "sgdiff/scene.hpp"
#include "sgdiff/tensor.hpp"

namespace sgdiff {

struct LossWeights {
  double recon = 1.0;   // lambda_1
  double volume = 0.2;  // lambda_2
  double ratio = 0.2;   // lambda_3

  void validate() const {
    SG_CHECK_CONFIG(recon >= 0 && volume >= 0 && ratio >= 0 &&
                        std::isfinite(recon) && std::isfinite(volume) &&
                        std::isfinite(ratio),
                    "loss weights must be finite and non-negative");
  }
};

// Per-category volume and log-side-ratio means over the training split; the
// targets of the volume and aspect-ratio losses.
struct CategoryStats {
  struct Entry {
    double mean_volume = 0.0;
    double mean_log_xy = 0.0;  // mean log(sx/sy)
    double mean_log_yz = 0.0;  // mean log(sy/sz)
  };
  std::map<std::string, Entry> by_label;

  static CategoryStats fit(const std::vector<DataPair>& train) {
    CategoryStats stats;
    std::map<std::string, std::size_t> counts;
    for (const auto& pair : train)
      for (const auto& obj : pair.objects) {
        auto& e = stats.by_label[obj.label];
        const double sx = std::max(obj.size[0], 1e-4);
        const double sy = std::max(obj.size[1], 1e-4);
        const double sz = std::max(obj.size[2], 1e-4);
        e.mean_volume += object_volume(obj);
        e.mean_log_xy += std::log(sx / sy);
        e.mean_log_yz += std::log(sy / sz);
        ++counts[obj.label];
      }
    for (auto& [label, e] : stats.by_label) {
      const double n = static_cast<double>(counts[label]);
      e.mean_volume /= n;
      e.mean_log_xy /= n;
      e.mean_log_yz /= n;
    }
    return stats;
  }

  const Entry& require(const std::string& label) const {
    auto it = by_label.find(label);
    SG_CHECK(it != by_label.end(), "category stats: no entry for label \"",
             label, "\"");
    return it->second;
  }
};

enum class ReconKind { kL1, kL2 };

inline ReconKind parse_recon_kind(const std::string& s) {
  if (s == "l1") return ReconKind::kL1;
  if (s == "l2") return ReconKind::kL2;
  throw config_error(msg_cat("recon loss must be l1 or l2, got \"", s, "\""));
}

// mean over all entries of |pred - target| or (pred - target)^2
inline Tensor recon_loss(Tape* tape, const Tensor& pred, const Tensor& target,
                         ReconKind kind) {
  Tensor d = sub(tape, pred, target);
  if (kind == ReconKind::kL2) return mean_all(tape, square(tape, d));
  Tensor absd = add(tape, relu(tape, d), relu(tape, scale(tape, d, -1.0)));
  return mean_all(tape, absd);
}

namespace detail {

struct SizeColumns {
  Tensor world;  // K x 3 denormalized extents (tracked)
  std::vector<std::string> labels;
};

// gathers non-empty rows of a normalized prediction and maps the three size
// dimensions back to meters on the tape
inline SizeColumns predicted_world_sizes(Tape* tape, const Tensor& pred_rows,
                                         const std::vector<std::string>& labels,
                                         const std::vector<std::size_t>& keep,
                                         const Normalizer& norm) {
  const std::size_t k = keep.size();
  Tensor gathered = row_gather(tape, pred_rows, keep);
  Tensor selector(Shape{kSceneDim, 3});
  for (std::size_t c = 0; c < 3; ++c)
    selector.data()[(12 + c) * 3 + c] = 1.0;
  Tensor sizes_unit = matmul(tape, gathered, selector);  // K x 3

  Tensor half_range(Shape{k, 3});
  Tensor midpoint(Shape{k, 3});
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t d = 12 + c;
      half_range.data()[r * 3 + c] = (norm.hi()[d] - norm.lo()[d]) / 2.0;
      midpoint.data()[r * 3 + c] = (norm.hi()[d] + norm.lo()[d]) / 2.0;
    }
  SizeColumns out;
  out.world = add(tape, mul(tape, sizes_unit, half_range), midpoint);
  for (auto i : keep) out.labels.push_back(labels[i]);
  return out;
}

inline Tensor column(Tape* tape, const Tensor& mat, std::size_t c) {
  Tensor sel(Shape{mat.shape()[1], 1});
  sel.data()[c] = 1.0;
  return matmul(tape, mat, sel);  // K x 1
}

inline std::vector<std::size_t> nonempty_rows(
    const std::vector<std::string>& labels) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kEmptyLabel) keep.push_back(i);
  return keep;
}

}  // namespace detail

// mean over non-empty objects of (volume(pred sizes) - category mean)^2;
// x0-prediction mode only, all-empty scenes score 0 by convention
inline Tensor volume_loss(Tape* tape, const Tensor& pred_rows,
                          const std::vector<std::string>& labels,
                          const CategoryStats& stats, const Normalizer& norm) {
  const auto keep = detail::nonempty_rows(labels);
  if (keep.empty()) return Tensor::scalar(0.0);
  auto sizes = detail::predicted_world_sizes(tape, pred_rows, labels, keep, norm);
  Tensor vol = mul(tape,
                   mul(tape, detail::column(tape, sizes.world, 0),
                       detail::column(tape, sizes.world, 1)),
                   detail::column(tape, sizes.world, 2));  // K x 1
  Tensor target(Shape{keep.size(), 1});
  for (std::size_t i = 0; i < keep.size(); ++i)
    target.data()[i] = stats.require(sizes.labels[i]).mean_volume;
  Tensor diff = square(tape, sub(tape, vol, target));
  return mean_axis(tape, mean_axis(tape, diff, 0), 0);
}

// mean over non-empty objects of the squared deviation of log side ratios
// from the category means; sides are clamped at 1e-4 m before the ratios
inline Tensor aspect_ratio_loss(Tape* tape, const Tensor& pred_rows,
                                const std::vector<std::string>& labels,
                                const CategoryStats& stats,
                                const Normalizer& norm) {
  const auto keep = detail::nonempty_rows(labels);
  if (keep.empty()) return Tensor::scalar(0.0);
  auto sizes = detail::predicted_world_sizes(tape, pred_rows, labels, keep, norm);
  Tensor clamped = clamp_min(tape, sizes.world, 1e-4);
  Tensor logs = log_op(tape, clamped);
  Tensor lx = detail::column(tape, logs, 0);
  Tensor ly = detail::column(tape, logs, 1);
  Tensor lz = detail::column(tape, logs, 2);

  Tensor mu_xy(Shape{keep.size(), 1});
  Tensor mu_yz(Shape{keep.size(), 1});
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto& e = stats.require(sizes.labels[i]);
    mu_xy.data()[i] = e.mean_log_xy;
    mu_yz.data()[i] = e.mean_log_yz;
  }
  Tensor t1 = square(tape, sub(tape, sub(tape, lx, ly), mu_xy));
  Tensor t2 = square(tape, sub(tape, sub(tape, ly, lz), mu_yz));
  return mean_axis(tape, mean_axis(tape, add(tape, t1, t2), 0), 0);
}

// Weighted sum in x0 mode; plain reconstruction in epsilon mode (volume and
// ratio terms are not meaningful on noise).
inline Tensor total_loss(Tape* tape, const Tensor& pred, const Tensor& target,
                         GuidanceConfig::Target mode, const LossWeights& w,
                         ReconKind kind, const std::vector<std::string>& labels,
                         const CategoryStats& stats, const Normalizer& norm) {
  Tensor recon = recon_loss(tape, pred, target, kind);
  if (mode == GuidanceConfig::Target::kEpsilon) return recon;
  Tensor vol = volume_loss(tape, pred, labels, stats, norm);
  Tensor ratio = aspect_ratio_loss(tape, pred, labels, stats, norm);
  return add(tape, scale(tape, recon, w.recon),
             add(tape, scale(tape, vol, w.volume),
                 scale(tape, ratio, w.ratio)));
}

// ---------------------------------------------------------------------------
// optimizer and schedule
// ---------------------------------------------------------------------------

// Adam with decoupled weight decay applied before the update. beta1=0.9,
// beta2=0.999, eps=1e-8.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;

  static AdamState init(const ParamStore& params) {
    AdamState s;
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.m.emplace_back(params.item(i).second.numel(), 0.0);
      s.v.emplace_back(params.item(i).second.numel(), 0.0);
    }
    return s;
  }
};

inline void adam_step(ParamStore& params, AdamState& state, double lr,
                      double weight_decay) {
  SG_CHECK(state.m.size() == params.size(), "adam_step: state size mismatch");
  ++state.step;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params.item(i);
    const auto& g = t.cgrad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& p = t.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      SG_CHECK_NUMERIC(std::isfinite(g[j]), "adam_step: non-finite gradient in ",
                       name);
      if (weight_decay != 0.0) p[j] -= lr * weight_decay * p[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] = quantize(p[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// Reduce-on-plateau: after `patience` consecutive evaluations without a
// strict improvement beyond 1e-6, multiply the rate by `factor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience)
      : lr_(lr), factor_(factor), patience_(patience) {}

  double step(double metric) {
    SG_CHECK(std::isfinite(metric), "plateau_step: non-finite metric");
    if (metric < best_ - 1e-6) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ >= patience_) {
      lr_ *= factor_;
      bad_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 10000;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  double plateau_factor = 0.8;
  std::size_t plateau_patience = 60;
  double condition_drop_prob = 0.15;
  ReconKind recon_kind = ReconKind::kL2;
  LossWeights weights;
  double stop_train_loss = 0.0;  // early stop threshold, 0 disables
  std::uint64_t seed = 0;

  void validate() const {
    SG_CHECK_CONFIG(batch_size >= 1 && epochs >= 1,
                    "train config: batch size and epochs must be positive");
    SG_CHECK_CONFIG(lr > 0 && std::isfinite(lr),
                    "train config: lr must be positive");
    SG_CHECK_CONFIG(condition_drop_prob >= 0.0 && condition_drop_prob <= 1.0,
                    "train config: condition_drop_prob must lie in [0, 1]");
    SG_CHECK_CONFIG(plateau_factor > 0.0 && plateau_factor <= 1.0,
                    "train config: plateau_factor must lie in (0, 1]");
    weights.validate();
  }
};

// one training example with its precomputed condition forms
struct TrainItem {
  Tensor x0;  // n_max x kSceneDim, normalized
  std::vector<std::string> labels;
  FusedGraph fused;
  FusedGraph masked;
};

inline std::vector<TrainItem> build_train_items(
    const std::vector<DataPair>& pairs, std::size_t n_max,
    const Normalizer& norm, const LabelEmbedder& emb) {
  std::vector<TrainItem> items;
  for (const auto& pair : pairs) {
    TrainItem item;
    SceneMatrix world = pad_scene(pair.objects, n_max);
    SceneMatrix unit = normalize(world, norm);
    item.x0 = unit.rows;
    item.labels = unit.labels;
    item.fused = fuse_condition(unit.rows, pair.graph, emb);
    item.masked = mask_condition(item.fused);
    items.push_back(std::move(item));
  }
  return items;
}

struct EpochMetrics {
  double mean_loss = 0.0;
  double min_batch_loss = std::numeric_limits<double>::infinity();
  double lr = 0.0;
  std::size_t masked_samples = 0;
  std::size_t samples = 0;
  std::size_t steps = 0;
};

// Runs one pass over the items: per sample draw t and noise, form X_t, drop
// the condition with the configured probability, and take one optimizer step
// per batch on the mean batch loss.
inline EpochMetrics train_epoch(DenoiserParams& params,
                                const DenoiserConfig& dcfg,
                                const TrainConfig& tcfg,
                                const GuidanceConfig& gcfg,
                                const NoiseSchedule& sched,
                                const CategoryStats& stats,
                                const Normalizer& norm,
                                const std::vector<TrainItem>& items,
                                AdamState& adam, double lr, Rng& rng) {
  SG_CHECK(!items.empty(), "train_epoch: no training items");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  EpochMetrics metrics;
  metrics.lr = lr;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += tcfg.batch_size) {
    const std::size_t stop = std::min(order.size(), start + tcfg.batch_size);
    const double inv = 1.0 / static_cast<double>(stop - start);
    Tape tape;
    Tensor batch_loss;
    for (std::size_t k = start; k < stop; ++k) {
      const TrainItem& item = items[order[k]];
      const std::size_t t = 1 + rng.uniform_int(sched.T);
      Tensor eps = Tensor::randn(item.x0.shape(), rng);
      Tensor xt = q_sample(item.x0, t, eps, sched);
      const bool drop = rng.uniform() < tcfg.condition_drop_prob;
      if (drop) ++metrics.masked_samples;
      const FusedGraph& cond = drop ? item.masked : item.fused;
      Tensor pred = denoiser_forward(&tape, xt, t, cond, params, dcfg);
      const Tensor& target =
          gcfg.prediction_target == GuidanceConfig::Target::kEpsilon ? eps
                                                                     : item.x0;
      Tensor sample_loss =
          scale(&tape,
                total_loss(&tape, pred, target, gcfg.prediction_target,
                           tcfg.weights, tcfg.recon_kind, item.labels, stats,
                           norm),
                inv);
      batch_loss = batch_loss.defined() ? add(&tape, batch_loss, sample_loss)
                                        : sample_loss;
      ++metrics.samples;
    }
    const double loss_value = batch_loss.cdata()[0];
    SG_CHECK_NUMERIC(std::isfinite(loss_value),
                     "train_epoch: non-finite loss in batch ", batches,
                     " (samples ", start, "..", stop - 1, ")");
    params.store.zero_grad();
    tape.backward(batch_loss);
    adam_step(params.store, adam, lr, tcfg.weight_decay);
    loss_sum += loss_value;
    metrics.min_batch_loss = std::min(metrics.min_batch_loss, loss_value);
    ++batches;
    ++metrics.steps;
  }
  metrics.mean_loss = loss_sum / static_cast<double>(batches);
  return metrics;
}

// fixed (t, eps) draws make validation comparable across epochs
struct ValFixture {
  std::vector<std::size_t> ts;
  std::vector<Tensor> eps;

  static ValFixture draw(const std::vector<TrainItem>& items,
                         const NoiseSchedule& sched, Rng& rng) {
    ValFixture f;
    for (const auto& item : items) {
      f.ts.push_back(1 + rng.uniform_int(sched.T));
      f.eps.push_back(Tensor::randn(item.x0.shape(), rng));
    }
    return f;
  }
};

inline double eval_loss(const DenoiserParams& params,
                        const DenoiserConfig& dcfg, const TrainConfig& tcfg,
                        const GuidanceConfig& gcfg, const NoiseSchedule& sched,
                        const CategoryStats& stats, const Normalizer& norm,
                        const std::vector<TrainItem>& items,
                        const ValFixture& fixture) {
  SG_CHECK(!items.empty(), "eval_loss: no items");
  double sum = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const TrainItem& item = items[i];
    Tensor xt = q_sample(item.x0, fixture.ts[i], fixture.eps[i], sched);
    Tensor pred = denoiser_forward(nullptr, xt, fixture.ts[i], item.fused,
                                   params, dcfg);
    const Tensor& target =
        gcfg.prediction_target == GuidanceConfig::Target::kEpsilon
            ? fixture.eps[i]
            : item.x0;
    sum += total_loss(nullptr, pred, target, gcfg.prediction_target,
                      tcfg.weights, tcfg.recon_kind, item.labels, stats, norm)
               .cdata()[0];
  }
  return sum / static_cast<double>(items.size());
}

inline DenoiserParams clone_params(const DenoiserParams& params) {
  DenoiserParams out;
  out.relation_count = params.relation_count;
  for (std::size_t i = 0; i < params.store.size(); ++i) {
    const auto& [name, t] = params.store.item(i);
    out.store.add(name, t.clone());
  }
  return out;
}

struct TrainResult {
  DenoiserParams best_params;
  double best_val = std::numeric_limits<double>::infinity();
  double final_train = std::numeric_limits<double>::infinity();
  double min_train = std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
  std::size_t steps_run = 0;
  std::vector<std::string> log_lines;  // "epoch, train_loss, val_loss, lr"
};

// Full training run: epochs of train_epoch, deterministic validation, plateau
// scheduling, best-validation snapshotting, and an optional early stop on the
// training loss.
inline TrainResult run_training(DenoiserParams& params,
                                const DenoiserConfig& dcfg,
                                const TrainConfig& tcfg,
                                const GuidanceConfig& gcfg,
                                const NoiseSchedule& sched,
                                const CategoryStats& stats,
                                const Normalizer& norm,
                                const std::vector<TrainItem>& train_items,
                                const std::vector<TrainItem>& val_items) {
  tcfg.validate();
  TrainResult result;
  AdamState adam = AdamState::init(params.store);
  PlateauScheduler plateau(tcfg.lr, tcfg.plateau_factor, tcfg.plateau_patience);
  Rng train_rng = Rng::substream(tcfg.seed, 0xA11CE);
  Rng val_rng = Rng::substream(tcfg.seed, 0xBEEF);
  const ValFixture fixture =
      ValFixture::draw(val_items.empty() ? train_items : val_items, sched,
                       val_rng);

  double lr = tcfg.lr;
  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    EpochMetrics m = train_epoch(params, dcfg, tcfg, gcfg, sched, stats, norm,
                                 train_items, adam, lr, train_rng);
    const double val =
        eval_loss(params, dcfg, tcfg, gcfg, sched, stats, norm,
                  val_items.empty() ? train_items : val_items, fixture);
    lr = plateau.step(val);

    if (val < result.best_val) {
      result.best_val = val;
      result.best_params = clone_params(params);
    }
    result.final_train = m.mean_loss;
    result.min_train = std::min(result.min_train, m.min_batch_loss);
    result.epochs_run = epoch + 1;
    result.steps_run += m.steps;

    std::ostringstream line;
    line << epoch << ", " << std::setprecision(9) << m.mean_loss << ", " << val
         << ", " << lr;
    result.log_lines.push_back(line.str());

    if (tcfg.stop_train_loss > 0.0 &&
        m.min_batch_loss < tcfg.stop_train_loss)
      break;
  }
  if (!result.best_params.store.size()) result.best_params = clone_params(params);
  return result;
}

}  // namespace sgdiff
