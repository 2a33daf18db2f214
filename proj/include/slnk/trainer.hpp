#pragma once

// Width-interleaved training: one batch is run through every configured
// width, gradients accumulate across the passes, and the optimizer applies
// exactly one update per batch.

#include <chrono>
#include <functional>
#include <ostream>

#include "slnk/data.hpp"
#include "slnk/model.hpp"

namespace slnk {

enum class OptimizerKind { Adam, SgdMomentum };

struct TrainConfig {
  int epochs = 30;
  int64_t batch_size = 16;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine_lr = false;
  uint64_t seed = 0;
  int64_t eval_every = 0;  // steps; 0 -> end of epoch only
};

// ---------------------------------------------------------------------------
// Optimizers. Moment buffers mirror the full (width-1.0) parameter shapes
// and are allocated once.
// ---------------------------------------------------------------------------
template <typename T>
class Optimizer {
 public:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<T> m, v;
  };

  Optimizer() = default;

  template <typename Model>
  Optimizer(Model& model, const TrainConfig& cfg) : cfg_(cfg) {
    model.visit_params([&](const std::string& name, Tensor<T>& t) {
      Slot s;
      s.name = name;
      s.param = t;
      s.m.assign(static_cast<size_t>(t.size()), T(0));
      if (cfg_.optimizer == OptimizerKind::Adam)
        s.v.assign(static_cast<size_t>(t.size()), T(0));
      slots_.push_back(std::move(s));
    });
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  std::vector<Slot>& slots() { return slots_; }

  void step(double lr_now) {
    ++t_;
    const T lr = static_cast<T>(lr_now);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.adam_eps);
    const T mu = static_cast<T>(cfg_.momentum);
    const T wd = static_cast<T>(cfg_.weight_decay);
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(t_));

    for (Slot& s : slots_) {
      if (!s.param.has_grad()) continue;  // parameter untouched this step
      T* p = s.param.data();
      const std::vector<T>& g = s.param.grad_view();
      if (cfg_.optimizer == OptimizerKind::Adam) {
        for (size_t i = 0; i < g.size(); ++i) {
          T gi = g[i];
          if (wd != T(0) && gi != T(0)) p[i] -= lr * wd * p[i];
          s.m[i] = b1 * s.m[i] + (T(1) - b1) * gi;
          s.v[i] = b2 * s.v[i] + (T(1) - b2) * gi * gi;
          T mhat = s.m[i] / bc1;
          T vhat = s.v[i] / bc2;
          p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      } else {
        for (size_t i = 0; i < g.size(); ++i) {
          T gi = g[i];
          if (wd != T(0) && gi != T(0)) p[i] -= lr * wd * p[i];
          s.m[i] = mu * s.m[i] + gi;
          p[i] -= lr * s.m[i];
        }
      }
    }
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// One training step (Algorithm 1, lines 5-13): loop widths descending over
// the same batch, accumulate gradients without applying, then update once.
// ---------------------------------------------------------------------------
struct StepMetrics {
  std::vector<double> width_losses;  // one per width, descending width order
  double grad_norm = 0.0;
  double step_ms = 0.0;
};

template <typename T, typename Model>
StepMetrics train_step(Model& model, Graph<T>& graph, Optimizer<T>& opt,
                       const Tensor<T>& batch, const std::vector<int64_t>& labels,
                       double lr_now) {
  const WidthList& widths = model.spec.width_list;
  if (widths.size() == 0) throw ConfigError("empty width list");

  auto t0 = std::chrono::steady_clock::now();
  StepMetrics metrics;
  model.zero_grads();

  for (size_t wi = 0; wi < widths.size(); ++wi) {
    const double w = widths[wi];
    model.set_active_width(w);
    graph.clear();
    double lv = 0.0;
    try {
      Tensor<T> logits = model.forward(graph, batch, /*train=*/true);
      Tensor<T> loss = ops::cross_entropy(graph, logits, labels);
      lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw NumericError("non-finite loss");
      graph.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError(concat(e.what(), " at width ", w));
    }
    metrics.width_losses.push_back(lv);
  }
  graph.clear();

  double gn = 0.0;
  model.visit_params([&](const std::string&, Tensor<T>& t) {
    if (!t.has_grad()) return;
    for (T v : t.grad_view()) gn += static_cast<double>(v) * static_cast<double>(v);
  });
  metrics.grad_norm = std::sqrt(gn);

  opt.step(lr_now);
  model.zero_grads();

  metrics.step_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  return metrics;
}

// ---------------------------------------------------------------------------
// Evaluation: eval-mode forward, no gradients, no state changes.
// ---------------------------------------------------------------------------
struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  int64_t correct = 0;
  int64_t total = 0;
  // Per-example detection scores: softmax probability of class 1 for binary
  // tasks, probability of the predicted class otherwise.
  std::vector<double> scores;
  std::vector<int64_t> labels;
  std::vector<int64_t> predictions;
};

template <typename T, typename Model>
Tensor<T> make_batch(const Model& model, const data::Dataset& ds,
                     const std::vector<size_t>& idx) {
  const int64_t frames = model.spec.frames, mel = model.spec.mel_bins;
  Tensor<T> batch = Tensor<T>::zeros({static_cast<int64_t>(idx.size()), frames, mel});
  for (size_t b = 0; b < idx.size(); ++b) {
    const auto& f = ds.examples[idx[b]].features;
    if (f.frames != frames || f.mel_bins != mel)
      throw ShapeError(concat("example '", ds.examples[idx[b]].source_id,
                              "' features are ", f.frames, "x", f.mel_bins,
                              ", model expects ", frames, "x", mel));
    T* dst = batch.data() + static_cast<int64_t>(b) * frames * mel;
    for (int64_t i = 0; i < frames * mel; ++i) dst[i] = static_cast<T>(f.values[i]);
  }
  return batch;
}

template <typename T, typename Model>
EvalResult evaluate(Model& model, Graph<T>& graph, const data::Dataset& ds,
                    double width, int64_t batch_size = 64) {
  model.set_active_width(width);
  EvalResult r;
  const int64_t k = model.spec.num_classes;
  NoGradGuard<T> guard(graph);
  double loss_sum = 0.0;
  for (size_t start = 0; start < ds.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = start; i < std::min(ds.size(), start + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    Tensor<T> batch = make_batch<T>(model, ds, idx);
    Tensor<T> logits = model.forward(graph, batch, /*train=*/false);
    for (size_t b = 0; b < idx.size(); ++b) {
      const T* row = logits.data() + static_cast<int64_t>(b) * k;
      const int64_t label = ds.examples[idx[b]].label;
      T m = row[0];
      int64_t argmax = 0;
      for (int64_t j = 1; j < k; ++j)
        if (row[j] > m) { m = row[j]; argmax = j; }
      double z = 0.0;
      for (int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - m));
      double logz = static_cast<double>(m) + std::log(z);
      loss_sum -= static_cast<double>(row[label]) - logz;
      double score = (k == 2)
                         ? std::exp(static_cast<double>(row[1]) - logz)
                         : std::exp(static_cast<double>(row[argmax]) - logz);
      r.scores.push_back(score);
      r.labels.push_back(label);
      r.predictions.push_back(argmax);
      if (argmax == label) ++r.correct;
      ++r.total;
    }
  }
  r.loss = r.total ? loss_sum / static_cast<double>(r.total) : 0.0;
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Epoch loop with seeded shuffling, periodic per-width evaluation, and
// checkpoint callbacks ("final" at the end, "best" on the best full-width
// eval accuracy).
// ---------------------------------------------------------------------------
struct TrainResult {
  int64_t steps = 0;
  int epochs_done = 0;
  std::vector<double> epoch_mean_loss_full;  // width 1.0, per epoch
  double best_full_width_accuracy = 0.0;
  std::vector<EvalResult> final_eval;  // one per width
};

template <typename T, typename Model>
using CheckpointSink =
    std::function<void(Model&, Optimizer<T>&, int64_t step, int epochs_done,
                       const std::string& tag)>;

template <typename T, typename Model>
TrainResult train_loop(Model& model, Graph<T>& graph, Optimizer<T>& opt,
                       const data::Dataset& train_ds, const data::Dataset& eval_ds,
                       const TrainConfig& cfg, std::ostream* log,
                       CheckpointSink<T, Model> sink, int start_epoch) {
  const WidthList& widths = model.spec.width_list;
  TrainResult result;
  Rng shuffle_rng(cfg.seed);

  std::vector<size_t> order(train_ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Fast-forward the shuffle stream when resuming at an epoch boundary.
  for (int e = 0; e < start_epoch; ++e) shuffle_rng.shuffle(order);

  const int64_t steps_per_epoch =
      (static_cast<int64_t>(train_ds.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  int64_t step = opt.step_count();

  auto log_line = [&](int64_t s, double w, double loss, double ms) {
    if (!log) return;
    (*log) << "{\"step\":" << s << ",\"width\":" << w << ",\"loss\":" << loss
           << ",\"time_ms\":" << ms << "}\n";
  };

  auto eval_all = [&](bool record_final) {
    std::vector<EvalResult> evals;
    for (size_t wi = 0; wi < widths.size(); ++wi)
      evals.push_back(evaluate<T>(model, graph, eval_ds, widths[wi]));
    if (!evals.empty() && evals[0].total > 0 &&
        evals[0].accuracy > result.best_full_width_accuracy) {
      result.best_full_width_accuracy = evals[0].accuracy;
      if (sink) sink(model, opt, step, result.epochs_done, "best");
    }
    if (record_final) result.final_eval = std::move(evals);
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_full_sum = 0.0;
    int64_t batches = 0;
    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<size_t> idx;
      for (int64_t i = b * cfg.batch_size;
           i < std::min<int64_t>(static_cast<int64_t>(order.size()),
                                 (b + 1) * cfg.batch_size);
           ++i)
        idx.push_back(order[static_cast<size_t>(i)]);
      if (idx.empty()) break;
      Tensor<T> batch = make_batch<T>(model, train_ds, idx);
      std::vector<int64_t> labels;
      for (size_t i : idx) labels.push_back(train_ds.examples[i].label);

      double lr_now = cfg.lr;
      if (cfg.cosine_lr && total_steps > 1)
        lr_now = cfg.lr * 0.5 *
                 (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                 static_cast<double>(total_steps)));

      StepMetrics m = train_step<T>(model, graph, opt, batch, labels, lr_now);
      ++step;
      loss_full_sum += m.width_losses[0];
      ++batches;
      for (size_t wi = 0; wi < widths.size(); ++wi)
        log_line(step, widths[wi], m.width_losses[wi], m.step_ms);
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && eval_ds.size() > 0)
        eval_all(false);
    }
    result.epochs_done = epoch + 1;
    result.epoch_mean_loss_full.push_back(loss_full_sum / std::max<int64_t>(batches, 1));
    if (cfg.eval_every == 0 && eval_ds.size() > 0) eval_all(epoch + 1 == cfg.epochs);
    else if (epoch + 1 == cfg.epochs && eval_ds.size() > 0) eval_all(true);
  }
  result.steps = step;
  if (sink) sink(model, opt, step, result.epochs_done, "final");
  return result;
}

template <typename T, typename Model>
TrainResult train(Model& model, const data::Dataset& train_ds,
                  const data::Dataset& eval_ds, const TrainConfig& cfg,
                  std::ostream* log = nullptr,
                  CheckpointSink<T, Model> sink = {}, int start_epoch = 0) {
  if (train_ds.size() == 0) throw ConfigError("training dataset is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    throw ConfigError("epochs and batch_size must be >= 1");

  Graph<T> graph;
  Optimizer<T> opt(model, cfg);
  return train_loop<T>(model, graph, opt, train_ds, eval_ds, cfg, log,
                       std::move(sink), start_epoch);
}

}  // namespace slnk
