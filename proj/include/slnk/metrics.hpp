#pragma once

// Parameter/multiply accounting, detection metrics, and the training-time
// profiler.

#include "slnk/trainer.hpp"

namespace slnk::metrics {

// ---------------------------------------------------------------------------
// RunReport: one row per width, Tables 2-6 style.
// ---------------------------------------------------------------------------
struct ReportRow {
  double width = 1.0;
  int64_t params = 0;
  int64_t multiplies = 0;
  double accuracy = -1.0;       // < 0 -> not measured
  double relative_fa = -1.0;    // < 0 -> not measured
  double loss = -1.0;
  double time_per_step_ms = -1.0;
};

struct RunReport {
  std::string model_name;
  std::string spec_hash;
  uint64_t seed = 0;
  std::string date;
  std::vector<ReportRow> rows;

  std::string to_json() const;
  std::string to_table() const;
};

RunReport make_report_skeleton(const std::string& model_name,
                               const std::string& spec_summary, uint64_t seed);

// ---------------------------------------------------------------------------
// Detection metrics. Scores are keyword scores (higher = more keyword-like),
// labels are 1 for positives. The threshold is the highest score that keeps
// the miss rate within target_miss; the FA count is the number of negatives
// at or above it.
// ---------------------------------------------------------------------------
struct FaResult {
  int64_t false_accepts = 0;
  double threshold = 0.0;
  int64_t positives = 0;
  int64_t negatives = 0;
  double miss_rate = 0.0;
};

FaResult false_accepts_at_miss_rate(const std::vector<double>& scores,
                                    const std::vector<int64_t>& labels,
                                    double target_miss);

double relative_false_accepts(const FaResult& model, const FaResult& baseline);

// ---------------------------------------------------------------------------
// Instrumented multiply counting: run a real forward pass (batch of one, eval
// mode) and read the op-level counter. Independent of cost_breakdown's
// analytic walk.
// ---------------------------------------------------------------------------
template <typename T>
int64_t count_multiplies_instrumented(SlimModel<T>& model, double width) {
  Graph<T> g;
  NoGradGuard<T> guard(g);
  model.set_active_width(width);
  Tensor<T> x = Tensor<T>::zeros({1, model.spec.frames, model.spec.mel_bins});
  ops::reset_multiply_count();
  (void)model.forward(g, x, /*train=*/false);
  int64_t n = ops::multiply_count;
  ops::reset_multiply_count();
  return n;
}

// ---------------------------------------------------------------------------
// Table-4 style profiler: for each width count n, build a fresh model with n
// evenly spaced widths and time train_step on a fixed batch. Median of
// >= `timed` steps after `warmup` steps. Must run exclusively and
// single-threaded for reproducible ratios.
// ---------------------------------------------------------------------------
struct ProfilePoint {
  int width_count = 1;
  double seconds_per_step = 0.0;
  double ratio_vs_single = 1.0;
};

struct ProfileOptions {
  int64_t batch_size = 16;
  int warmup = 5;
  int timed = 20;
  uint64_t seed = 0;
};

template <typename T>
std::vector<ProfilePoint> profile_time_per_step(const ModelSpec& base_spec,
                                                const std::vector<int>& width_counts,
                                                const ProfileOptions& opts,
                                                std::ostream* warn = nullptr) {
  std::vector<ProfilePoint> points;
  for (int n : width_counts) {
    ModelSpec spec = base_spec;
    spec.width_list = WidthList::evenly_spaced(n);
    SlimModel<T> model = build_model<T>(spec, opts.seed);
    Graph<T> graph;
    TrainConfig cfg;
    cfg.seed = opts.seed;
    Optimizer<T> opt(model, cfg);

    Rng rng(opts.seed + 1);
    Tensor<T> batch = Tensor<T>::zeros({opts.batch_size, spec.frames, spec.mel_bins});
    for (int64_t i = 0; i < batch.size(); ++i)
      batch.data()[i] = static_cast<T>(rng.normal());
    std::vector<int64_t> labels(static_cast<size_t>(opts.batch_size));
    for (size_t i = 0; i < labels.size(); ++i)
      labels[i] = static_cast<int64_t>(i) % spec.num_classes;

    for (int i = 0; i < opts.warmup; ++i)
      (void)train_step<T>(model, graph, opt, batch, labels, cfg.lr);
    std::vector<double> ms;
    for (int i = 0; i < opts.timed; ++i)
      ms.push_back(train_step<T>(model, graph, opt, batch, labels, cfg.lr).step_ms);
    std::sort(ms.begin(), ms.end());
    double median = ms[ms.size() / 2];
    if (median < 10.0 && warn)
      (*warn) << "warning: step time " << median
              << " ms is below the 10 ms timer-resolution floor; increase the "
                 "profile batch size\n";
    ProfilePoint p;
    p.width_count = n;
    p.seconds_per_step = median / 1000.0;
    points.push_back(p);
  }
  for (auto& p : points)
    p.ratio_vs_single = points.empty() || points[0].seconds_per_step == 0.0
                            ? 1.0
                            : p.seconds_per_step / points[0].seconds_per_step;
  return points;
}

}  // namespace slnk::metrics
