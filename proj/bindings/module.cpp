// Python bindings for the float build of the library: model construction,
// width-interleaved training, evaluation, extraction, accounting, features.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slnk/metrics.hpp"
#include "slnk/model_io.hpp"

namespace py = pybind11;
using namespace slnk;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from_array(const FloatArray& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor<float>::from(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

data::Dataset dataset_from_arrays(const FloatArray& features,
                                  const std::vector<int64_t>& labels,
                                  int64_t num_classes) {
  if (features.ndim() != 3)
    throw ShapeError("features must be a [N, frames, mel_bins] array");
  const int64_t n = features.shape(0), fr = features.shape(1), mel = features.shape(2);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("labels length must match the leading feature dimension");
  data::Dataset ds;
  for (int64_t c = 0; c < num_classes; ++c) ds.class_names.push_back(concat("c", c));
  const float* base = features.data();
  for (int64_t i = 0; i < n; ++i) {
    data::LabeledExample ex;
    ex.label = labels[static_cast<size_t>(i)];
    ex.source_id = concat("mem", i);
    ex.features.frames = fr;
    ex.features.mel_bins = mel;
    ex.features.values.assign(base + i * fr * mel, base + (i + 1) * fr * mel);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// Model plus its tape; forward/train always run through the same graph.
struct PyModel {
  SlimModel<float> model;
  Graph<float> graph;
  std::unique_ptr<Optimizer<float>> opt;
  TrainConfig train_cfg;

  explicit PyModel(SlimModel<float> m) : model(std::move(m)) {}

  std::vector<double> widths() const { return model.spec.width_list.widths; }

  py::array_t<float> forward(const FloatArray& batch, double width, bool train) {
    Tensor<float> x = tensor_from_array(batch);
    if (!train) {
      NoGradGuard<float> guard(graph);
      return array_from_tensor(model.forward_at(graph, x, width, false));
    }
    auto out = array_from_tensor(model.forward_at(graph, x, width, true));
    graph.clear();
    return out;
  }

  void ensure_optimizer() {
    if (!opt) opt = std::make_unique<Optimizer<float>>(model, train_cfg);
  }

  py::dict train_step_py(const FloatArray& batch, const std::vector<int64_t>& labels,
                         double lr) {
    ensure_optimizer();
    Tensor<float> x = tensor_from_array(batch);
    StepMetrics m = train_step<float>(model, graph, *opt, x, labels, lr);
    py::dict out;
    out["width_losses"] = m.width_losses;
    out["grad_norm"] = m.grad_norm;
    out["step_ms"] = m.step_ms;
    return out;
  }

  py::dict fit(const FloatArray& features, const std::vector<int64_t>& labels,
               int epochs, int64_t batch_size, double lr, uint64_t seed) {
    data::Dataset ds =
        dataset_from_arrays(features, labels, model.spec.num_classes);
    auto [train_ds, eval_ds] = data::split_dataset(ds, 0.2);
    train_cfg.epochs = epochs;
    train_cfg.batch_size = batch_size;
    train_cfg.lr = lr;
    train_cfg.seed = seed;
    TrainResult r = train<float>(model, train_ds, eval_ds, train_cfg);
    py::dict out;
    out["steps"] = r.steps;
    out["epoch_mean_loss_full"] = r.epoch_mean_loss_full;
    out["best_full_width_accuracy"] = r.best_full_width_accuracy;
    py::list evals;
    for (size_t wi = 0; wi < r.final_eval.size(); ++wi) {
      py::dict e;
      e["width"] = model.spec.width_list[wi];
      e["loss"] = r.final_eval[wi].loss;
      e["accuracy"] = r.final_eval[wi].accuracy;
      evals.append(e);
    }
    out["final_eval"] = evals;
    return out;
  }

  py::dict evaluate_py(const FloatArray& features, const std::vector<int64_t>& labels,
                       double width) {
    data::Dataset ds = dataset_from_arrays(features, labels, model.spec.num_classes);
    EvalResult r = evaluate<float>(model, graph, ds, width);
    py::dict out;
    out["loss"] = r.loss;
    out["accuracy"] = r.accuracy;
    out["scores"] = r.scores;
    out["predictions"] = r.predictions;
    return out;
  }

  PyModel extract(double width) const {
    return PyModel(extract_subnetwork(model, width));
  }

  void save(const std::string& path) {
    data::FeatureParams fp;
    fp.mel_bins = model.spec.mel_bins;
    checkpoint_from_model(model, config_text_for_spec(model.spec, fp)).save(path);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Slimmable keyword-spotting networks: train one super-network, run "
            "any configured width.";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<ConfigError>(m, "ConfigurationError");
  py::register_exception<IoError>(m, "IoError");

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("widths", &PyModel::widths)
      .def_property_readonly("num_classes",
                             [](const PyModel& p) { return p.model.spec.num_classes; })
      .def_property_readonly("frames",
                             [](const PyModel& p) { return p.model.spec.frames; })
      .def_property_readonly("mel_bins",
                             [](const PyModel& p) { return p.model.spec.mel_bins; })
      .def("set_active_width",
           [](PyModel& p, double w) { p.model.set_active_width(w); })
      .def("forward", &PyModel::forward, py::arg("batch"), py::arg("width"),
           py::arg("train") = false,
           "Run a [N, frames, mel_bins] batch and return [N, num_classes] logits.")
      .def("train_step", &PyModel::train_step_py, py::arg("batch"), py::arg("labels"),
           py::arg("lr") = 1e-3,
           "One width-interleaved step: every configured width sees the batch, "
           "gradients accumulate, weights update once.")
      .def("fit", &PyModel::fit, py::arg("features"), py::arg("labels"),
           py::arg("epochs") = 10, py::arg("batch_size") = 16, py::arg("lr") = 1e-3,
           py::arg("seed") = 0)
      .def("evaluate", &PyModel::evaluate_py, py::arg("features"), py::arg("labels"),
           py::arg("width"))
      .def("count_params",
           [](const PyModel& p, double w) { return count_params(p.model, w); },
           py::arg("width"))
      .def("count_multiplies",
           [](const PyModel& p, double w) { return count_multiplies(p.model, w); },
           py::arg("width"))
      .def("count_multiplies_instrumented",
           [](PyModel& p, double w) {
             return metrics::count_multiplies_instrumented(p.model, w);
           },
           py::arg("width"))
      .def("cost_breakdown",
           [](const PyModel& p, double w) {
             py::list rows;
             for (const auto& r : cost_breakdown(p.model, w))
               rows.append(py::make_tuple(r.name, r.params, r.multiplies));
             return rows;
           },
           py::arg("width"))
      .def("extract", &PyModel::extract, py::arg("width"),
           "Copy the active slices into a standalone single-width model.")
      .def("save", &PyModel::save, py::arg("path"));

  m.def("build_model",
        [](const std::string& preset, uint64_t seed, std::vector<double> widths) {
          ModelSpec spec = preset_spec(preset);
          if (!widths.empty()) spec.width_list = WidthList(std::move(widths));
          return PyModel(build_model<float>(spec, seed));
        },
        py::arg("preset"), py::arg("seed") = 0,
        py::arg("widths") = std::vector<double>{},
        "Presets: cnn-table1, transformer-inhouse, transformer-gsc, cnn-desk.");

  m.def("model_from_config",
        [](const std::string& path, int64_t seed) {
          Config cfg = parse_config_file(path);
          uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : cfg.train.seed;
          return PyModel(build_model<float>(cfg.model, s));
        },
        py::arg("path"), py::arg("seed") = -1);

  m.def("load_checkpoint",
        [](const std::string& path) {
          return PyModel(model_from_checkpoint(Checkpoint::load(path)));
        },
        py::arg("path"));

  m.def("active_count", &active_count, py::arg("max_extent"), py::arg("width"),
        "Active extent at a width: round-half-up, clamped to >= 1.");

  m.def("lfbe",
        [](const FloatArray& samples, int sample_rate, int64_t mel_bins,
           double window_ms, double hop_ms) {
          if (samples.ndim() != 1) throw ShapeError("samples must be a 1-d array");
          data::AudioClip clip;
          clip.sample_rate = sample_rate;
          clip.samples.assign(samples.data(), samples.data() + samples.size());
          data::FeatureParams params;
          params.mel_bins = mel_bins;
          params.window_ms = window_ms;
          params.hop_ms = hop_ms;
          data::FeatureMatrix f = data::lfbe(clip, params);
          py::array_t<float> out({f.frames, f.mel_bins});
          std::copy(f.values.begin(), f.values.end(), out.mutable_data());
          return out;
        },
        py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("mel_bins") = 64,
        py::arg("window_ms") = 25.0, py::arg("hop_ms") = 10.0,
        "Log mel filterbank energies: Hann window, power spectrum, HTK-mel "
        "triangles, log floor.");

  m.def("synth_clip",
        [](uint64_t seed, int64_t cls, int64_t num_classes) {
          auto clips = data::synth_clips(seed, num_classes, 1);
          py::array_t<float> out(
              static_cast<py::ssize_t>(clips[static_cast<size_t>(cls)].clip.samples.size()));
          const auto& s = clips[static_cast<size_t>(cls)].clip.samples;
          std::copy(s.begin(), s.end(), out.mutable_data());
          return out;
        },
        py::arg("seed"), py::arg("cls") = 0, py::arg("num_classes") = 4,
        "One synthetic keyword clip (1 s at 16 kHz).");

  m.def("synth_features",
        [](uint64_t seed, int64_t num_classes, int64_t per_class, int64_t mel_bins,
           int64_t frames) {
          data::FeatureParams params;
          params.mel_bins = mel_bins;
          auto ds = data::synth_dataset(seed, num_classes, per_class, params, frames);
          py::array_t<float> feats({static_cast<py::ssize_t>(ds.size()),
                                    static_cast<py::ssize_t>(frames),
                                    static_cast<py::ssize_t>(mel_bins)});
          std::vector<int64_t> labels;
          float* dst = feats.mutable_data();
          for (const auto& ex : ds.examples) {
            std::copy(ex.features.values.begin(), ex.features.values.end(), dst);
            dst += frames * mel_bins;
            labels.push_back(ex.label);
          }
          return py::make_tuple(feats, labels);
        },
        py::arg("seed"), py::arg("num_classes") = 4, py::arg("per_class") = 25,
        py::arg("mel_bins") = 20, py::arg("frames") = 76,
        "Featurized synthetic keyword dataset: (features, labels).");

  m.def("false_accepts_at_miss_rate",
        [](const std::vector<double>& scores, const std::vector<int64_t>& labels,
           double target_miss) {
          auto r = metrics::false_accepts_at_miss_rate(scores, labels, target_miss);
          py::dict out;
          out["false_accepts"] = r.false_accepts;
          out["threshold"] = r.threshold;
          out["miss_rate"] = r.miss_rate;
          return out;
        },
        py::arg("scores"), py::arg("labels"), py::arg("target_miss"));

  m.def("profile_time_per_step",
        [](const std::string& preset, const std::vector<int>& width_counts,
           int64_t batch_size, int warmup, int timed) {
          ModelSpec spec = preset_spec(preset);
          metrics::ProfileOptions opts;
          opts.batch_size = batch_size;
          opts.warmup = warmup;
          opts.timed = timed;
          auto points = metrics::profile_time_per_step<float>(spec, width_counts, opts);
          py::list out;
          for (const auto& p : points)
            out.append(py::make_tuple(p.width_count, p.seconds_per_step,
                                      p.ratio_vs_single));
          return out;
        },
        py::arg("preset"), py::arg("width_counts"), py::arg("batch_size") = 8,
        py::arg("warmup") = 2, py::arg("timed") = 5);
}
