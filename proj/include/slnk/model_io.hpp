#pragma once

// Glue between float models and the SLNK container. Checkpoints carry all
// weights, every per-width norm set, BatchNorm running statistics, optional
// optimizer state, and an embedded config describing the architecture.

#include <sstream>

#include "slnk/checkpoint.hpp"
#include "slnk/config.hpp"
#include "slnk/metrics.hpp"

namespace slnk {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Minimal INI describing a spec, parseable by parse_config_text. Used as the
// embedded config of exported sub-networks.
inline std::string config_text_for_spec(const ModelSpec& spec,
                                        const data::FeatureParams& features) {
  std::ostringstream os;
  os << "[model]\n";
  os << "kind = " << (spec.kind == ModelSpec::Kind::Cnn ? "cnn" : "transformer") << "\n";
  os << "frames = " << spec.frames << "\n";
  os << "num_classes = " << spec.num_classes << "\n";
  os << "widths = ";
  for (size_t i = 0; i < spec.width_list.size(); ++i)
    os << (i ? "," : "") << format_double(spec.width_list[i]);
  os << "\n";
  if (spec.kind == ModelSpec::Kind::Cnn) {
    for (const auto& r : spec.conv_rows)
      os << "conv = " << r.kh << "," << r.kw << "," << r.channels << "," << r.sh
         << "," << r.sw << "," << r.ph << "," << r.pw << "\n";
  } else {
    os << "dim = " << spec.dim << "\n";
    os << "mlp_dim = " << spec.mlp_dim << "\n";
    os << "heads = " << spec.heads << "\n";
    os << "layers = " << spec.layers << "\n";
    if (spec.effective_embed_dim() != spec.dim)
      os << "embed_dim = " << spec.effective_embed_dim() << "\n";
  }
  os << "\n[features]\n";
  os << "mel_bins = " << spec.mel_bins << "\n";
  os << "window_ms = " << format_double(features.window_ms) << "\n";
  os << "hop_ms = " << format_double(features.hop_ms) << "\n";
  os << "fmin_hz = " << format_double(features.fmin_hz) << "\n";
  os << "fmax_hz = " << format_double(features.fmax_hz) << "\n";
  os << "log_floor = " << format_double(static_cast<double>(features.log_floor)) << "\n";
  return os.str();
}

inline Checkpoint checkpoint_from_model(SlimModel<float>& model,
                                        const std::string& config_text,
                                        Optimizer<float>* opt = nullptr,
                                        int64_t step = 0, int epochs_done = 0) {
  Checkpoint ck;
  ck.config_text = config_text;
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    ck.add(name, t.shape(), t.values());
  });
  model.visit_state([&](const std::string& name, Tensor<float>& t) {
    ck.add(name, t.shape(), t.values());
  });
  ck.add_scalar("__step__", static_cast<float>(step));
  ck.add_scalar("__epochs__", static_cast<float>(epochs_done));
  if (opt) {
    for (auto& slot : opt->slots()) {
      ck.add("opt/" + slot.name + ".m", slot.param.shape(), slot.m);
      if (!slot.v.empty()) ck.add("opt/" + slot.name + ".v", slot.param.shape(), slot.v);
    }
    ck.add_scalar("__opt_step__", static_cast<float>(opt->step_count()));
  }
  return ck;
}

inline void load_tensor_entry(Tensor<float>& t, const CheckpointEntry& e) {
  if (e.dims != t.shape())
    throw IoError(concat("checkpoint entry '", e.name, "' has shape ",
                         shape_str(e.dims), ", model expects ", shape_str(t.shape())));
  t.values() = e.data;
}

inline void load_model_tensors(SlimModel<float>& model, const Checkpoint& ck) {
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    load_tensor_entry(t, ck.require(name));
  });
  model.visit_state([&](const std::string& name, Tensor<float>& t) {
    load_tensor_entry(t, ck.require(name));
  });
}

inline void load_optimizer_state(Optimizer<float>& opt, const Checkpoint& ck) {
  for (auto& slot : opt.slots()) {
    const CheckpointEntry& m = ck.require("opt/" + slot.name + ".m");
    if (static_cast<int64_t>(m.data.size()) != slot.param.size())
      throw IoError(concat("optimizer entry for '", slot.name, "' has wrong size"));
    slot.m = m.data;
    if (!slot.v.empty()) slot.v = ck.require("opt/" + slot.name + ".v").data;
  }
  opt.set_step_count(static_cast<int64_t>(ck.require("__opt_step__").data[0]));
}

// Rebuild the architecture from the embedded config, then fill in tensors.
inline SlimModel<float> model_from_checkpoint(const Checkpoint& ck) {
  if (ck.config_text.empty())
    throw IoError("checkpoint has no embedded config; cannot rebuild the model");
  Config cfg = parse_config_text(ck.config_text, "<checkpoint config>");
  SlimModel<float> model = build_model<float>(cfg.model, /*seed=*/0);
  load_model_tensors(model, ck);
  return model;
}

inline int checkpoint_epochs_done(const Checkpoint& ck) {
  const CheckpointEntry* e = ck.find("__epochs__");
  return e ? static_cast<int>(e->data[0]) : 0;
}

// ---------------------------------------------------------------------------
// Feature cache: the same container, one named matrix per clip.
// ---------------------------------------------------------------------------
inline void save_feature_cache(const data::Dataset& ds, const std::string& path) {
  Checkpoint ck;
  std::string classes;
  for (size_t i = 0; i < ds.class_names.size(); ++i)
    classes += (i ? "," : "") + ds.class_names[i];
  ck.config_text = "classes = " + classes + "\n";
  for (const auto& ex : ds.examples) {
    ck.add("feat/" + ex.source_id, {ex.features.frames, ex.features.mel_bins},
           ex.features.values);
    ck.add_scalar("label/" + ex.source_id, static_cast<float>(ex.label));
  }
  ck.save(path);
}

inline data::Dataset load_feature_cache(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  data::Dataset ds;
  size_t eq = ck.config_text.find('=');
  if (eq == std::string::npos)
    throw IoError(concat(path, ": feature cache is missing its class list"));
  std::string classes = ck.config_text.substr(eq + 1);
  std::string cur;
  for (char c : classes) {
    if (c == ',' || c == '\n') {
      if (!cur.empty()) ds.class_names.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) ds.class_names.push_back(cur);
  for (const auto& e : ck.entries) {
    if (e.name.rfind("feat/", 0) != 0) continue;
    data::LabeledExample ex;
    ex.source_id = e.name.substr(5);
    ex.features.frames = e.dims.at(0);
    ex.features.mel_bins = e.dims.at(1);
    ex.features.values = e.data;
    ex.label = static_cast<int64_t>(ck.require("label/" + ex.source_id).data[0]);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace slnk
