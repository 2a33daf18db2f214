#pragma once

// INI-style experiment configuration: [model], [train], [data], [features],
// [profile] sections of key = value pairs, lists comma-separated. Unknown
// keys are rejected with the offending line number.

#include "slnk/data.hpp"
#include "slnk/model.hpp"
#include "slnk/trainer.hpp"

namespace slnk {

struct DataConfig {
  enum class Kind { None, Synthetic, SpeechCommands };
  Kind kind = Kind::None;
  std::string root;
  std::vector<std::string> classes;
  double val_fraction = 0.2;
  int64_t synth_classes = 4;
  int64_t synth_per_class = 250;
  uint64_t synth_seed = 0;
  std::string feature_cache;
};

struct ProfileConfig {
  std::vector<int> width_counts = {1, 2, 3, 4, 5, 10, 20, 40};
  int64_t batch_size = 16;
  int warmup = 5;
  int timed = 20;
};

struct Config {
  ModelSpec model;
  TrainConfig train;
  DataConfig data;
  data::FeatureParams features;
  ProfileConfig profile;
  std::string checkpoint_path = "model.slnk";
  std::string log_path;
  std::string text;  // verbatim source, embedded in checkpoints
};

Config parse_config_text(const std::string& text, const std::string& source_name);
Config parse_config_file(const std::string& path);

// Dataset assembly per [data]/[features]; used by train and eval commands.
data::Dataset load_dataset(const Config& cfg, data::Split split);

}  // namespace slnk
