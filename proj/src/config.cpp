#include "slnk/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace slnk {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

struct Line {
  std::string key, value;
  int number = 0;
};

using Section = std::vector<Line>;

int64_t to_int(const Line& l) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(l.value, &used);
    if (used != l.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw ConfigError(concat("line ", l.number, ": '", l.key, "' expects an integer, got '",
                             l.value, "'"));
  }
}

double to_double(const Line& l) {
  try {
    size_t used = 0;
    double v = std::stod(l.value, &used);
    if (used != l.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (...) {
    throw ConfigError(concat("line ", l.number, ": '", l.key, "' expects a number, got '",
                             l.value, "'"));
  }
}

bool to_bool(const Line& l) {
  if (l.value == "true" || l.value == "1" || l.value == "yes") return true;
  if (l.value == "false" || l.value == "0" || l.value == "no") return false;
  throw ConfigError(concat("line ", l.number, ": '", l.key, "' expects true/false"));
}

}  // namespace

Config parse_config_text(const std::string& text, const std::string& source_name) {
  std::map<std::string, Section> sections;
  const std::set<std::string> known_sections = {"model", "train", "data", "features",
                                                "profile"};
  std::string current;
  int line_no = 0;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(concat(source_name, " line ", line_no, ": malformed section header"));
      current = trim(line.substr(1, line.size() - 2));
      if (!known_sections.count(current))
        throw ConfigError(concat(source_name, " line ", line_no, ": unknown section [",
                                 current, "]"));
      sections[current];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(concat(source_name, " line ", line_no, ": expected key = value"));
    if (current.empty())
      throw ConfigError(concat(source_name, " line ", line_no, ": key outside any section"));
    sections[current].push_back(Line{trim(line.substr(0, eq)),
                                     trim(line.substr(eq + 1)), line_no});
  }

  Config cfg;
  cfg.text = text;
  bool num_classes_explicit = false;
  bool mel_explicit = false;

  // --- [features] first: the model needs mel_bins --------------------------
  if (sections.count("features")) {
    for (const Line& l : sections["features"]) {
      if (l.key == "mel_bins") {
        cfg.features.mel_bins = to_int(l);
        mel_explicit = true;
      }
      else if (l.key == "window_ms") cfg.features.window_ms = to_double(l);
      else if (l.key == "hop_ms") cfg.features.hop_ms = to_double(l);
      else if (l.key == "fmin_hz") cfg.features.fmin_hz = to_double(l);
      else if (l.key == "fmax_hz") cfg.features.fmax_hz = to_double(l);
      else if (l.key == "log_floor") cfg.features.log_floor = static_cast<float>(to_double(l));
      else
        throw ConfigError(concat(source_name, " line ", l.number,
                                 ": unknown key '", l.key, "' in [features]"));
    }
  }

  // --- [model] --------------------------------------------------------------
  bool preset_used = false;
  std::vector<ConvRow> conv_rows;
  if (sections.count("model")) {
    for (const Line& l : sections["model"]) {
      if (l.key == "preset") {
        cfg.model = preset_spec(l.value);
        preset_used = true;
      } else if (l.key == "kind") {
        if (l.value == "cnn") cfg.model.kind = ModelSpec::Kind::Cnn;
        else if (l.value == "transformer") cfg.model.kind = ModelSpec::Kind::Transformer;
        else
          throw ConfigError(concat(source_name, " line ", l.number,
                                   ": kind must be cnn or transformer"));
        if (!preset_used) cfg.model.name = l.value;
      } else if (l.key == "frames") {
        cfg.model.frames = to_int(l);
      } else if (l.key == "num_classes") {
        cfg.model.num_classes = to_int(l);
        num_classes_explicit = true;
      } else if (l.key == "widths") {
        std::vector<double> w;
        for (const auto& s : split_list(l.value)) {
          Line tmp{l.key, s, l.number};
          w.push_back(to_double(tmp));
        }
        cfg.model.width_list = WidthList(std::move(w));
      } else if (l.key == "dim") cfg.model.dim = to_int(l);
      else if (l.key == "mlp_dim") cfg.model.mlp_dim = to_int(l);
      else if (l.key == "heads") cfg.model.heads = to_int(l);
      else if (l.key == "layers") cfg.model.layers = to_int(l);
      else if (l.key == "embed_dim") cfg.model.embed_dim = to_int(l);
      else if (l.key == "conv") {
        auto parts = split_list(l.value);
        if (parts.size() != 7)
          throw ConfigError(concat(source_name, " line ", l.number,
                                   ": conv expects 7 values "
                                   "(kh,kw,channels,sh,sw,ph,pw)"));
        ConvRow r;
        int64_t* fields[7] = {&r.kh, &r.kw, &r.channels, &r.sh, &r.sw, &r.ph, &r.pw};
        for (int i = 0; i < 7; ++i) {
          Line tmp{l.key, parts[static_cast<size_t>(i)], l.number};
          *fields[i] = to_int(tmp);
        }
        conv_rows.push_back(r);
      } else {
        throw ConfigError(concat(source_name, " line ", l.number, ": unknown key '",
                                 l.key, "' in [model]"));
      }
    }
  }
  if (!conv_rows.empty()) cfg.model.conv_rows = std::move(conv_rows);
  // Presets carry their documented mel_bins; an explicit [features] mel_bins
  // overrides it, otherwise the feature pipeline follows the model.
  if (mel_explicit)
    cfg.model.mel_bins = cfg.features.mel_bins;
  else
    cfg.features.mel_bins = cfg.model.mel_bins;

  // --- [train] ----------------------------------------------------------------
  if (sections.count("train")) {
    for (const Line& l : sections["train"]) {
      if (l.key == "epochs") cfg.train.epochs = static_cast<int>(to_int(l));
      else if (l.key == "batch_size") cfg.train.batch_size = to_int(l);
      else if (l.key == "optimizer") {
        if (l.value == "adam") cfg.train.optimizer = OptimizerKind::Adam;
        else if (l.value == "sgd-momentum") cfg.train.optimizer = OptimizerKind::SgdMomentum;
        else
          throw ConfigError(concat(source_name, " line ", l.number,
                                   ": optimizer must be adam or sgd-momentum"));
      } else if (l.key == "lr") cfg.train.lr = to_double(l);
      else if (l.key == "beta1") cfg.train.beta1 = to_double(l);
      else if (l.key == "beta2") cfg.train.beta2 = to_double(l);
      else if (l.key == "adam_eps") cfg.train.adam_eps = to_double(l);
      else if (l.key == "momentum") cfg.train.momentum = to_double(l);
      else if (l.key == "weight_decay") cfg.train.weight_decay = to_double(l);
      else if (l.key == "cosine_lr") cfg.train.cosine_lr = to_bool(l);
      else if (l.key == "seed") cfg.train.seed = static_cast<uint64_t>(to_int(l));
      else if (l.key == "eval_every") cfg.train.eval_every = to_int(l);
      else if (l.key == "checkpoint") cfg.checkpoint_path = l.value;
      else if (l.key == "log") cfg.log_path = l.value;
      else
        throw ConfigError(concat(source_name, " line ", l.number, ": unknown key '",
                                 l.key, "' in [train]"));
    }
  }

  // --- [data] ----------------------------------------------------------------
  if (sections.count("data")) {
    for (const Line& l : sections["data"]) {
      if (l.key == "kind") {
        if (l.value == "synthetic") cfg.data.kind = DataConfig::Kind::Synthetic;
        else if (l.value == "speech_commands") cfg.data.kind = DataConfig::Kind::SpeechCommands;
        else
          throw ConfigError(concat(source_name, " line ", l.number,
                                   ": data kind must be synthetic or speech_commands"));
      } else if (l.key == "root") cfg.data.root = l.value;
      else if (l.key == "classes") cfg.data.classes = split_list(l.value);
      else if (l.key == "val_fraction") cfg.data.val_fraction = to_double(l);
      else if (l.key == "synth_classes") cfg.data.synth_classes = to_int(l);
      else if (l.key == "synth_per_class") cfg.data.synth_per_class = to_int(l);
      else if (l.key == "synth_seed") cfg.data.synth_seed = static_cast<uint64_t>(to_int(l));
      else if (l.key == "feature_cache") cfg.data.feature_cache = l.value;
      else
        throw ConfigError(concat(source_name, " line ", l.number, ": unknown key '",
                                 l.key, "' in [data]"));
    }
  }

  // --- [profile] ----------------------------------------------------------------
  if (sections.count("profile")) {
    for (const Line& l : sections["profile"]) {
      if (l.key == "widths") {
        cfg.profile.width_counts.clear();
        for (const auto& s : split_list(l.value)) {
          Line tmp{l.key, s, l.number};
          cfg.profile.width_counts.push_back(static_cast<int>(to_int(tmp)));
        }
      } else if (l.key == "batch_size") cfg.profile.batch_size = to_int(l);
      else if (l.key == "warmup") cfg.profile.warmup = static_cast<int>(to_int(l));
      else if (l.key == "steps") cfg.profile.timed = static_cast<int>(to_int(l));
      else
        throw ConfigError(concat(source_name, " line ", l.number, ": unknown key '",
                                 l.key, "' in [profile]"));
    }
  }

  // Cross-section consistency.
  int64_t dataset_classes = 0;
  if (cfg.data.kind == DataConfig::Kind::Synthetic)
    dataset_classes = cfg.data.synth_classes;
  else if (cfg.data.kind == DataConfig::Kind::SpeechCommands)
    dataset_classes = static_cast<int64_t>(cfg.data.classes.size());
  if (dataset_classes > 0) {
    if (num_classes_explicit && cfg.model.num_classes != dataset_classes)
      throw ConfigError(concat("num_classes = ", cfg.model.num_classes,
                               " does not match the dataset's ", dataset_classes,
                               " classes"));
    cfg.model.num_classes = dataset_classes;
  }
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(concat("cannot open config file: ", path));
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

data::Dataset load_dataset(const Config& cfg, data::Split split) {
  switch (cfg.data.kind) {
    case DataConfig::Kind::Synthetic:
      return data::synth_dataset(cfg.data.synth_seed, cfg.data.synth_classes,
                                 cfg.data.synth_per_class, cfg.features,
                                 cfg.model.frames);
    case DataConfig::Kind::SpeechCommands:
      if (cfg.data.classes.empty())
        throw ConfigError("speech_commands data needs a 'classes' list");
      return data::load_speech_commands(cfg.data.root, cfg.data.classes,
                                        cfg.features, cfg.model.frames, split);
    case DataConfig::Kind::None:
      throw ConfigError("no [data] section configured");
  }
  throw ConfigError("unreachable data kind");
}

}  // namespace slnk
