// slnk: train a slimmable keyword-spotting super-network once, then evaluate,
// profile, and export its sub-networks at any configured width.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "slnk/model_io.hpp"

namespace fs = std::filesystem;
using namespace slnk;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUser = 2;

data::Dataset load_split(const Config& cfg, data::Split split) {
  if (cfg.data.kind == DataConfig::Kind::SpeechCommands)
    return data::load_speech_commands(cfg.data.root, cfg.data.classes, cfg.features,
                                      cfg.model.frames, split);
  return load_dataset(cfg, split);
}

// Train/eval pair per [data]; synthetic sets use the stratified holdout.
// With [data] feature_cache set, featurized splits are stored as containers
// next to the cache stem and reused on later runs.
std::pair<data::Dataset, data::Dataset> load_train_eval(const Config& cfg) {
  auto cached = [&](const std::string& part,
                    const std::function<data::Dataset()>& build) {
    if (cfg.data.feature_cache.empty()) return build();
    std::string path = cfg.data.feature_cache + "." + part + ".slnk";
    if (fs::exists(path)) {
      std::cerr << "feature cache: loading " << path << "\n";
      return load_feature_cache(path);
    }
    data::Dataset ds = build();
    save_feature_cache(ds, path);
    std::cerr << "feature cache: wrote " << path << "\n";
    return ds;
  };

  if (cfg.data.kind == DataConfig::Kind::SpeechCommands) {
    auto train = cached("train", [&] { return load_split(cfg, data::Split::Train); });
    auto val = cached("val", [&] { return load_split(cfg, data::Split::Validation); });
    if (val.size() == 0) return data::split_dataset(train, cfg.data.val_fraction);
    return {train, val};
  }
  auto full = cached("all", [&] { return load_dataset(cfg, data::Split::All); });
  return data::split_dataset(full, cfg.data.val_fraction);
}

data::Dataset load_eval_set(const Config& cfg) {
  if (cfg.data.kind == DataConfig::Kind::SpeechCommands) {
    auto test = load_split(cfg, data::Split::Test);
    if (test.size() > 0) return test;
    return load_split(cfg, data::Split::All);
  }
  return load_train_eval(cfg).second;  // synthetic: the stratified holdout
}

void validate_data_paths(const Config& cfg) {
  if (cfg.data.kind == DataConfig::Kind::SpeechCommands &&
      !fs::is_directory(cfg.data.root))
    throw IoError(concat("dataset root does not exist: ", cfg.data.root));
}

std::vector<double> parse_width_arg(const std::string& arg, const WidthList& widths) {
  if (arg == "all") return widths.widths;
  try {
    size_t used = 0;
    double w = std::stod(arg, &used);
    if (used != arg.size()) throw std::invalid_argument("trailing");
    (void)widths.index_of(w);  // membership check, lists valid widths on failure
    return {w};
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(concat("bad width '", arg, "' (a number or 'all')"));
  }
}

metrics::RunReport report_skeleton(const Config& cfg) {
  return metrics::make_report_skeleton(cfg.model.name, cfg.model.summary(),
                                       cfg.train.seed);
}

void write_report(const metrics::RunReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(concat("cannot write report: ", path));
  out << report.to_json() << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
int cmd_train(const std::string& config_path, const std::string& resume_path,
              int64_t seed_override) {
  Config cfg = parse_config_file(config_path);
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  validate_data_paths(cfg);

  auto [train_ds, eval_ds] = load_train_eval(cfg);
  if (train_ds.size() == 0) throw IoError("training dataset is empty");
  std::cerr << "dataset: " << train_ds.size() << " train / " << eval_ds.size()
            << " eval examples, " << train_ds.class_names.size() << " classes\n";

  SlimModel<float> model = build_model<float>(cfg.model, cfg.train.seed);
  Graph<float> graph;
  Optimizer<float> opt(model, cfg.train);
  int start_epoch = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = Checkpoint::load(resume_path);
    load_model_tensors(model, ck);
    load_optimizer_state(opt, ck);
    start_epoch = checkpoint_epochs_done(ck);
    std::cerr << "resumed from " << resume_path << " at epoch " << start_epoch
              << ", step " << opt.step_count() << "\n";
  }

  std::string log_path = cfg.log_path.empty() ? cfg.checkpoint_path + ".log.jsonl"
                                              : cfg.log_path;
  std::ofstream log(log_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError(concat("cannot write training log: ", log_path));

  CheckpointSink<float, SlimModel<float>> sink =
      [&](SlimModel<float>& m, Optimizer<float>& o, int64_t step, int epochs_done,
          const std::string& tag) {
        std::string path = cfg.checkpoint_path + (tag == "best" ? ".best" : "");
        checkpoint_from_model(m, cfg.text, &o, step, epochs_done).save(path);
      };

  TrainResult result;
  try {
    result = train_loop<float>(model, graph, opt, train_ds, eval_ds, cfg.train,
                               static_cast<std::ostream*>(&log), sink, start_epoch);
  } catch (const NumericError& e) {
    std::string failed = cfg.checkpoint_path + ".failed";
    checkpoint_from_model(model, cfg.text, &opt, opt.step_count(), start_epoch)
        .save(failed);
    std::cerr << "error: " << e.what() << "\npartial state kept at " << failed << "\n";
    return kExitInternal;
  }

  metrics::RunReport report = report_skeleton(cfg);
  for (size_t wi = 0; wi < cfg.model.width_list.size(); ++wi) {
    metrics::ReportRow row;
    row.width = cfg.model.width_list[wi];
    row.params = count_params(model, row.width);
    row.multiplies = count_multiplies(model, row.width);
    if (wi < result.final_eval.size()) {
      row.accuracy = result.final_eval[wi].accuracy;
      row.loss = result.final_eval[wi].loss;
    }
    report.rows.push_back(row);
  }
  write_report(report, cfg.checkpoint_path + ".report.json");
  std::cout << report.to_table();
  std::cout << "checkpoint: " << cfg.checkpoint_path << "  (best: "
            << cfg.checkpoint_path << ".best)\n"
            << "log: " << log_path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& width_arg, const std::string& report_path,
             double target_miss) {
  Config cfg = parse_config_file(config_path);
  validate_data_paths(cfg);
  SlimModel<float> model = model_from_checkpoint(Checkpoint::load(ckpt_path));
  auto widths = parse_width_arg(width_arg, model.spec.width_list);

  data::Dataset ds = load_eval_set(cfg);
  if (ds.size() == 0) throw IoError("evaluation dataset is empty");
  if (model.spec.num_classes != ds.num_classes())
    throw ConfigError(concat("checkpoint expects ", model.spec.num_classes,
                             " classes, dataset has ", ds.num_classes()));

  Graph<float> graph;
  metrics::RunReport report = report_skeleton(cfg);
  report.model_name = model.spec.name;
  for (double w : widths) {
    auto r = evaluate<float>(model, graph, ds, w);
    metrics::ReportRow row;
    row.width = w;
    row.params = count_params(model, w);
    row.multiplies = count_multiplies(model, w);
    row.accuracy = r.accuracy;
    row.loss = r.loss;
    if (model.spec.num_classes == 2) {
      auto fa = metrics::false_accepts_at_miss_rate(r.scores, r.labels, target_miss);
      std::cout << "width " << w << ": FA@miss<=" << target_miss << " = "
                << fa.false_accepts << " (threshold " << fa.threshold << ")\n";
    }
    report.rows.push_back(row);
  }
  std::cout << report.to_table();
  if (!report_path.empty()) write_report(report, report_path);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------
int cmd_export(const std::string& ckpt_path, double width, const std::string& out_path) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  SlimModel<float> model = model_from_checkpoint(ck);
  (void)model.spec.width_list.index_of(width);  // exits 2 with the valid list

  SlimModel<float> sub = extract_subnetwork(model, width);
  Config embedded = parse_config_text(ck.config_text, "<checkpoint config>");
  checkpoint_from_model(sub, config_text_for_spec(sub.spec, embedded.features))
      .save(out_path);

  std::cout << "exported width " << width << " -> " << out_path << "\n"
            << "params:     " << count_params(sub, 1.0) << "\n"
            << "multiplies: " << count_multiplies(sub, 1.0) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// profile
// ---------------------------------------------------------------------------
int cmd_profile(const std::string& config_path, const std::string& widths_arg,
                const std::string& report_path) {
  Config cfg = parse_config_file(config_path);
  std::vector<int> counts = cfg.profile.width_counts;
  if (!widths_arg.empty()) {
    counts.clear();
    std::stringstream ss(widths_arg);
    std::string part;
    while (std::getline(ss, part, ','))
      counts.push_back(std::stoi(part));
  }
  if (counts.empty()) throw ConfigError("no width counts to profile");

  metrics::ProfileOptions opts;
  opts.batch_size = cfg.profile.batch_size;
  opts.warmup = cfg.profile.warmup;
  opts.timed = cfg.profile.timed;
  opts.seed = cfg.train.seed;
  auto points = metrics::profile_time_per_step<float>(cfg.model, counts, opts,
                                                      &std::cerr);

  std::cout << std::left << std::setw(14) << "Total widths" << std::right
            << std::setw(16) << "sec/step" << std::setw(12) << "ratio" << "\n";
  for (const auto& p : points)
    std::cout << std::left << std::setw(14) << p.width_count << std::right
              << std::setw(16) << std::fixed << std::setprecision(4)
              << p.seconds_per_step << std::setw(12) << std::setprecision(2)
              << p.ratio_vs_single << "\n";
  if (!report_path.empty()) {
    metrics::RunReport report = report_skeleton(cfg);
    for (const auto& p : points) {
      metrics::ReportRow row;
      row.width = p.width_count;  // the row key is the width count here
      row.params = count_params(build_model<float>(cfg.model, 0), 1.0);
      row.multiplies = 0;
      row.time_per_step_ms = p.seconds_per_step * 1000.0;
      report.rows.push_back(row);
    }
    write_report(report, report_path);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth-data
// ---------------------------------------------------------------------------
int cmd_synth_data(const std::string& out_dir, int64_t classes, int64_t per_class,
                   uint64_t seed) {
  fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root))
    throw IoError(concat("cannot create output directory: ", out_dir));

  auto clips = data::synth_clips(seed, classes, per_class);
  for (int64_t c = 0; c < classes; ++c)
    fs::create_directories(root / concat("kw", c));
  for (const auto& sc : clips)
    data::write_wav((root / concat("kw", sc.label) / (sc.id + ".wav")).string(),
                    sc.clip);
  std::cout << "wrote " << clips.size() << " clips under " << out_dir << " ("
            << classes << " classes x " << per_class << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------
int cmd_stats(const std::string& config_path, const std::string& width_arg,
              bool breakdown, bool all_norm_sets) {
  Config cfg = parse_config_file(config_path);
  SlimModel<float> model = build_model<float>(cfg.model, cfg.train.seed);
  auto widths = parse_width_arg(width_arg, model.spec.width_list);

  metrics::RunReport report = report_skeleton(cfg);
  for (double w : widths) {
    metrics::ReportRow row;
    row.width = w;
    row.params = count_params(model, w);
    row.multiplies = count_multiplies(model, w);
    report.rows.push_back(row);
  }
  std::cout << report.to_table();
  if (all_norm_sets)
    std::cout << "super-network stored parameters (all width norm sets): "
              << model.total_stored_params() << "\n";
  if (breakdown) {
    for (double w : widths) {
      std::cout << "\nper-layer breakdown at width " << w << ":\n";
      std::cout << std::left << std::setw(24) << "layer" << std::right
                << std::setw(12) << "params" << std::setw(14) << "multiplies" << "\n";
      for (const auto& r : cost_breakdown(model, w))
        std::cout << std::left << std::setw(24) << r.name << std::right
                  << std::setw(12) << r.params << std::setw(14) << r.multiplies
                  << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slimmable keyword-spotting networks: one super-network, many widths"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_path, report_path, resume_path;
  std::string width_arg = "all", widths_arg;
  int64_t seed_override = -1;
  int64_t classes = 4, per_class = 250;
  uint64_t seed = 0;
  double export_width = 1.0, target_miss = 0.1;
  bool breakdown = false, all_norm_sets = false;

  auto* train = app.add_subcommand("train", "train a slimmable super-network");
  train->add_option("--config", config_path, "experiment config (.ini)")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--seed", seed_override, "override [train] seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint at one or all widths");
  eval->add_option("--config", config_path, "experiment config (.ini)")->required();
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--width", width_arg, "width multiplier or 'all'");
  eval->add_option("--report", report_path, "write a JSON report here");
  eval->add_option("--miss", target_miss, "target miss rate for FA (binary tasks)");

  auto* exp = app.add_subcommand("export", "extract a standalone sub-network");
  exp->add_option("--ckpt", ckpt_path, "super-network checkpoint")->required();
  exp->add_option("--width", export_width, "width to extract")->required();
  exp->add_option("--out", out_path, "output checkpoint path")->required();

  auto* profile = app.add_subcommand("profile", "time train steps vs width count");
  profile->add_option("--config", config_path, "experiment config (.ini)")->required();
  profile->add_option("--widths", widths_arg, "width counts, e.g. 1,2,3,4,5,10,20,40");
  profile->add_option("--report", report_path, "write a JSON report here");

  auto* synth = app.add_subcommand("synth-data", "write a synthetic keyword WAV tree");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--classes", classes, "number of keyword classes");
  synth->add_option("--per-class", per_class, "clips per class");
  synth->add_option("--seed", seed, "generator seed");

  auto* stats = app.add_subcommand("stats", "parameter and multiply accounting");
  stats->add_option("--config", config_path, "experiment config (.ini)")->required();
  stats->add_option("--width", width_arg, "width multiplier or 'all'");
  stats->add_flag("--breakdown", breakdown, "per-layer rows");
  stats->add_flag("--all-norm-sets", all_norm_sets,
                  "also print the stored super-network total");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, resume_path, seed_override);
    if (eval->parsed())
      return cmd_eval(config_path, ckpt_path, width_arg, report_path, target_miss);
    if (exp->parsed()) return cmd_export(ckpt_path, export_width, out_path);
    if (profile->parsed()) return cmd_profile(config_path, widths_arg, report_path);
    if (synth->parsed()) return cmd_synth_data(out_path, classes, per_class, seed);
    if (stats->parsed()) return cmd_stats(config_path, width_arg, breakdown, all_norm_sets);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUser;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUser;
}
