#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "slnk/model_io.hpp"

using namespace slnk;
namespace fs = std::filesystem;

namespace {

std::string tmp_file(const std::string& tag) {
  return (fs::temp_directory_path() /
          ("slnk_fmt_" + tag + "_" + std::to_string(::getpid()) + ".slnk"))
      .string();
}

ModelSpec mini_spec() {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Cnn;
  spec.name = "mini";
  spec.frames = 10;
  spec.mel_bins = 8;
  spec.num_classes = 3;
  spec.width_list = WidthList(std::vector<double>{1.0, 0.5});
  spec.conv_rows = {{3, 3, 6, 1, 1, 2, 2}};
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("cli-formats");

TEST_CASE("container round trip is bitwise faithful over random models") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    ModelSpec spec = mini_spec();
    auto model = build_cnn<float>(spec, seed);
    // move the running stats off init so state entries carry real values
    Graph<float> g;
    Rng rng(seed + 50);
    auto x = Tensor<float>::zeros({4, spec.frames, spec.mel_bins});
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
    (void)model.forward_at(g, x, 1.0, true);
    g.clear();

    data::FeatureParams fp;
    fp.mel_bins = spec.mel_bins;
    std::string path = tmp_file(concat("rt", seed));
    checkpoint_from_model(model, config_text_for_spec(spec, fp)).save(path);

    Checkpoint ck = Checkpoint::load(path);
    auto loaded = build_cnn<float>(spec, seed + 1);  // different init
    load_model_tensors(loaded, ck);

    bool identical = true;
    std::vector<std::vector<float>> vals;
    model.visit_params([&](const std::string&, Tensor<float>& t) { vals.push_back(t.values()); });
    model.visit_state([&](const std::string&, Tensor<float>& t) { vals.push_back(t.values()); });
    size_t i = 0;
    loaded.visit_params([&](const std::string&, Tensor<float>& t) {
      identical = identical && vals[i++] == t.values();
    });
    loaded.visit_state([&](const std::string&, Tensor<float>& t) {
      identical = identical && vals[i++] == t.values();
    });
    CHECK(identical);
    fs::remove(path);
  }
}

TEST_CASE("container rejects bad magic and version mismatches") {
  std::string path = tmp_file("bad");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE" << std::string(16, '\0');
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("magic"), IoError);

  {
    std::ofstream f(path, std::ios::binary);
    const unsigned char bytes[] = {'S', 'L', 'N', 'K', 2, 0, 0, 0, 0, 0, 0, 0,
                                   0, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("version"), IoError);
  fs::remove(path);
}

TEST_CASE("exported spec text parses back to the same architecture") {
  ModelSpec spec = preset_spec("transformer-gsc");
  data::FeatureParams fp;
  fp.mel_bins = spec.mel_bins;
  std::string text = config_text_for_spec(spec, fp);
  Config cfg = parse_config_text(text, "roundtrip");
  CHECK(cfg.model.kind == ModelSpec::Kind::Transformer);
  CHECK(cfg.model.dim == spec.dim);
  CHECK(cfg.model.mlp_dim == spec.mlp_dim);
  CHECK(cfg.model.layers == spec.layers);
  CHECK(cfg.model.frames == spec.frames);
  CHECK(cfg.model.mel_bins == spec.mel_bins);
  CHECK(cfg.model.num_classes == spec.num_classes);
  CHECK(cfg.model.width_list.widths == spec.width_list.widths);

  auto a = build_transformer<float>(spec, 3);
  auto b = build_transformer<float>(cfg.model, 3);
  CHECK(count_params(a, 1.0) == count_params(b, 1.0));
}

TEST_CASE("model_from_checkpoint reproduces the saved network") {
  ModelSpec spec = mini_spec();
  auto model = build_cnn<float>(spec, 4);
  data::FeatureParams fp;
  fp.mel_bins = spec.mel_bins;
  std::string path = tmp_file("rebuild");
  checkpoint_from_model(model, config_text_for_spec(spec, fp)).save(path);

  auto loaded = model_from_checkpoint(Checkpoint::load(path));
  Graph<float> g;
  NoGradGuard<float> ng(g);
  Rng rng(9);
  auto x = Tensor<float>::zeros({2, spec.frames, spec.mel_bins});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
  auto la = model.forward_at(g, x, 0.5, false);
  auto lb = loaded.forward_at(g, x, 0.5, false);
  CHECK(la.values() == lb.values());
  fs::remove(path);
}

TEST_CASE("exported transformer sub-networks reload and match") {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Transformer;
  spec.name = "mini-tf";
  spec.frames = 7;
  spec.mel_bins = 6;
  spec.num_classes = 3;
  spec.dim = 8;
  spec.mlp_dim = 12;
  spec.heads = 1;
  spec.layers = 2;
  spec.width_list = WidthList(std::vector<double>{1.0, 0.5, 0.25});
  auto model = build_transformer<float>(spec, 8);
  data::FeatureParams fp;
  fp.mel_bins = spec.mel_bins;

  Rng rng(4);
  auto x = Tensor<float>::zeros({2, spec.frames, spec.mel_bins});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());

  for (double w : spec.width_list.widths) {
    auto sub = extract_subnetwork(model, w);
    // the sub-network spec keeps the full embedding width while dim shrinks
    CHECK(sub.spec.effective_embed_dim() == spec.dim);
    std::string path = tmp_file(concat("tfexp", w * 100));
    checkpoint_from_model(sub, config_text_for_spec(sub.spec, fp)).save(path);
    auto reloaded = model_from_checkpoint(Checkpoint::load(path));
    Graph<float> g;
    NoGradGuard<float> ng(g);
    auto a = model.forward_at(g, x, w, false);
    auto b = reloaded.forward_at(g, x, 1.0, false);
    CHECK(a.values() == b.values());
    fs::remove(path);
  }
}

TEST_CASE("optimizer state round trip resumes the exact trajectory") {
  ModelSpec spec = mini_spec();
  TrainConfig tcfg;
  tcfg.seed = 2;
  Rng rng(31);
  auto batch = Tensor<float>::zeros({4, spec.frames, spec.mel_bins});
  for (int64_t i = 0; i < batch.size(); ++i) batch.data()[i] = static_cast<float>(rng.normal());
  std::vector<int64_t> labels = {0, 1, 2, 1};

  // uninterrupted: three steps
  auto full = build_cnn<float>(spec, 6);
  Graph<float> g;
  Optimizer<float> full_opt(full, tcfg);
  for (int s = 0; s < 3; ++s) (void)train_step<float>(full, g, full_opt, batch, labels, tcfg.lr);

  // interrupted after two steps, saved, restored, one more step
  auto part = build_cnn<float>(spec, 6);
  Optimizer<float> part_opt(part, tcfg);
  for (int s = 0; s < 2; ++s) (void)train_step<float>(part, g, part_opt, batch, labels, tcfg.lr);
  data::FeatureParams fp;
  fp.mel_bins = spec.mel_bins;
  std::string path = tmp_file("resume");
  checkpoint_from_model(part, config_text_for_spec(spec, fp), &part_opt, 2, 0).save(path);

  Checkpoint ck = Checkpoint::load(path);
  auto resumed = build_cnn<float>(spec, 99);
  load_model_tensors(resumed, ck);
  Optimizer<float> resumed_opt(resumed, tcfg);
  load_optimizer_state(resumed_opt, ck);
  CHECK(resumed_opt.step_count() == 2);
  (void)train_step<float>(resumed, g, resumed_opt, batch, labels, tcfg.lr);

  bool identical = true;
  std::vector<std::vector<float>> want;
  full.visit_params([&](const std::string&, Tensor<float>& t) { want.push_back(t.values()); });
  size_t i = 0;
  resumed.visit_params([&](const std::string&, Tensor<float>& t) {
    identical = identical && want[i++] == t.values();
  });
  CHECK(identical);  // bitwise equal to the uninterrupted run
  fs::remove(path);
}

TEST_CASE("re-saving a checkpoint is byte identical") {
  ModelSpec spec = mini_spec();
  auto model = build_cnn<float>(spec, 12);
  data::FeatureParams fp;
  fp.mel_bins = spec.mel_bins;
  std::string p1 = tmp_file("idem1"), p2 = tmp_file("idem2");
  checkpoint_from_model(model, config_text_for_spec(spec, fp)).save(p1);
  Checkpoint ck = Checkpoint::load(p1);
  ck.save(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("feature cache round trip") {
  data::FeatureParams fp;
  fp.mel_bins = 10;
  auto ds = data::synth_dataset(1, 3, 2, fp, 20);
  std::string path = tmp_file("cache");
  save_feature_cache(ds, path);
  auto back = load_feature_cache(path);
  REQUIRE(back.size() == ds.size());
  CHECK(back.class_names == ds.class_names);
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.examples[i].label == ds.examples[i].label);
    CHECK(back.examples[i].features.values == ds.examples[i].features.values);
  }
  fs::remove(path);
}

TEST_CASE("config parsing: sections, lists, and typo safety") {
  const std::string text = R"INI(
# quickstart
[model]
preset = cnn-desk
widths = 1.0,0.5

[features]
mel_bins = 20

[train]
epochs = 3
batch_size = 8
optimizer = sgd-momentum
lr = 0.01
seed = 7

[data]
kind = synthetic
synth_classes = 4
synth_per_class = 10
)INI";
  Config cfg = parse_config_text(text, "test.ini");
  CHECK(cfg.model.name == "cnn-desk");
  CHECK(cfg.model.width_list.widths == std::vector<double>{1.0, 0.5});
  CHECK(cfg.model.mel_bins == 20);
  CHECK(cfg.model.num_classes == 4);  // derived from the dataset
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.optimizer == OptimizerKind::SgdMomentum);
  CHECK(cfg.train.lr == 0.01);
  CHECK(cfg.data.kind == DataConfig::Kind::Synthetic);

  CHECK_THROWS_WITH_AS(parse_config_text("[model]\nepochz = 3\n", "t.ini"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[nope]\nx = 1\n", "t.ini"),
                       doctest::Contains("unknown section"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[train]\nepochs = abc\n", "t.ini"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("x = 1\n", "t.ini"), ConfigError);

  // class-count mismatch between [model] and [data] is rejected
  CHECK_THROWS_AS(parse_config_text("[model]\npreset = cnn-desk\nnum_classes = 3\n"
                                    "[data]\nkind = synthetic\nsynth_classes = 4\n",
                                    "t.ini"),
                  ConfigError);
}

TEST_CASE("explicit conv rows and transformer keys parse") {
  const std::string text = R"INI(
[model]
kind = cnn
frames = 20
widths = 1.0
conv = 3,3,8,1,1,2,2
conv = 2,2,12,1,1,1,1

[features]
mel_bins = 16
)INI";
  Config cfg = parse_config_text(text, "conv.ini");
  REQUIRE(cfg.model.conv_rows.size() == 2);
  CHECK(cfg.model.conv_rows[1].channels == 12);
  CHECK(cfg.model.conv_rows[0].ph == 2);

  CHECK_THROWS_WITH_AS(
      parse_config_text("[model]\nkind = cnn\nconv = 1,2,3\n", "c.ini"),
      doctest::Contains("7 values"), ConfigError);
}

TEST_SUITE_END();
