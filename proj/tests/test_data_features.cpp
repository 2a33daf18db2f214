#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "slnk/data.hpp"

using namespace slnk;
using namespace slnk::data;
namespace fs = std::filesystem;

namespace {

AudioClip sine_clip(double hz, double seconds = 1.0, int sr = 16000,
                    float amplitude = 0.5f) {
  AudioClip c;
  c.sample_rate = sr;
  c.samples.resize(static_cast<size_t>(seconds * sr));
  for (size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] = amplitude * static_cast<float>(
                                   std::sin(2.0 * M_PI * hz * static_cast<double>(i) / sr));
  return c;
}

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("slnk_test_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_SUITE_BEGIN("data-features");

TEST_CASE("wav scaling and round trip") {
  TempDir tmp("wav");

  AudioClip zero;
  zero.sample_rate = 16000;
  zero.samples.assign(1600, 0.0f);
  write_wav((tmp.path / "zero.wav").string(), zero);
  auto z = read_wav((tmp.path / "zero.wav").string());
  CHECK(z.sample_rate == 16000);
  for (float v : z.samples) CHECK(v == 0.0f);

  // a full-scale sample decodes to 32767/32768
  AudioClip full;
  full.sample_rate = 16000;
  full.samples = {1.0f};
  write_wav((tmp.path / "full.wav").string(), full);
  auto f = read_wav((tmp.path / "full.wav").string());
  CHECK(f.samples[0] == doctest::Approx(0.999969482f));

  auto clip = sine_clip(440.0, 0.25);
  write_wav((tmp.path / "sine.wav").string(), clip);
  auto back = read_wav((tmp.path / "sine.wav").string());
  REQUIRE(back.samples.size() == clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0f / 32768.0f);

  std::ofstream bad((tmp.path / "bad.wav").string());
  bad << "not a wav";
  bad.close();
  CHECK_THROWS_AS(read_wav((tmp.path / "bad.wav").string()), IoError);
  CHECK_THROWS_AS(read_wav((tmp.path / "missing.wav").string()), IoError);
}

TEST_CASE("one second at 16 kHz yields exactly 98 frames") {
  FeatureParams params;
  params.mel_bins = 20;
  auto clip = sine_clip(440.0, 1.0);
  auto f = lfbe(clip, params);
  CHECK(f.frames == 98);  // floor((16000-400)/160)+1
  CHECK(f.mel_bins == 20);
  for (float v : f.values) CHECK(std::isfinite(v));
}

TEST_CASE("silent clip hits the log floor exactly") {
  FeatureParams params;
  params.mel_bins = 12;
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(16000, 0.0f);
  auto f = lfbe(clip, params);
  const float floor = std::log(1e-6f);
  for (float v : f.values) CHECK(v == floor);
  // floor bound holds everywhere, silent or not
  auto noisy = sine_clip(300.0, 0.5);
  for (float v : lfbe(noisy, params).values) CHECK(v >= floor);
}

TEST_CASE("clip shorter than one window is an input error") {
  FeatureParams params;
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.samples.assign(399, 0.1f);  // window is 400 samples
  CHECK_THROWS_AS(lfbe(clip, params), IoError);
}

TEST_CASE("pure tone peaks in the filter that covers its frequency") {
  FeatureParams params;
  params.mel_bins = 20;
  auto clip = sine_clip(1000.0, 0.4);
  auto f = lfbe(clip, params);

  // filterbank-center oracle: the expected bin is the filter with the largest
  // weight at the tone's FFT bin
  auto bank = mel_filterbank(params.mel_bins, 512, 16000, params.fmin_hz, 8000.0);
  const int64_t bins = 512 / 2 + 1;
  const int64_t tone_bin = static_cast<int64_t>(std::llround(1000.0 * 512 / 16000.0));
  int64_t expect = 0;
  for (int64_t m = 1; m < params.mel_bins; ++m)
    if (bank[m * bins + tone_bin] > bank[expect * bins + tone_bin]) expect = m;

  for (int64_t fr = 0; fr < f.frames; ++fr) {
    int64_t arg = 0;
    for (int64_t m = 1; m < params.mel_bins; ++m)
      if (f.at(fr, m) > f.at(fr, arg)) arg = m;
    CHECK(arg == expect);
  }
}

TEST_CASE("frame count formula over random lengths") {
  FeatureParams params;
  params.mel_bins = 4;
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    int64_t len = 400 + rng.index(32000);
    CHECK(lfbe_frame_count(len, 16000, params) == (len - 400) / 160 + 1);
  }
  // spot-check against the real extractor on a few lengths
  for (int64_t len : {int64_t(400), int64_t(401), int64_t(560), int64_t(799), int64_t(16000)}) {
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(static_cast<size_t>(len), 0.01f);
    CHECK(lfbe(clip, params).frames == lfbe_frame_count(len, 16000, params));
  }
}

TEST_CASE("mel filterbank is a bounded triangular partition") {
  for (int64_t mel_bins : {int64_t(12), int64_t(20), int64_t(40), int64_t(64)}) {
    auto bank = mel_filterbank(mel_bins, 512, 16000, 20.0, 8000.0);
    const int64_t bins = 512 / 2 + 1;
    for (double w : bank) CHECK(w >= 0.0);
    for (int64_t k = 0; k < bins; ++k) {
      double total = 0.0;
      for (int64_t m = 0; m < mel_bins; ++m) total += bank[m * bins + k];
      CHECK(total <= 1.0 + 1e-6);
    }
  }
}

TEST_CASE("fit_frames crops and pads symmetrically") {
  FeatureMatrix f;
  f.frames = 98;
  f.mel_bins = 3;
  f.values.resize(98 * 3);
  for (int64_t i = 0; i < 98; ++i)
    for (int64_t m = 0; m < 3; ++m) f.values[i * 3 + m] = static_cast<float>(i);

  auto same = fit_frames(f, 98, -1.0f);
  CHECK(same.values == f.values);

  auto cropped = fit_frames(f, 76, -1.0f);
  CHECK(cropped.frames == 76);
  CHECK(cropped.at(0, 0) == 11.0f);   // 11 leading frames dropped
  CHECK(cropped.at(75, 0) == 86.0f);  // 11 trailing frames dropped

  FeatureMatrix small;
  small.frames = 50;
  small.mel_bins = 3;
  small.values.assign(50 * 3, 7.0f);
  auto padded = fit_frames(small, 98, -5.0f);
  CHECK(padded.frames == 98);
  for (int64_t i = 0; i < 24; ++i) CHECK(padded.at(i, 0) == -5.0f);
  for (int64_t i = 24; i < 74; ++i) CHECK(padded.at(i, 0) == 7.0f);
  for (int64_t i = 74; i < 98; ++i) CHECK(padded.at(i, 0) == -5.0f);
}

TEST_CASE("speech commands layout: labels, splits, and notices") {
  TempDir tmp("sc");
  FeatureParams params;
  params.mel_bins = 8;

  // empty root: empty dataset
  auto empty = load_speech_commands(tmp.path.string(), {"yes", "no"}, params, 98);
  CHECK(empty.size() == 0);

  // 2 labels x 2 files, labels mapped alphabetically
  for (const std::string label : {"yes", "no"}) {
    fs::create_directories(tmp.path / label);
    for (int i = 0; i < 2; ++i) {
      auto clip = sine_clip(label == "yes" ? 700.0 : 1400.0, 1.0);
      write_wav((tmp.path / label / (std::to_string(i) + ".wav")).string(), clip);
    }
  }
  fs::create_directories(tmp.path / "_ignored_label");
  auto ds = load_speech_commands(tmp.path.string(), {"yes", "no"}, params, 98);
  CHECK(ds.size() == 4);
  CHECK(ds.class_names == std::vector<std::string>{"no", "yes"});
  CHECK(ds.examples[0].source_id == "no/0.wav");
  CHECK(ds.examples[0].label == 0);
  CHECK(ds.examples[2].label == 1);  // yes/...

  // split lists: no example may appear in two splits
  std::ofstream(tmp.path / "testing_list.txt") << "yes/0.wav\n";
  std::ofstream(tmp.path / "validation_list.txt") << "no/1.wav\n";
  auto train = load_speech_commands(tmp.path.string(), {"yes", "no"}, params, 98,
                                    Split::Train);
  auto val = load_speech_commands(tmp.path.string(), {"yes", "no"}, params, 98,
                                  Split::Validation);
  auto test = load_speech_commands(tmp.path.string(), {"yes", "no"}, params, 98,
                                   Split::Test);
  CHECK(train.size() == 2);
  CHECK(val.size() == 1);
  CHECK(test.size() == 1);
  std::set<std::string> seen;
  for (const auto* part : {&train, &val, &test})
    for (const auto& ex : part->examples) {
      CHECK(seen.count(ex.source_id) == 0);
      seen.insert(ex.source_id);
    }
  CHECK(seen.size() == 4);
}

TEST_CASE("synthetic clips are deterministic and countable") {
  auto a = synth_clips(7, 4, 250);
  CHECK(a.size() == 1000);  // 4 classes x 250 each

  auto b = synth_clips(7, 4, 3);
  auto c = synth_clips(7, 4, 3);
  REQUIRE(b.size() == c.size());
  for (size_t i = 0; i < b.size(); ++i) {
    CHECK(b[i].label == c[i].label);
    CHECK(b[i].clip.samples == c[i].clip.samples);  // bitwise
  }
  auto d = synth_clips(8, 4, 3);
  bool all_same = true;
  for (size_t i = 0; i < b.size(); ++i)
    if (b[i].clip.samples != d[i].clip.samples) all_same = false;
  CHECK_FALSE(all_same);

  CHECK_THROWS_AS(synth_clips(0, 1, 3), ConfigError);
}

TEST_CASE("noise-free synthetic clips classify perfectly by matched filter") {
  const int64_t classes = 4;
  auto clean = synth_clips(3, classes, 5, std::numeric_limits<double>::infinity());
  std::vector<std::vector<float>> templates;
  for (int64_t c = 0; c < classes; ++c)
    templates.push_back(synth_template(c, 16000, 16000));

  for (const auto& sc : clean) {
    int64_t best = -1;
    double best_corr = -1e300;
    for (int64_t c = 0; c < classes; ++c) {
      double corr = 0.0;
      for (size_t i = 0; i < sc.clip.samples.size(); ++i)
        corr += static_cast<double>(sc.clip.samples[i]) * templates[static_cast<size_t>(c)][i];
      if (corr > best_corr) { best_corr = corr; best = c; }
    }
    CHECK(best == sc.label);
  }
}

TEST_CASE("synth_dataset produces model-ready features") {
  FeatureParams params;
  params.mel_bins = 20;
  auto ds = synth_dataset(0, 4, 2, params, 76);
  CHECK(ds.size() == 8);
  CHECK(ds.num_classes() == 4);
  for (const auto& ex : ds.examples) {
    CHECK(ex.features.frames == 76);
    CHECK(ex.features.mel_bins == 20);
  }

  auto [tr, held] = split_dataset(ds, 0.5);
  CHECK(tr.size() == 4);
  CHECK(held.size() == 4);
}

TEST_SUITE_END();
