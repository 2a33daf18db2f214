#include "slnk/data.hpp"

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace slnk::data {

namespace fs = std::filesystem;

int worker_count() {
  const char* env = std::getenv("SLNK_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

namespace {

// Index-addressed parallel map; output order is independent of thread count.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  const int workers = std::min<int64_t>(worker_count(), n);
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int64_t> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        int64_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

// ---------------------------------------------------------------------------
// WAV (RIFF PCM16 mono)
// ---------------------------------------------------------------------------

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}
void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(concat("cannot open wav file: ", path));
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError(concat(path, ": not a RIFF/WAVE file"));

  AudioClip clip;
  size_t pos = 12;
  bool have_fmt = false, have_data = false;
  uint16_t channels = 0, bits = 0, format = 0;
  while (pos + 8 <= buf.size()) {
    const char* tag = reinterpret_cast<const char*>(buf.data() + pos);
    uint32_t sz = read_u32(buf.data() + pos + 4);
    size_t body = pos + 8;
    if (body + sz > buf.size()) break;
    if (std::memcmp(tag, "fmt ", 4) == 0 && sz >= 16) {
      format = read_u16(buf.data() + body);
      channels = read_u16(buf.data() + body + 2);
      clip.sample_rate = static_cast<int>(read_u32(buf.data() + body + 4));
      bits = read_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw IoError(concat(path, ": data chunk before fmt chunk"));
      if (format != 1) throw IoError(concat(path, ": not PCM (format tag ", format, ")"));
      if (channels != 1)
        throw IoError(concat(path, ": expected mono, got ", channels, " channels"));
      if (bits != 16) throw IoError(concat(path, ": expected 16-bit PCM, got ", bits));
      size_t n = sz / 2;
      clip.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t s = static_cast<int16_t>(read_u16(buf.data() + body + 2 * i));
        clip.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      have_data = true;
    }
    pos = body + sz + (sz & 1);
  }
  if (!have_data) throw IoError(concat(path, ": missing data chunk"));
  if (clip.samples.empty()) throw IoError(concat(path, ": empty audio"));
  if (clip.sample_rate <= 0) throw IoError(concat(path, ": bad sample rate"));
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  std::vector<uint8_t> out;
  const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    float c = std::clamp(s, -1.0f, 1.0f);
    int16_t q = static_cast<int16_t>(std::lrintf(c * 32767.0f));
    put_u16(out, static_cast<uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(concat("cannot write wav file: ", path));
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(concat("short write to ", path));
}

// ---------------------------------------------------------------------------
// LFBE
// ---------------------------------------------------------------------------

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// In-place iterative radix-2 FFT over interleaved complex doubles.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

int64_t next_pow2(int64_t n) {
  int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

// Triangles are laid out on the mel axis, so within the covered band the
// rising and falling flanks of neighbouring filters sum to exactly one.
std::vector<double> mel_filterbank(int64_t mel_bins, int64_t fft_size,
                                   int sample_rate, double fmin, double fmax) {
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  const int64_t bins = fft_size / 2 + 1;
  std::vector<double> weights(static_cast<size_t>(mel_bins * bins), 0.0);
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(static_cast<size_t>(mel_bins + 2));
  for (int64_t i = 0; i < mel_bins + 2; ++i)
    centers[i] = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                              static_cast<double>(mel_bins + 1);
  for (int64_t k = 0; k < bins; ++k) {
    double freq = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
    double mel = hz_to_mel(freq);
    for (int64_t m = 0; m < mel_bins; ++m) {
      double lo = centers[m], c = centers[m + 1], hi = centers[m + 2];
      if (mel <= lo || mel >= hi) continue;
      double w = (mel < c) ? (mel - lo) / (c - lo) : (hi - mel) / (hi - c);
      weights[m * bins + k] = w;
    }
  }
  return weights;
}

int64_t lfbe_frame_count(int64_t samples, int sample_rate, const FeatureParams& params) {
  const int64_t win = static_cast<int64_t>(params.window_ms * sample_rate / 1000.0);
  const int64_t hop = static_cast<int64_t>(params.hop_ms * sample_rate / 1000.0);
  if (samples < win) return 0;
  return (samples - win) / hop + 1;
}

FeatureMatrix lfbe(const AudioClip& clip, const FeatureParams& params) {
  const int64_t win = static_cast<int64_t>(params.window_ms * clip.sample_rate / 1000.0);
  const int64_t hop = static_cast<int64_t>(params.hop_ms * clip.sample_rate / 1000.0);
  const int64_t n = static_cast<int64_t>(clip.samples.size());
  if (n < win)
    throw IoError(concat("clip too short for one analysis window: ", n, " < ", win,
                         " samples"));
  const int64_t frames = (n - win) / hop + 1;
  const int64_t fft_size = next_pow2(win);
  const int64_t bins = fft_size / 2 + 1;

  std::vector<double> window(static_cast<size_t>(win));
  for (int64_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                     static_cast<double>(win - 1));
  std::vector<double> bank =
      mel_filterbank(params.mel_bins, fft_size, clip.sample_rate, params.fmin_hz,
                     params.fmax_hz);

  FeatureMatrix out;
  out.frames = frames;
  out.mel_bins = params.mel_bins;
  out.values.resize(static_cast<size_t>(frames * params.mel_bins));

  std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size));
  std::vector<double> power(static_cast<size_t>(bins));
  for (int64_t f = 0; f < frames; ++f) {
    const float* src = clip.samples.data() + f * hop;
    for (int64_t i = 0; i < win; ++i)
      buf[i] = std::complex<double>(static_cast<double>(src[i]) * window[i], 0.0);
    for (int64_t i = win; i < fft_size; ++i) buf[i] = {0.0, 0.0};
    fft_radix2(buf);
    for (int64_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]);
    for (int64_t m = 0; m < params.mel_bins; ++m) {
      double acc = 0.0;
      const double* w = bank.data() + m * bins;
      for (int64_t k = 0; k < bins; ++k) acc += w[k] * power[k];
      out.values[f * params.mel_bins + m] =
          std::log(static_cast<float>(acc) + params.log_floor);
    }
  }
  return out;
}

FeatureMatrix fit_frames(const FeatureMatrix& f, int64_t target_frames, float pad_value) {
  if (target_frames < 1) throw ContractError("target_frames must be >= 1");
  if (f.frames == target_frames) return f;
  FeatureMatrix out;
  out.frames = target_frames;
  out.mel_bins = f.mel_bins;
  out.values.assign(static_cast<size_t>(target_frames * f.mel_bins), pad_value);
  if (f.frames > target_frames) {
    const int64_t lead = (f.frames - target_frames) / 2;
    std::memcpy(out.values.data(), f.values.data() + lead * f.mel_bins,
                sizeof(float) * static_cast<size_t>(target_frames * f.mel_bins));
  } else {
    const int64_t lead = (target_frames - f.frames) / 2;
    std::memcpy(out.values.data() + lead * f.mel_bins, f.values.data(),
                sizeof(float) * static_cast<size_t>(f.frames * f.mel_bins));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Speech Commands layout
// ---------------------------------------------------------------------------

namespace {

std::set<std::string> read_split_list(const fs::path& p) {
  std::set<std::string> out;
  std::ifstream in(p);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace

Dataset load_speech_commands(const std::string& root,
                             const std::vector<std::string>& classes,
                             const FeatureParams& params, int64_t target_frames,
                             Split split) {
  fs::path rootp(root);
  if (!fs::is_directory(rootp))
    throw IoError(concat("dataset root is not a directory: ", root));

  Dataset ds;
  ds.class_names = classes;
  std::sort(ds.class_names.begin(), ds.class_names.end());
  std::map<std::string, int64_t> label_of;
  for (size_t i = 0; i < ds.class_names.size(); ++i)
    label_of[ds.class_names[i]] = static_cast<int64_t>(i);

  auto test_list = read_split_list(rootp / "testing_list.txt");
  auto val_list = read_split_list(rootp / "validation_list.txt");

  std::vector<std::pair<std::string, int64_t>> files;  // rel path, label
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(rootp))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    std::string label = d.filename().string();
    auto it = label_of.find(label);
    if (it == label_of.end()) {
      std::cerr << "warning: skipping unknown label directory '" << label << "'\n";
      continue;
    }
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && e.path().extension() == ".wav")
        names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) files.emplace_back(label + "/" + n, it->second);
  }

  if (files.empty())
    std::cerr << "notice: no wav files found under " << root << "\n";

  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [rel, label] : files) {
    bool in_test = test_list.count(rel) > 0;
    bool in_val = val_list.count(rel) > 0;
    bool keep = true;
    switch (split) {
      case Split::All: keep = true; break;
      case Split::Test: keep = in_test; break;
      case Split::Validation: keep = in_val; break;
      case Split::Train: keep = !in_test && !in_val; break;
    }
    if (keep) kept.emplace_back(rel, label);
  }

  const float floor = std::log(params.log_floor);
  ds.examples.resize(kept.size());
  std::exception_ptr failure;
  std::mutex failure_mu;
  parallel_for(static_cast<int64_t>(kept.size()), [&](int64_t i) {
    try {
      const auto& [rel, label] = kept[static_cast<size_t>(i)];
      AudioClip clip = read_wav((rootp / rel).string());
      LabeledExample ex;
      ex.features = fit_frames(lfbe(clip, params), target_frames, floor);
      ex.label = label;
      ex.source_id = rel;
      ds.examples[static_cast<size_t>(i)] = std::move(ex);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic keyword clips
// ---------------------------------------------------------------------------

std::vector<float> synth_template(int64_t cls, int64_t num_samples, int sample_rate) {
  // distinct base frequency plus a linear sweep per class
  const double f0 = 320.0 + 410.0 * static_cast<double>(cls);
  const double sweep = (cls % 2 == 0 ? 1.0 : -1.0) * (160.0 + 55.0 * static_cast<double>(cls));
  std::vector<float> out(static_cast<size_t>(num_samples));
  const double dur = static_cast<double>(num_samples) / sample_rate;
  for (int64_t i = 0; i < num_samples; ++i) {
    double t = static_cast<double>(i) / sample_rate;
    double phase = 2.0 * M_PI * (f0 * t + 0.5 * sweep * t * t);
    // Raised-cosine envelope keeps the keyword centered in the clip.
    double env = 0.5 - 0.5 * std::cos(2.0 * M_PI * t / dur);
    out[i] = static_cast<float>(0.45 * env * std::sin(phase));
  }
  return out;
}

std::vector<SynthClip> synth_clips(uint64_t seed, int64_t num_classes,
                                   int64_t examples_per_class,
                                   std::optional<double> snr_db_override) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs >= 2 classes");
  if (examples_per_class < 1) throw ConfigError("examples_per_class must be >= 1");
  const int sr = 16000;
  const int64_t n = sr;  // 1 s
  std::vector<SynthClip> out;
  out.reserve(static_cast<size_t>(num_classes * examples_per_class));
  for (int64_t c = 0; c < num_classes; ++c) {
    std::vector<float> tmpl = synth_template(c, n, sr);
    double sig_pow = 0.0;
    for (float v : tmpl) sig_pow += static_cast<double>(v) * v;
    sig_pow /= static_cast<double>(n);
    for (int64_t e = 0; e < examples_per_class; ++e) {
      Rng rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(c * 1000003 + e + 1)));
      double snr_db = snr_db_override ? *snr_db_override : rng.uniform(5.0, 20.0);
      SynthClip sc;
      sc.label = c;
      sc.id = concat("class", c, "_", e);
      sc.clip.sample_rate = sr;
      sc.clip.samples.resize(static_cast<size_t>(n));
      if (std::isinf(snr_db)) {
        sc.clip.samples = tmpl;
      } else {
        double noise_pow = sig_pow / std::pow(10.0, snr_db / 10.0);
        double sigma = std::sqrt(noise_pow);
        for (int64_t i = 0; i < n; ++i)
          sc.clip.samples[i] = std::clamp(
              tmpl[i] + static_cast<float>(sigma * rng.normal()), -1.0f, 1.0f);
      }
      out.push_back(std::move(sc));
    }
  }
  return out;
}

Dataset synth_dataset(uint64_t seed, int64_t num_classes, int64_t examples_per_class,
                      const FeatureParams& params, int64_t target_frames) {
  Dataset ds;
  for (int64_t c = 0; c < num_classes; ++c) ds.class_names.push_back(concat("kw", c));
  const float floor = std::log(params.log_floor);
  auto clips = synth_clips(seed, num_classes, examples_per_class);
  ds.examples.resize(clips.size());
  parallel_for(static_cast<int64_t>(clips.size()), [&](int64_t i) {
    const auto& sc = clips[static_cast<size_t>(i)];
    LabeledExample ex;
    ex.features = fit_frames(lfbe(sc.clip, params), target_frames, floor);
    ex.label = sc.label;
    ex.source_id = sc.id;
    ds.examples[static_cast<size_t>(i)] = std::move(ex);
  });
  return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& full, double held_out_fraction) {
  if (held_out_fraction < 0.0 || held_out_fraction >= 1.0)
    throw ConfigError("held-out fraction must be in [0, 1)");
  Dataset train, held;
  train.class_names = held.class_names = full.class_names;
  if (held_out_fraction == 0.0) {
    train.examples = full.examples;
    return {train, held};
  }
  const int64_t k = std::max<int64_t>(2, static_cast<int64_t>(std::llround(1.0 / held_out_fraction)));
  std::vector<int64_t> seen(full.class_names.size(), 0);
  for (const auto& ex : full.examples) {
    int64_t idx = seen[static_cast<size_t>(ex.label)]++;
    if (idx % k == k - 1)
      held.examples.push_back(ex);
    else
      train.examples.push_back(ex);
  }
  return {train, held};
}

}  // namespace slnk::data
