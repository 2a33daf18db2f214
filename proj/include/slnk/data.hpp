#pragma once

// Audio ingestion, LFBE feature extraction, fixed-frame windowing, Speech
// Commands directory reading, and the synthetic keyword generator used by
// the desk-scale runs.

#include <filesystem>
#include <optional>

#include "slnk/common.hpp"

namespace slnk::data {

struct AudioClip {
  std::vector<float> samples;  // mono, [-1, 1]
  int sample_rate = 16000;
};

struct FeatureMatrix {
  int64_t frames = 0;
  int64_t mel_bins = 0;
  std::vector<float> values;  // row-major [frames, mel_bins]

  float at(int64_t f, int64_t m) const { return values[f * mel_bins + m]; }
};

struct LabeledExample {
  FeatureMatrix features;
  int64_t label = 0;
  std::string source_id;
};

struct Dataset {
  std::vector<LabeledExample> examples;
  std::vector<std::string> class_names;

  int64_t num_classes() const { return static_cast<int64_t>(class_names.size()); }
  size_t size() const { return examples.size(); }
};

struct FeatureParams {
  int64_t mel_bins = 64;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double fmin_hz = 20.0;            // filterbank lower edge
  double fmax_hz = 0.0;             // 0 -> sample_rate / 2
  float log_floor = 1e-6f;          // log(energy + floor)
};

// --- WAV I/O (RIFF PCM16 mono) ---------------------------------------------
AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip);

// --- Features ----------------------------------------------------------------
// Per frame: Hann window, zero-pad to the next power of two, magnitude-squared
// spectrum, HTK-mel triangular filterbank, log(x + floor).
// frames = floor((len - window)/hop) + 1.
FeatureMatrix lfbe(const AudioClip& clip, const FeatureParams& params);

int64_t lfbe_frame_count(int64_t samples, int sample_rate, const FeatureParams& params);

// Center-crop when longer, pad symmetrically with the log floor when shorter.
FeatureMatrix fit_frames(const FeatureMatrix& f, int64_t target_frames,
                         float pad_value);

// Triangular mel filterbank weights, [mel_bins, fft_bins] row-major. Exposed
// for the filterbank property tests.
std::vector<double> mel_filterbank(int64_t mel_bins, int64_t fft_size,
                                   int sample_rate, double fmin, double fmax);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// --- Speech Commands layout ---------------------------------------------------
enum class Split { All, Train, Validation, Test };

// <root>/<label>/<clip>.wav with optional testing_list.txt/validation_list.txt.
// Examples are ordered by sorted path before any shuffling; labels map to the
// alphabetically sorted class list.
Dataset load_speech_commands(const std::string& root,
                             const std::vector<std::string>& classes,
                             const FeatureParams& params, int64_t target_frames,
                             Split split = Split::All);

// --- Synthetic keywords --------------------------------------------------------
// Each class is a distinct chirp template (base frequency + sweep) mixed with
// seeded Gaussian noise at a random SNR in [5, 20] dB; 1 s at 16 kHz.
// snr_db_override, when set, fixes the SNR; +inf yields the clean template.
struct SynthClip {
  AudioClip clip;
  int64_t label = 0;
  std::string id;
};

std::vector<SynthClip> synth_clips(uint64_t seed, int64_t num_classes,
                                   int64_t examples_per_class,
                                   std::optional<double> snr_db_override = {});

// Clean class template (used by the matched-filter oracle).
std::vector<float> synth_template(int64_t cls, int64_t num_samples, int sample_rate);

Dataset synth_dataset(uint64_t seed, int64_t num_classes, int64_t examples_per_class,
                      const FeatureParams& params, int64_t target_frames);

// Deterministic split helper: moves every k-th example of each class into the
// held-out part (stratified, order-preserving).
std::pair<Dataset, Dataset> split_dataset(const Dataset& full, double held_out_fraction);

// Worker cap for file-parallel feature extraction: SLNK_THREADS, default 1.
// Results are index-addressed, so the output is identical for any count.
int worker_count();

}  // namespace slnk::data
