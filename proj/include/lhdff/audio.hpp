#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lhdff/common.hpp"

namespace lhdff {

struct AudioClip {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 0;
  std::string source_id;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// RIFF/WAVE PCM16 reader; stereo (or any channel count) is channel-averaged.
AudioClip load_wav(const std::string& path);

void write_wav_pcm16(const std::string& path, const std::vector<float>& samples, int sample_rate);

struct MelSpectrogram {
  size_t frames = 0;
  size_t n_mels = 0;
  std::vector<float> values;  // frames x n_mels, natural-log magnitude
  double frame_rate = 0.0;
  std::string source_id;

  float& at(size_t t, size_t m) { return values[t * n_mels + m]; }
  float at(size_t t, size_t m) const { return values[t * n_mels + m]; }
};

inline constexpr double kMelEps = 1e-10;  // inside the log
inline const float kLogMelFloor = std::log(static_cast<float>(kMelEps));

constexpr size_t kNfft = 1024;
constexpr size_t kHop = 512;
constexpr size_t kNumMels = 64;

// Frames are fully interior (no signal padding).
inline size_t mel_frame_count(size_t n_samples, size_t n_fft = kNfft, size_t hop = kHop) {
  return n_samples >= n_fft ? 1 + (n_samples - n_fft) / hop : 0;
}

// Triangular filters on the HTK mel scale, 50 Hz .. sr/2, area-normalized.
struct MelFilterbank {
  MelFilterbank(int sample_rate, size_t n_mels = kNumMels, size_t n_fft = kNfft,
                double f_min = 50.0);

  size_t n_mels;
  size_t n_bins;                      // n_fft/2 + 1
  std::vector<double> weights;        // n_mels x n_bins
  std::vector<double> center_freqs;   // Hz, per band
};

MelSpectrogram log_mel(const AudioClip& clip, size_t n_fft = kNfft, size_t hop = kHop,
                       size_t n_mels = kNumMels);

// Per-frame magnitude STFT (frames x (n_fft/2+1)); exposed for spectral tests.
std::vector<double> stft_magnitudes(const std::vector<float>& samples, size_t n_fft, size_t hop,
                                    size_t* out_frames);

// One cache record per clip: {magic "LMEL", version u16, T u32, n_mels u32}
// followed by a row-major little-endian f32 payload.
void write_mel_cache(const std::string& path, const MelSpectrogram& mel);
MelSpectrogram read_mel_cache(const std::string& path);

}  // namespace lhdff
