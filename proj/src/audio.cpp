#include "lhdff/audio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace lhdff {

namespace {

uint16_t read_u16le(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t read_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  auto len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  f.read(reinterpret_cast<char*>(bytes.data()), len);
  require<IoError>(f.good(), "short read on '" + path + "'");
  return bytes;
}

}  // namespace

AudioClip load_wav(const std::string& path) {
  auto bytes = read_file(path);
  require<IoError>(bytes.size() >= 44, "truncated WAV file '" + path + "'");
  require<DataError>(std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
                         std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
                     "'" + path + "' is not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;
  bool have_fmt = false;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    uint32_t chunk_len = read_u32le(hdr + 4);
    size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      require<IoError>(body + 16 <= bytes.size(), "truncated fmt chunk in '" + path + "'");
      format = read_u16le(bytes.data() + body);
      channels = read_u16le(bytes.data() + body + 2);
      sample_rate = read_u32le(bytes.data() + body + 4);
      bits = read_u16le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      require<IoError>(body + chunk_len <= bytes.size(),
                       "truncated data chunk in '" + path + "'");
      data = bytes.data() + body;
      data_len = chunk_len;
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  require<DataError>(have_fmt && data != nullptr, "missing fmt/data chunk in '" + path + "'");
  require<DataError>(format == 1, "unsupported codec in '" + path + "' (PCM required)");
  require<DataError>(bits == 16, "unsupported sample width in '" + path + "' (16-bit required)");
  require<DataError>(channels >= 1, "zero channels in '" + path + "'");
  require<DataError>(sample_rate > 0, "zero sample rate in '" + path + "'");

  size_t frame_bytes = static_cast<size_t>(channels) * 2;
  require<IoError>(data_len % frame_bytes == 0, "ragged data chunk in '" + path + "'");
  size_t n = data_len / frame_bytes;

  AudioClip clip;
  clip.sample_rate = static_cast<int>(sample_rate);
  clip.source_id = path;
  clip.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (size_t c = 0; c < channels; ++c) {
      int16_t s = static_cast<int16_t>(read_u16le(data + i * frame_bytes + c * 2));
      acc += static_cast<float>(s);
    }
    clip.samples[i] = acc / (32768.0f * channels);
  }
  return clip;
}

void write_wav_pcm16(const std::string& path, const std::vector<float>& samples,
                     int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot create '" + path + "'");
  auto put_u32 = [&](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  auto put_u16 = [&](uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
  };
  uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(sample_rate));
  put_u32(static_cast<uint32_t>(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_len);
  for (float v : samples) {
    double scaled = std::lrint(static_cast<double>(v) * 32768.0);
    int16_t s = static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(static_cast<uint16_t>(s));
  }
  require<IoError>(f.good(), "short write on '" + path + "'");
}

namespace {

// In-place iterative radix-2 complex FFT.
void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        double ur = re[i + k], ui = im[i + k];
        double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

MelFilterbank::MelFilterbank(int sample_rate, size_t n_mels_, size_t n_fft, double f_min) {
  require<ConfigError>(sample_rate > 2 * static_cast<int>(f_min),
                       "sample rate too low for the mel range");
  n_mels = n_mels_;
  n_bins = n_fft / 2 + 1;
  double f_max = sample_rate / 2.0;
  double m_lo = hz_to_mel(f_min), m_hi = hz_to_mel(f_max);
  std::vector<double> edges(n_mels + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / (n_mels + 1));

  weights.assign(n_mels * n_bins, 0.0);
  center_freqs.assign(n_mels, 0.0);
  for (size_t m = 0; m < n_mels; ++m) {
    double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    center_freqs[m] = mid;
    double norm = 2.0 / (hi - lo);
    for (size_t k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      weights[m * n_bins + k] = w * norm;
    }
  }
}

std::vector<double> stft_magnitudes(const std::vector<float>& samples, size_t n_fft, size_t hop,
                                    size_t* out_frames) {
  size_t frames = mel_frame_count(samples.size(), n_fft, hop);
  size_t n_bins = n_fft / 2 + 1;
  std::vector<double> window(n_fft);
  for (size_t i = 0; i < n_fft; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / n_fft));  // periodic

  std::vector<double> mags(frames * n_bins);
  std::vector<double> re(n_fft), im(n_fft);
  for (size_t t = 0; t < frames; ++t) {
    const float* frame = samples.data() + t * hop;
    for (size_t i = 0; i < n_fft; ++i) {
      re[i] = window[i] * static_cast<double>(frame[i]);
      im[i] = 0.0;
    }
    fft_radix2(re, im);
    for (size_t k = 0; k < n_bins; ++k)
      mags[t * n_bins + k] = std::sqrt(re[k] * re[k] + im[k] * im[k]);
  }
  if (out_frames) *out_frames = frames;
  return mags;
}

MelSpectrogram log_mel(const AudioClip& clip, size_t n_fft, size_t hop, size_t n_mels) {
  require<DataError>(clip.samples.size() >= n_fft,
                     "clip '" + clip.source_id + "' shorter than one analysis window (" +
                         std::to_string(clip.samples.size()) + " < " + std::to_string(n_fft) +
                         " samples)");
  MelFilterbank bank(clip.sample_rate, n_mels, n_fft);
  size_t frames = 0;
  auto mags = stft_magnitudes(clip.samples, n_fft, hop, &frames);
  size_t n_bins = n_fft / 2 + 1;

  MelSpectrogram mel;
  mel.frames = frames;
  mel.n_mels = n_mels;
  mel.frame_rate = static_cast<double>(clip.sample_rate) / hop;
  mel.source_id = clip.source_id;
  mel.values.resize(frames * n_mels);
  for (size_t t = 0; t < frames; ++t)
    for (size_t m = 0; m < n_mels; ++m) {
      const double* w = bank.weights.data() + m * n_bins;
      const double* mg = mags.data() + t * n_bins;
      double acc = 0.0;
      for (size_t k = 0; k < n_bins; ++k) acc += w[k] * mg[k];
      mel.values[t * n_mels + m] = static_cast<float>(std::log(acc + kMelEps));
    }
  return mel;
}

namespace {
constexpr uint16_t kMelCacheVersion = 1;
}

void write_mel_cache(const std::string& path, const MelSpectrogram& mel) {
  std::ofstream f(path, std::ios::binary);
  require<IoError>(f.good(), "cannot create '" + path + "'");
  f.write("LMEL", 4);
  uint8_t hdr[10];
  hdr[0] = static_cast<uint8_t>(kMelCacheVersion);
  hdr[1] = static_cast<uint8_t>(kMelCacheVersion >> 8);
  uint32_t t = static_cast<uint32_t>(mel.frames), m = static_cast<uint32_t>(mel.n_mels);
  for (int i = 0; i < 4; ++i) hdr[2 + i] = static_cast<uint8_t>(t >> (8 * i));
  for (int i = 0; i < 4; ++i) hdr[6 + i] = static_cast<uint8_t>(m >> (8 * i));
  f.write(reinterpret_cast<char*>(hdr), 10);
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(mel.values.data()),
          static_cast<std::streamsize>(mel.values.size() * 4));
  require<IoError>(f.good(), "short write on '" + path + "'");
}

MelSpectrogram read_mel_cache(const std::string& path) {
  auto bytes = read_file(path);
  require<DataError>(bytes.size() >= 14 && std::memcmp(bytes.data(), "LMEL", 4) == 0,
                     "'" + path + "' is not a mel cache file");
  uint16_t version = read_u16le(bytes.data() + 4);
  require<DataError>(version == kMelCacheVersion,
                     "unsupported mel cache version " + std::to_string(version));
  uint32_t frames = read_u32le(bytes.data() + 6);
  uint32_t n_mels = read_u32le(bytes.data() + 10);
  size_t payload = static_cast<size_t>(frames) * n_mels * 4;
  require<IoError>(bytes.size() == 14 + payload, "truncated mel cache '" + path + "'");
  MelSpectrogram mel;
  mel.frames = frames;
  mel.n_mels = n_mels;
  mel.source_id = path;
  mel.values.resize(static_cast<size_t>(frames) * n_mels);
  std::memcpy(mel.values.data(), bytes.data() + 14, payload);
  return mel;
}

}  // namespace lhdff
