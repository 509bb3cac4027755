#include "lhdff/micro_dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lhdff/audio.hpp"
#include "lhdff/common.hpp"

namespace lhdff {

namespace {

constexpr int kSampleRate = 8000;
// 34 analysis frames with the 1024/512 STFT settings; four 2x2 pools leave
// the encoder two output frames, enough to keep segment order learnable.
constexpr size_t kClipSamples = 1024 + 33 * 512;
constexpr size_t kSegments = 3;
constexpr size_t kTypes = 4;

const double kToneHz[kTypes] = {220.0, 700.0, 2200.0, 0.0};  // last entry: noise
const char* kPhrases[kTypes] = {"a low tone", "a middle tone", "a high tone", "a noise burst"};

void synth_segment(std::vector<float>& samples, size_t begin, size_t end, size_t type,
                   RngStream& rng) {
  size_t fade = std::min<size_t>(100, (end - begin) / 4);
  for (size_t i = begin; i < end; ++i) {
    double v;
    if (type == 3) {
      v = rng.uniform(-0.3, 0.3);
    } else {
      double t = static_cast<double>(i - begin) / kSampleRate;
      v = 0.5 * std::sin(2.0 * M_PI * kToneHz[type] * t);
    }
    size_t into = i - begin, from_end = end - 1 - i;
    if (into < fade) v *= static_cast<double>(into) / fade;
    if (from_end < fade) v *= static_cast<double>(from_end) / fade;
    samples[i] = static_cast<float>(v);
  }
}

}  // namespace

MicroDataset generate_micro_dataset(const std::string& out_dir, uint64_t seed, size_t n_items) {
  require<ConfigError>(n_items >= 1, "micro dataset needs at least one item");
  std::filesystem::create_directories(out_dir);

  // all 64 ordered type triples, shuffled once; items beyond 64 reuse a triple
  // with a fresh noise realization
  std::vector<std::array<size_t, kSegments>> triples;
  for (size_t a = 0; a < kTypes; ++a)
    for (size_t b = 0; b < kTypes; ++b)
      for (size_t c = 0; c < kTypes; ++c) triples.push_back({a, b, c});
  RngStream order_rng(derive_seed(seed, "micro.order"));
  for (size_t i = triples.size(); i > 1; --i)
    std::swap(triples[i - 1], triples[order_rng.below(i)]);

  MicroDataset ds;
  std::string csv = "file_name,caption_1\n";
  for (size_t item = 0; item < n_items; ++item) {
    const auto& triple = triples[item % triples.size()];
    std::vector<float> samples(kClipSamples, 0.0f);
    RngStream audio_rng(derive_seed(seed, "micro.audio", {item}));
    size_t seg_len = kClipSamples / kSegments;
    for (size_t s = 0; s < kSegments; ++s) {
      size_t begin = s * seg_len;
      size_t end = (s + 1 == kSegments) ? kClipSamples : begin + seg_len;
      synth_segment(samples, begin, end, triple[s], audio_rng);
    }

    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03zu.wav", item);
    std::string wav_path = (std::filesystem::path(out_dir) / name).string();
    write_wav_pcm16(wav_path, samples, kSampleRate);

    std::string caption;
    for (size_t s = 0; s < kSegments; ++s) {
      if (s) caption += " then ";
      caption += kPhrases[triple[s]];
    }
    csv += std::string(name) + "," + caption + "\n";
    ds.wav_paths.push_back(wav_path);
    ds.captions.push_back(caption);
  }

  ds.csv_path = (std::filesystem::path(out_dir) / "captions.csv").string();
  std::ofstream f(ds.csv_path, std::ios::binary);
  require<IoError>(f.good(), "cannot create '" + ds.csv_path + "'");
  f << csv;
  require<IoError>(f.good(), "short write on '" + ds.csv_path + "'");
  return ds;
}

}  // namespace lhdff
