#include "lhdff/spec_augment.hpp"

#include <algorithm>

namespace lhdff {

MelSpectrogram spec_augment(const MelSpectrogram& mel, const SpecAugmentPolicy& policy,
                            MaskVariant variant, const MelSpectrogram* donor, RngStream& rng) {
  if (variant == MaskVariant::Mixture) {
    require<ConfigError>(donor != nullptr, "mixture masking needs a donor spectrogram");
    require<ShapeError>(donor->n_mels == mel.n_mels,
                        "mixture masking: donor mel bin count differs");
  }
  MelSpectrogram out = mel;
  size_t t_extent = mel.frames;
  size_t f_extent = mel.n_mels;
  if (variant == MaskVariant::Mixture) t_extent = std::min(t_extent, donor->frames);

  auto fill_cell = [&](size_t t, size_t f) {
    out.at(t, f) = (variant == MaskVariant::Zero) ? kLogMelFloor : donor->at(t, f);
  };

  for (int i = 0; i < policy.n_time_masks; ++i) {
    size_t width = static_cast<size_t>(rng.uniform_int(0, policy.max_time_width));
    width = std::min(width, t_extent);  // clipped, never an error
    size_t start = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(t_extent - width)));
    for (size_t t = start; t < start + width; ++t)
      for (size_t f = 0; f < mel.n_mels; ++f) fill_cell(t, f);
  }
  for (int i = 0; i < policy.n_freq_masks; ++i) {
    size_t width = static_cast<size_t>(rng.uniform_int(0, policy.max_freq_width));
    width = std::min(width, f_extent);
    size_t start = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(f_extent - width)));
    for (size_t f = start; f < start + width; ++f)
      for (size_t t = 0; t < t_extent; ++t) fill_cell(t, f);
  }
  return out;
}

}  // namespace lhdff
