#pragma once

#include "lhdff/audio.hpp"
#include "lhdff/rng.hpp"

namespace lhdff {

struct SpecAugmentPolicy {
  int n_time_masks = 2;
  int max_time_width = 64;  // frames
  int n_freq_masks = 2;
  int max_freq_width = 8;  // mel bins
  double mixture_prob = 0.5;  // per-batch chance of the mixture variant

  static SpecAugmentPolicy disabled() { return {0, 0, 0, 0, 0.0}; }
  size_t max_masked_cells(size_t frames, size_t bins) const {
    return static_cast<size_t>(n_time_masks) * max_time_width * bins +
           static_cast<size_t>(n_freq_masks) * max_freq_width * frames;
  }
};

enum class MaskVariant { Zero, Mixture };

// Masks n_time_masks time bands and n_freq_masks frequency bands, widths drawn
// uniformly from [0, max] and clipped to the spectrogram extent. The zero
// variant writes the log-mel floor; the mixture variant copies the same bands
// from the donor. Unmasked cells are bit-identical to the input.
MelSpectrogram spec_augment(const MelSpectrogram& mel, const SpecAugmentPolicy& policy,
                            MaskVariant variant, const MelSpectrogram* donor, RngStream& rng);

}  // namespace lhdff
