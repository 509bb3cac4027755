#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lhdff/rng.hpp"

namespace lhdff {

// Synthesizes a tiny captionable dataset: each clip is three consecutive
// segments drawn from {low tone, middle tone, high tone, noise burst}, paired
// with a template caption naming the segments in order. Same seed, same bytes.
struct MicroDataset {
  std::string csv_path;
  std::vector<std::string> wav_paths;
  std::vector<std::string> captions;
};

MicroDataset generate_micro_dataset(const std::string& out_dir, uint64_t seed, size_t n_items);

}  // namespace lhdff
