#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lhdff/adam.hpp"
#include "lhdff/checkpoint.hpp"
#include "lhdff/model.hpp"
#include "lhdff/schedule.hpp"
#include "lhdff/spec_augment.hpp"
#include "lhdff/text.hpp"

namespace lhdff {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 30;
  double base_lr = 5e-4;
  int warmup_epochs = 5;
  int decay_every = 10;
  double decay_factor = 0.1;
  uint64_t seed = 0;
  RunMode mode = RunMode::Dual;
  size_t l_max = 22;  // caption row length incl. <sos>/<eos>
  double dropout = 0.1;
  bool augment = true;
  SpecAugmentPolicy augment_policy;
  double clip_norm = 1.0;  // <= 0 disables clipping
  // stop once the eval-mode training loss drops below this (<= 0: run all epochs)
  double stop_below_loss = -1.0;
  std::string out_dir;

  void validate() const;
  LrSchedule schedule() const { return {base_lr, warmup_epochs, decay_every, decay_factor}; }
};

std::string train_config_to_text(const TrainConfig& cfg, const ModelConfig& mcfg);
void train_config_from_text(const std::string& text, TrainConfig* cfg, ModelConfig* mcfg);

// Loads audio, computes (or reads cached) log-mel spectrograms and normalized
// caption tokens for a manifest, holding them in memory for the run.
class DatasetCache {
 public:
  DatasetCache(const DatasetManifest& manifest, const Vocabulary& vocab, size_t l_max,
               const std::string& mel_cache_dir = "");

  size_t items() const { return mels_.size(); }
  const MelSpectrogram& mel(size_t item) const { return mels_[item]; }
  const std::vector<std::vector<std::string>>& caption_tokens(size_t item) const {
    return captions_[item];
  }
  const std::vector<std::pair<size_t, size_t>>& pairs() const { return pairs_; }
  const Vocabulary& vocab() const { return *vocab_; }
  size_t l_max() const { return l_max_; }
  const DatasetManifest& manifest() const { return *manifest_; }

 private:
  const DatasetManifest* manifest_;
  const Vocabulary* vocab_;
  size_t l_max_;
  std::vector<MelSpectrogram> mels_;
  std::vector<std::vector<std::vector<std::string>>> captions_;  // item -> refs -> tokens
  std::vector<std::pair<size_t, size_t>> pairs_;
};

struct EpochRecord {
  int epoch = 0;
  double mean_step_loss = 0.0;  // teacher-forced loss averaged over the epoch's steps
  double eval_train_loss = 0.0; // eval-mode loss over the training set
  double val_loss = 0.0;        // eval-mode loss over the validation set (if any)
};

struct TrainReport {
  std::vector<std::string> step_lines;  // "epoch step lr loss"
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_loss = 0.0;
  std::string last_checkpoint_path;
  std::string best_checkpoint_path;
  bool stopped_early = false;
};

// Teacher-forced training with Adam, per-step warmup/decay schedule, seeded
// batch order and augmentation, per-epoch checkpointing. Deterministic given
// the config seed; resuming from a checkpoint replays the identical stream.
TrainReport train_model(const TrainConfig& cfg, LhdffModel& model, AdamOptimizer<float>& opt,
                        const DatasetCache& train_data, const DatasetCache* val_data,
                        int start_epoch = 0, int64_t start_global_step = 0,
                        std::ostream* log = nullptr);

// Eval-mode loss (no dropout, no augmentation, running batch-norm stats) over
// every (clip, caption) pair of a dataset; token-weighted mean.
double evaluate_loss(LhdffModel& model, RunMode mode, const DatasetCache& data,
                     size_t batch_size);

}  // namespace lhdff
