#pragma once

#include <string>
#include <vector>

#include "lhdff/metrics.hpp"
#include "lhdff/text.hpp"

namespace lhdff {

struct EvalOptions {
  size_t beam = 1;            // 1 = greedy
  double length_alpha = 1.0;  // beam score normalization exponent
  size_t max_tokens = 20;     // content-token budget per caption
  size_t batch_size = 8;
};

struct CheckpointEval {
  std::string checkpoint_path;
  std::string mode;  // from the embedded config snapshot
  uint64_t vocab_hash = 0;
  double test_loss = 0.0;
  MetricReport report;
  std::vector<std::string> clip_ids;
  std::vector<std::string> hypotheses;  // caption text per item
};

// Restores a checkpoint, captions every clip of the test manifest with its
// training mode, and scores against the references.
CheckpointEval evaluate_checkpoint(const std::string& checkpoint_path, const Vocabulary& vocab,
                                   const DatasetManifest& test, const EvalOptions& opts = {});

// Three-way comparison (dual / fusion_only / high_only). Checkpoints must
// exist, carry those three modes, and share the vocabulary hash.
std::vector<CheckpointEval> run_ablation_eval(const std::vector<std::string>& checkpoint_paths,
                                              const Vocabulary& vocab,
                                              const DatasetManifest& test,
                                              const EvalOptions& opts = {});

// "model,BLEU1,BLEU2,BLEU3,BLEU4,ROUGEL,CIDEr" rows.
std::string metrics_csv(const std::vector<CheckpointEval>& evals);
// Fixed-width table for logs.
std::string metrics_table(const std::vector<CheckpointEval>& evals);
// One JSON record per clip: id, hypothesis, per-metric scores.
std::string per_item_jsonl(const CheckpointEval& eval);

}  // namespace lhdff
