#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lhdff/model.hpp"

namespace lhdff {

// Next-token scoring interface; search strategies are written against it so
// tests can inject crafted distributions.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual size_t vocab_size() const = 0;
  // Log-domain scores over the vocabulary for the token following the prefix.
  // The prefix always starts with <sos>.
  virtual std::vector<float> next_scores(const std::vector<int32_t>& prefix) = 0;
};

// Scores with the model's mode-selected distribution (P_fusion in dual mode)
// in eval mode against fixed encoder memory.
class ModelStepScorer : public StepScorer {
 public:
  ModelStepScorer(LhdffModel& model, EncoderOutput<float> memory, RunMode mode)
      : model_(&model), memory_(std::move(memory)), mode_(mode) {}

  size_t vocab_size() const override { return model_->config().vocab_size; }
  std::vector<float> next_scores(const std::vector<int32_t>& prefix) override;

 private:
  LhdffModel* model_;
  EncoderOutput<float> memory_;
  RunMode mode_;
};

struct Hypothesis {
  std::vector<int32_t> tokens;  // content tokens only, no specials
  double score = 0.0;           // cumulative log-score of every chosen token
  bool finished = false;        // <eos> emitted or length budget reached
  size_t scored_tokens = 0;     // tokens counted into score (incl. <eos>)
};

// Stepwise argmax over the scorer's distribution; <pad>/<sos>/<unk> are never
// emitted; stops at <eos> or after l_max content tokens.
std::vector<int32_t> greedy_decode(StepScorer& scorer, size_t l_max);

// Beam search over cumulative log-score; final ranking uses
// score / len^alpha. beam_size = 1 reproduces greedy_decode exactly.
Hypothesis beam_decode(StepScorer& scorer, size_t beam_size, size_t l_max,
                       double length_alpha = 1.0);

// End-to-end captioning for one clip; beam_size 1 is greedy.
std::vector<int32_t> caption_tokens(LhdffModel& model, RunMode mode, const MelSpectrogram& mel,
                                    size_t l_max, size_t beam_size = 1,
                                    double length_alpha = 1.0);

}  // namespace lhdff
