#include "lhdff/decode.hpp"

#include <algorithm>
#include <cmath>

namespace lhdff {

namespace {

bool selectable(int32_t id) {
  return id == Vocabulary::kEos || id >= Vocabulary::kReserved;
}

}  // namespace

std::vector<float> ModelStepScorer::next_scores(const std::vector<int32_t>& prefix) {
  size_t l = prefix.size();
  auto dist = model_->decode_step_batch(prefix, 1, l, memory_, mode_);
  const auto& scores = model_->scores(dist, mode_);
  size_t m = model_->config().vocab_size;
  const float* last_row = scores.data().data() + (l - 1) * m;
  return std::vector<float>(last_row, last_row + m);
}

std::vector<int32_t> greedy_decode(StepScorer& scorer, size_t l_max) {
  size_t m = scorer.vocab_size();
  std::vector<int32_t> prefix{Vocabulary::kSos};
  std::vector<int32_t> out;
  while (out.size() < l_max) {
    auto row = scorer.next_scores(prefix);
    require<ShapeError>(row.size() == m, "scorer row size mismatch");
    int32_t best = -1;
    for (int32_t w = 0; w < static_cast<int32_t>(m); ++w) {
      if (!selectable(w)) continue;
      if (best < 0 || row[w] > row[best]) best = w;
    }
    if (best == Vocabulary::kEos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

Hypothesis beam_decode(StepScorer& scorer, size_t beam_size, size_t l_max, double length_alpha) {
  require<ConfigError>(beam_size >= 1, "beam size must be at least 1");
  size_t m = scorer.vocab_size();

  std::vector<Hypothesis> live{{{}, 0.0, false, 0}};
  std::vector<Hypothesis> done;

  auto normalized = [&](const Hypothesis& h) {
    double len = static_cast<double>(std::max<size_t>(h.scored_tokens, 1));
    return h.score / std::pow(len, length_alpha);
  };

  for (size_t step = 0; step < l_max && !live.empty(); ++step) {
    struct Candidate {
      size_t beam;
      int32_t token;
      double score;
    };
    std::vector<Candidate> candidates;
    for (size_t b = 0; b < live.size(); ++b) {
      std::vector<int32_t> prefix{Vocabulary::kSos};
      prefix.insert(prefix.end(), live[b].tokens.begin(), live[b].tokens.end());
      auto row = scorer.next_scores(prefix);
      require<ShapeError>(row.size() == m, "scorer row size mismatch");
      for (int32_t w = 0; w < static_cast<int32_t>(m); ++w)
        if (selectable(w)) candidates.push_back({b, w, live[b].score + row[w]});
    }
    // ties keep generation order (ascending token id), matching greedy argmax
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<Hypothesis> next;
    size_t selected = 0;
    for (const auto& cand : candidates) {
      if (selected >= beam_size) break;
      ++selected;
      Hypothesis h = live[cand.beam];
      h.score = cand.score;
      ++h.scored_tokens;
      if (cand.token == Vocabulary::kEos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(cand.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) {
    h.finished = true;  // length budget reached
    done.push_back(std::move(h));
  }
  require<Error>(!done.empty(), "beam search produced no hypotheses");
  auto best = std::max_element(done.begin(), done.end(),
                               [&](const Hypothesis& a, const Hypothesis& b) {
                                 return normalized(a) < normalized(b);
                               });
  return *best;
}

std::vector<int32_t> caption_tokens(LhdffModel& model, RunMode mode, const MelSpectrogram& mel,
    size_t l_max, size_t beam_size, double length_alpha) {
  MelBatchT<float> batch = MelBatchT<float>::from_spectrograms({&mel});
  auto memory = model.encode(batch, false, mode);
  ModelStepScorer scorer(model, std::move(memory), mode);
  if (beam_size <= 1) return greedy_decode(scorer, l_max);
  return beam_decode(scorer, beam_size, l_max, length_alpha).tokens;
}

}  // namespace lhdff
