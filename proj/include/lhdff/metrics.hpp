#pragma once

#include <string>
#include <vector>

namespace lhdff {

struct EvalItem {
  std::vector<std::string> hypothesis;                   // tokens
  std::vector<std::vector<std::string>> references;      // per reference, tokens
};

using EvalCorpus = std::vector<EvalItem>;

// Corpus-level BLEU-n: clipped modified n-gram precision with a geometric mean
// over orders 1..n and a brevity penalty; no smoothing, a zero precision at
// any order zeroes the score.
double bleu_n(const EvalCorpus& corpus, int n);

// Mean over items of the best LCS F-measure across references (beta = 1.2).
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);

// CIDEr-D: TF-IDF n-gram cosine similarity for n = 1..4 with count clipping
// and a Gaussian length penalty (sigma = 6), averaged over references and
// orders, scaled by 10. Per-item scores returned when requested.
double cider_d(const EvalCorpus& corpus, double sigma = 6.0,
               std::vector<double>* per_item = nullptr);

struct MetricRow {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rougel = 0, cider = 0;
};

struct MetricReport {
  MetricRow corpus;
  // per-item breakdown: sentence-level BLEU, per-item ROUGE-L and CIDEr
  std::vector<MetricRow> items;
};

MetricReport compute_metrics(const EvalCorpus& corpus);

}  // namespace lhdff
