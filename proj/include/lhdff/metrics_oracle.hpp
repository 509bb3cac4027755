#pragma once

#include "lhdff/metrics.hpp"

namespace lhdff::oracle {

// Brute-force re-implementations kept deliberately independent of
// src/metrics.cpp: positional n-gram scanning instead of hash-map counting,
// recursive memoized LCS, and dense TF-IDF vectors over an explicit n-gram
// universe. They exist to cross-check the production metrics.
double bleu_n(const EvalCorpus& corpus, int n);
double rouge_l(const EvalCorpus& corpus, double beta = 1.2);
double cider_d(const EvalCorpus& corpus, double sigma = 6.0);

}  // namespace lhdff::oracle
