#include "lhdff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "lhdff/common.hpp"

namespace lhdff {

namespace {

using Counts = std::unordered_map<std::string, double>;

// n-gram key: tokens joined with an unprintable separator
std::string ngram_key(const std::vector<std::string>& tokens, size_t begin, size_t n) {
  std::string key;
  for (size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += tokens[begin + i];
  }
  return key;
}

Counts ngram_counts(const std::vector<std::string>& tokens, size_t n) {
  Counts counts;
  if (tokens.size() >= n)
    for (size_t i = 0; i + n <= tokens.size(); ++i) counts[ngram_key(tokens, i, n)] += 1.0;
  return counts;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double bleu_n(const EvalCorpus& corpus, int n) {
  require<ConfigError>(n >= 1 && n <= 4, "bleu order must be in 1..4");
  require<DataError>(!corpus.empty(), "bleu over an empty corpus");
  for (const auto& item : corpus)
    require<DataError>(!item.references.empty(), "bleu item without references");

  double hyp_len = 0, ref_len = 0;
  std::vector<double> matches(static_cast<size_t>(n), 0.0), totals(static_cast<size_t>(n), 0.0);
  for (const auto& item : corpus) {
    hyp_len += static_cast<double>(item.hypothesis.size());
    // closest reference length; ties pick the shorter
    size_t best = item.references[0].size();
    for (const auto& ref : item.references) {
      auto d = [&](size_t len) {
        return std::llabs(static_cast<long long>(len) -
                          static_cast<long long>(item.hypothesis.size()));
      };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best))
        best = ref.size();
    }
    ref_len += static_cast<double>(best);

    for (int k = 1; k <= n; ++k) {
      auto hyp_counts = ngram_counts(item.hypothesis, static_cast<size_t>(k));
      Counts clip;
      for (const auto& ref : item.references)
        for (const auto& [g, c] : ngram_counts(ref, static_cast<size_t>(k)))
          clip[g] = std::max(clip[g], c);
      for (const auto& [g, c] : hyp_counts) {
        totals[k - 1] += c;
        auto it = clip.find(g);
        if (it != clip.end()) matches[k - 1] += std::min(c, it->second);
      }
    }
  }

  double log_prec = 0.0;
  for (int k = 0; k < n; ++k) {
    if (totals[k] == 0.0 || matches[k] == 0.0) return 0.0;
    log_prec += std::log(matches[k] / totals[k]);
  }
  if (hyp_len == 0.0) return 0.0;
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_prec / n);
}

double rouge_l(const EvalCorpus& corpus, double beta) {
  require<DataError>(!corpus.empty(), "rouge over an empty corpus");
  double sum = 0.0;
  double b2 = beta * beta;
  for (const auto& item : corpus) {
    require<DataError>(!item.references.empty(), "rouge item without references");
    double best = 0.0;
    if (!item.hypothesis.empty()) {
      for (const auto& ref : item.references) {
        if (ref.empty()) continue;
        double lcs = static_cast<double>(lcs_length(item.hypothesis, ref));
        if (lcs == 0.0) continue;
        double p = lcs / static_cast<double>(item.hypothesis.size());
        double r = lcs / static_cast<double>(ref.size());
        best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
      }
    }
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

namespace {

struct TfidfVec {
  Counts weights[4];
  double norm[4] = {0, 0, 0, 0};
  double length = 0;  // token count
};

TfidfVec tfidf_vector(const std::vector<std::string>& tokens, const Counts df[4],
                      double log_corpus_size) {
  TfidfVec vec;
  vec.length = static_cast<double>(tokens.size());
  for (size_t n = 0; n < 4; ++n) {
    for (const auto& [g, tf] : ngram_counts(tokens, n + 1)) {
      double df_g = 0;
      if (auto it = df[n].find(g); it != df[n].end()) df_g = it->second;
      double w = tf * (log_corpus_size - std::log(std::max(1.0, df_g)));
      vec.weights[n][g] = w;
      vec.norm[n] += w * w;
    }
    vec.norm[n] = std::sqrt(vec.norm[n]);
  }
  return vec;
}

}  // namespace

double cider_d(const EvalCorpus& corpus, double sigma, std::vector<double>* per_item) {
  require<DataError>(corpus.size() >= 2,
                     "cider needs a corpus of at least 2 items for a usable IDF");
  // document frequency over reference sets: one count per item whose
  // references contain the n-gram
  Counts df[4];
  for (const auto& item : corpus) {
    require<DataError>(!item.references.empty(), "cider item without references");
    std::unordered_set<std::string> seen[4];
    for (const auto& ref : item.references)
      for (size_t n = 0; n < 4; ++n)
        for (const auto& [g, c] : ngram_counts(ref, n + 1)) seen[n].insert(g);
    for (size_t n = 0; n < 4; ++n)
      for (const auto& g : seen[n]) df[n][g] += 1.0;
  }
  double log_n = std::log(static_cast<double>(corpus.size()));

  double total = 0.0;
  if (per_item) per_item->clear();
  for (const auto& item : corpus) {
    auto hyp = tfidf_vector(item.hypothesis, df, log_n);
    double order_sum[4] = {0, 0, 0, 0};
    for (const auto& ref : item.references) {
      auto rv = tfidf_vector(ref, df, log_n);
      double delta = hyp.length - rv.length;
      double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      for (size_t n = 0; n < 4; ++n) {
        double dot = 0.0;
        for (const auto& [g, w] : hyp.weights[n]) {
          auto it = rv.weights[n].find(g);
          if (it != rv.weights[n].end()) dot += std::min(w, it->second) * it->second;
        }
        double sim = 0.0;
        if (hyp.norm[n] > 0 && rv.norm[n] > 0) sim = dot / (hyp.norm[n] * rv.norm[n]);
        order_sum[n] += sim * penalty;
      }
    }
    double score = 0.0;
    for (size_t n = 0; n < 4; ++n)
      score += order_sum[n] / static_cast<double>(item.references.size());
    score = 10.0 * score / 4.0;
    total += score;
    if (per_item) per_item->push_back(score);
  }
  return total / static_cast<double>(corpus.size());
}

MetricReport compute_metrics(const EvalCorpus& corpus) {
  MetricReport report;
  report.corpus.bleu1 = bleu_n(corpus, 1);
  report.corpus.bleu2 = bleu_n(corpus, 2);
  report.corpus.bleu3 = bleu_n(corpus, 3);
  report.corpus.bleu4 = bleu_n(corpus, 4);
  report.corpus.rougel = rouge_l(corpus);
  std::vector<double> cider_items;
  report.corpus.cider = cider_d(corpus, 6.0, &cider_items);
  for (size_t i = 0; i < corpus.size(); ++i) {
    EvalCorpus single{corpus[i]};
    MetricRow row;
    row.bleu1 = bleu_n(single, 1);
    row.bleu2 = bleu_n(single, 2);
    row.bleu3 = bleu_n(single, 3);
    row.bleu4 = bleu_n(single, 4);
    row.rougel = rouge_l(single);
    row.cider = cider_items[i];
    report.items.push_back(row);
  }
  return report;
}

}  // namespace lhdff
