#include "lhdff/metrics_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "lhdff/common.hpp"

namespace lhdff::oracle {

namespace {

using Tokens = std::vector<std::string>;

bool same_ngram(const Tokens& a, size_t ai, const Tokens& b, size_t bi, size_t n) {
  for (size_t k = 0; k < n; ++k)
    if (a[ai + k] != b[bi + k]) return false;
  return true;
}

// occurrences of the n-gram a[ai..ai+n) inside b, by direct scanning
size_t scan_count(const Tokens& a, size_t ai, const Tokens& b, size_t n) {
  if (b.size() < n) return 0;
  size_t count = 0;
  for (size_t i = 0; i + n <= b.size(); ++i)
    if (same_ngram(a, ai, b, i, n)) ++count;
  return count;
}

}  // namespace

double bleu_n(const EvalCorpus& corpus, int n) {
  require<DataError>(!corpus.empty(), "oracle bleu over an empty corpus");
  double log_prec_sum = 0.0;
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& item : corpus) {
    hyp_len += static_cast<double>(item.hypothesis.size());
    size_t best = item.references[0].size();
    long long target = static_cast<long long>(item.hypothesis.size());
    for (const auto& ref : item.references) {
      long long cur = std::llabs(static_cast<long long>(ref.size()) - target);
      long long old = std::llabs(static_cast<long long>(best) - target);
      if (cur < old || (cur == old && ref.size() < best)) best = ref.size();
    }
    ref_len += static_cast<double>(best);
  }
  for (int k = 1; k <= n; ++k) {
    double matched = 0.0, total = 0.0;
    for (const auto& item : corpus) {
      const auto& hyp = item.hypothesis;
      if (hyp.size() < static_cast<size_t>(k)) continue;
      for (size_t i = 0; i + k <= hyp.size(); ++i) {
        total += 1.0;
        size_t in_hyp = scan_count(hyp, i, hyp, static_cast<size_t>(k));
        size_t in_refs = 0;
        for (const auto& ref : item.references)
          in_refs = std::max(in_refs, scan_count(hyp, i, ref, static_cast<size_t>(k)));
        // each position carries an equal share of its n-gram's clipped count
        matched += static_cast<double>(std::min(in_hyp, in_refs)) / static_cast<double>(in_hyp);
      }
    }
    if (total == 0.0 || matched == 0.0) return 0.0;
    log_prec_sum += std::log(matched / total);
  }
  if (hyp_len == 0.0) return 0.0;
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_prec_sum / n);
}

double rouge_l(const EvalCorpus& corpus, double beta) {
  require<DataError>(!corpus.empty(), "oracle rouge over an empty corpus");
  double sum = 0.0;
  for (const auto& item : corpus) {
    double best = 0.0;
    for (const auto& ref : item.references) {
      if (item.hypothesis.empty() || ref.empty()) continue;
      std::map<std::pair<size_t, size_t>, size_t> memo;
      std::function<size_t(size_t, size_t)> lcs = [&](size_t i, size_t j) -> size_t {
        if (i == item.hypothesis.size() || j == ref.size()) return 0;
        auto key = std::make_pair(i, j);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
        size_t v;
        if (item.hypothesis[i] == ref[j])
          v = 1 + lcs(i + 1, j + 1);
        else
          v = std::max(lcs(i + 1, j), lcs(i, j + 1));
        memo[key] = v;
        return v;
      };
      double l = static_cast<double>(lcs(0, 0));
      if (l == 0.0) continue;
      double p = l / static_cast<double>(item.hypothesis.size());
      double r = l / static_cast<double>(ref.size());
      double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
      best = std::max(best, f);
    }
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

double cider_d(const EvalCorpus& corpus, double sigma) {
  require<DataError>(corpus.size() >= 2, "oracle cider needs at least 2 items");
  double total = 0.0;
  for (size_t order = 1; order <= 4; ++order) {
    // explicit n-gram universe across every sentence in the corpus
    std::vector<Tokens> universe;
    auto universe_id = [&](const Tokens& s, size_t i) -> size_t {
      for (size_t u = 0; u < universe.size(); ++u)
        if (universe[u].size() == order && same_ngram(s, i, universe[u], 0, order)) return u;
      universe.push_back(Tokens(s.begin() + static_cast<long>(i),
                                s.begin() + static_cast<long>(i + order)));
      return universe.size() - 1;
    };
    auto dense_counts = [&](const Tokens& s) {
      std::vector<double> v;
      if (s.size() >= order)
        for (size_t i = 0; i + order <= s.size(); ++i) {
          size_t id = universe_id(s, i);
          if (v.size() <= id) v.resize(universe.size(), 0.0);
          v[id] += 1.0;
        }
      return v;
    };
    std::vector<std::vector<double>> hyp_counts;
    std::vector<std::vector<std::vector<double>>> ref_counts;
    for (const auto& item : corpus) {
      hyp_counts.push_back(dense_counts(item.hypothesis));
      std::vector<std::vector<double>> refs;
      for (const auto& ref : item.references) refs.push_back(dense_counts(ref));
      ref_counts.push_back(std::move(refs));
    }
    // document frequency over each item's reference set
    std::vector<double> df(universe.size(), 0.0);
    for (const auto& refs : ref_counts) {
      for (size_t u = 0; u < universe.size(); ++u) {
        bool present = false;
        for (const auto& r : refs) present |= u < r.size() && r[u] > 0;
        if (present) df[u] += 1.0;
      }
    }
    double log_n = std::log(static_cast<double>(corpus.size()));
    auto weigh = [&](const std::vector<double>& counts) {
      std::vector<double> w(universe.size(), 0.0);
      for (size_t u = 0; u < counts.size(); ++u)
        if (counts[u] > 0) w[u] = counts[u] * (log_n - std::log(std::max(1.0, df[u])));
      return w;
    };
    auto norm = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x * x;
      return std::sqrt(s);
    };
    for (size_t i = 0; i < corpus.size(); ++i) {
      auto hw = weigh(hyp_counts[i]);
      double hn = norm(hw);
      double hyp_tokens = static_cast<double>(corpus[i].hypothesis.size());
      double acc = 0.0;
      for (size_t r = 0; r < ref_counts[i].size(); ++r) {
        auto rw = weigh(ref_counts[i][r]);
        double rn = norm(rw);
        double dot = 0.0;
        for (size_t u = 0; u < universe.size(); ++u) dot += std::min(hw[u], rw[u]) * rw[u];
        double sim = (hn > 0 && rn > 0) ? dot / (hn * rn) : 0.0;
        double delta = hyp_tokens - static_cast<double>(corpus[i].references[r].size());
        acc += sim * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      }
      total += acc / static_cast<double>(corpus[i].references.size());
    }
  }
  return 10.0 * total / (4.0 * static_cast<double>(corpus.size()));
}

}  // namespace lhdff::oracle
