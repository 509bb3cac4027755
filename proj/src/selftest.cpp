#include "lhdff/selftest.hpp"

#include <cmath>
#include <functional>

#include "lhdff/decoder.hpp"
#include "lhdff/gradcheck.hpp"
#include "lhdff/metrics_oracle.hpp"
#include "lhdff/model.hpp"
#include "lhdff/schedule.hpp"

namespace lhdff {

namespace {

TensorT<double> weighted(const TensorT<double>& t, const TensorT<double>& w) {
  return sum_all(mul(t, w));
}

void run_check(SelfTestResult& result, std::ostream& log, const std::string& name,
               const std::function<void()>& body) {
  SelfTestResult::Check check;
  check.name = name;
  try {
    body();
    check.passed = true;
  } catch (const std::exception& e) {
    check.passed = false;
    check.detail = e.what();
  }
  log << (check.passed ? "[ok]   " : "[FAIL] ") << name;
  if (!check.detail.empty()) log << "  (" << check.detail << ")";
  log << "\n";
  result.checks.push_back(std::move(check));
}

void expect(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

}  // namespace

SelfTestResult run_selftest(std::ostream& log, const SelfTestOptions& opts) {
  SelfTestResult result;

  run_check(result, log, "gradients: primitive ops vs finite differences", [&] {
    RngStream rng(11);
    for (int trial = 0; trial < 3; ++trial) {
      auto x = rand_uniform<double>({2, 2, 4, 4}, -1, 1, rng);
      auto k = rand_uniform<double>({3, 2, 3, 3}, -1, 1, rng);
      auto b = rand_uniform<double>({3}, -1, 1, rng);
      auto w = rand_uniform<double>({2, 3, 4, 4}, -1, 1, rng);
      auto rep =
          check_gradients<double>({x, k, b}, [&] { return weighted(conv2d(x, k, b), w); });
      expect(rep.max_rel_err <= 1e-4, "conv2d gradient error " + std::to_string(rep.max_rel_err));

      auto lx = rand_uniform<double>({3, 5}, -1, 1, rng);
      auto lw = rand_uniform<double>({4, 5}, -1, 1, rng);
      auto lb = rand_uniform<double>({4}, -1, 1, rng);
      auto pw = rand_uniform<double>({3, 4}, -1, 1, rng);
      auto rl =
          check_gradients<double>({lx, lw, lb}, [&] { return weighted(linear(lx, lw, lb), pw); });
      expect(rl.max_rel_err <= 1e-4, "linear gradient error " + std::to_string(rl.max_rel_err));

      auto sx = rand_uniform<double>({4, 6}, -2, 2, rng);
      auto sw = rand_uniform<double>({4, 6}, -1, 1, rng);
      auto rs = check_gradients<double>({sx}, [&] { return weighted(log_softmax(sx), sw); });
      expect(rs.max_rel_err <= 1e-4,
             "log_softmax gradient error " + std::to_string(rs.max_rel_err));
    }
  });

  run_check(result, log, "gradients: attention layer vs finite differences", [&] {
    RngStream rng(13);
    ParamRegistry<double> reg;
    MultiHeadAttention<double> mha(8, 2, rng, reg, "mha");
    auto q = rand_uniform<double>({1, 3, 8}, -1, 1, rng);
    auto w = rand_uniform<double>({1, 3, 8}, -1, 1, rng);
    std::vector<TensorT<double>> wrt{q};
    for (auto& [n, p] : reg.params) wrt.push_back(p);
    auto rep = check_gradients<double>(
        wrt, [&] { return weighted(mha.forward(q, q, q, AttnMask::causal()), w); });
    double err = rep.max_rel_err;
    if (opts.corrupt_fixture) err += 1.0;  // canary for the reporting path
    expect(err <= 1e-4, "attention gradient error " + std::to_string(err));
  });

  run_check(result, log, "fusion identity and loss additivity", [&] {
    RngStream rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      size_t b = 1 + rng.below(2), l = 1 + rng.below(4), m = 4 + rng.below(8);
      auto dist = fuse_logits(rand_uniform<float>({b, l, m}, -3, 3, rng),
                              rand_uniform<float>({b, l, m}, -3, 3, rng));
      for (size_t i = 0; i < dist.p_fusion.size(); ++i)
        expect(dist.p_fusion.data()[i] == dist.p_td1.data()[i] + dist.p_td2.data()[i],
               "P_fusion != P_TD1 + P_TD2");
      std::vector<int32_t> targets(b * l);
      for (auto& t : targets) t = static_cast<int32_t>(1 + rng.below(m - 1));
      auto fused = fused_ce_loss(dist, targets).item();
      auto split = nll_masked(dist.p_td1, targets, 0).item() +
                   nll_masked(dist.p_td2, targets, 0).item();
      expect(std::fabs(fused - split) <= 1e-6, "fused CE does not decompose");
    }
  });

  run_check(result, log, "shape contracts: encoder chain", [&] {
    RngStream rng(19);
    ParamRegistry<float> reg;
    RpannsEncoder<float> enc(rng, reg);
    for (size_t t_in : {16ul, 33ul, 70ul}) {
      MelBatchT<float> batch;
      batch.mel = rand_uniform<float>({1, 1, t_in, 64}, -1, 1, rng);
      batch.frames = {static_cast<int>(t_in)};
      EncoderTrace<float> trace;
      auto out = enc.encode(batch, false, true, &trace);
      size_t tp = RpannsEncoder<float>::frames_after_pools(t_in, 3);
      size_t t = RpannsEncoder<float>::frames_after_pools(t_in, 4);
      expect(trace.x3_pooled.shape() == Shape{1, tp, 256}, "x_3 shape contract");
      expect(trace.x_final.shape() == Shape{1, t, 1024}, "x_final shape contract");
      expect(out.x_fusion.shape() == Shape{1, t, 128}, "x_fusion shape contract");
    }
  });

  run_check(result, log, "metric oracles: brute-force agreement", [&] {
    RngStream rng(23);
    const std::vector<std::string> pool{"a", "dog", "bird", "sings", "rain", "falls", "loud",
                                        "soft"};
    for (int trial = 0; trial < 20; ++trial) {
      EvalCorpus corpus;
      size_t items = 2 + rng.below(5);
      for (size_t i = 0; i < items; ++i) {
        EvalItem item;
        auto sentence = [&](size_t lo) {
          std::vector<std::string> s;
          size_t n = lo + rng.below(7);
          for (size_t k = 0; k < n; ++k) s.push_back(pool[rng.below(pool.size())]);
          return s;
        };
        item.hypothesis = sentence(1);
        for (size_t r = 0; r < 1 + rng.below(2); ++r) item.references.push_back(sentence(2));
        corpus.push_back(std::move(item));
      }
      for (int n = 1; n <= 4; ++n)
        expect(std::fabs(bleu_n(corpus, n) - oracle::bleu_n(corpus, n)) <= 1e-9,
               "bleu oracle disagreement");
      expect(std::fabs(rouge_l(corpus) - oracle::rouge_l(corpus)) <= 1e-9,
             "rouge oracle disagreement");
      expect(std::fabs(cider_d(corpus) - oracle::cider_d(corpus)) <= 1e-9,
             "cider oracle disagreement");
    }
  });

  run_check(result, log, "learning-rate schedule pins", [&] {
    LrSchedule sched;
    expect(std::fabs(lr_at(sched, 4, 9, 10) - 5e-4) < 1e-15, "warmup endpoint");
    expect(std::fabs(lr_at(sched, 10, 0, 10) - 5e-5) < 1e-15, "first decay");
    expect(std::fabs(lr_at(sched, 20, 0, 10) - 5e-6) < 1e-15, "second decay");
  });

  return result;
}

}  // namespace lhdff
