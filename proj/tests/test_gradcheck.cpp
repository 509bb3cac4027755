#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lhdff/gradcheck.hpp"
#include "lhdff/nn.hpp"
#include "lhdff/ops.hpp"

using namespace lhdff;

namespace {

// Random fixed weights break the symmetry a plain sum would leave in the
// gradients, so every coordinate is genuinely exercised.
TensorT<double> probe_weights(const Shape& shape, RngStream& rng) {
  return rand_uniform<double>(shape, -1.0, 1.0, rng);
}

TensorT<double> weighted(const TensorT<double>& t, const TensorT<double>& w) {
  return sum_all(mul(t, w));
}

// Keeps inputs away from the ReLU kink so finite differences stay clean.
TensorT<double> away_from_zero(TensorT<double> t, double margin = 5e-3) {
  for (auto& v : t.mutable_data())
    if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
  return t;
}

}  // namespace

TEST_CASE("gradcheck: elementwise and reductions") {
  RngStream rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = rand_uniform<double>({3, 4}, -1, 1, rng);
    auto b = rand_uniform<double>({3, 4}, -1, 1, rng);
    auto w = probe_weights({3, 4}, rng);
    auto rep = check_gradients<double>(
        {a, b}, [&] { return weighted(mul(add(a, b), sub(a, b)), w); });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: relu") {
  RngStream rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = away_from_zero(rand_uniform<double>({4, 5}, -1, 1, rng));
    auto w = probe_weights({4, 5}, rng);
    auto rep = check_gradients<double>({x}, [&] { return weighted(relu(x), w); });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: conv2d") {
  RngStream rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 2 + rng.below(4),
           wdt = 2 + rng.below(4), c2 = 1 + rng.below(3);
    auto x = rand_uniform<double>({n, c, h, wdt}, -1, 1, rng);
    auto k = rand_uniform<double>({c2, c, 3, 3}, -1, 1, rng);
    auto b = rand_uniform<double>({c2}, -1, 1, rng);
    auto w = probe_weights({n, c2, h, wdt}, rng);
    auto rep = check_gradients<double>({x, k, b}, [&] { return weighted(conv2d(x, k, b), w); });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: batch_norm2d train and eval") {
  RngStream rng(109);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 2 + rng.below(2), c = 1 + rng.below(3), h = 2 + rng.below(3),
           wdt = 2 + rng.below(3);
    auto x = rand_uniform<double>({n, c, h, wdt}, -1, 1, rng);
    auto gamma = rand_uniform<double>({c}, 0.5, 1.5, rng);
    auto beta = rand_uniform<double>({c}, -0.5, 0.5, rng);
    auto w = probe_weights({n, c, h, wdt}, rng);
    bool training = trial % 2 == 0;
    auto rm = rand_uniform<double>({c}, -0.2, 0.2, rng);
    auto rv = rand_uniform<double>({c}, 0.5, 1.5, rng);
    auto rep = check_gradients<double>({x, gamma, beta}, [&] {
      // copies keep running-stat updates from leaking between re-evaluations
      auto rmc = TensorT<double>(rm.shape(), {rm.data().begin(), rm.data().end()});
      auto rvc = TensorT<double>(rv.shape(), {rv.data().begin(), rv.data().end()});
      return weighted(batch_norm2d(x, gamma, beta, rmc, rvc, 0.1, 1e-5, training), w);
    });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: pooling and frequency mean") {
  RngStream rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 2 + rng.below(5),
           wdt = 2 + rng.below(5);
    auto x = rand_uniform<double>({n, c, h, wdt}, -1, 1, rng);
    auto w1 = probe_weights({n, c, h / 2, wdt / 2}, rng);
    auto r1 = check_gradients<double>({x}, [&] { return weighted(avg_pool2d(x), w1); });
    CHECK(r1.max_rel_err <= 1e-4);

    auto w2 = probe_weights({n, h, c}, rng);
    auto r2 = check_gradients<double>({x}, [&] { return weighted(freq_mean(x), w2); });
    CHECK(r2.max_rel_err <= 1e-4);

    auto t3 = rand_uniform<double>({n, h, c}, -1, 1, rng);
    auto w3 = probe_weights({n, h / 2, c}, rng);
    auto r3 = check_gradients<double>({t3}, [&] { return weighted(avg_pool_time(t3), w3); });
    CHECK(r3.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: linear and matmul") {
  RngStream rng(127);
  for (int trial = 0; trial < 20; ++trial) {
    size_t rows = 1 + rng.below(4), din = 1 + rng.below(5), dout = 1 + rng.below(5);
    auto x = rand_uniform<double>({rows, din}, -1, 1, rng);
    auto w = rand_uniform<double>({dout, din}, -1, 1, rng);
    auto b = rand_uniform<double>({dout}, -1, 1, rng);
    auto pw = probe_weights({rows, dout}, rng);
    auto rep = check_gradients<double>({x, w, b}, [&] { return weighted(linear(x, w, b), pw); });
    CHECK(rep.max_rel_err <= 1e-4);

    size_t bt = 1 + rng.below(3), m = 1 + rng.below(3), k = 1 + rng.below(3),
           nn = 1 + rng.below(3);
    auto a = rand_uniform<double>({bt, m, k}, -1, 1, rng);
    auto bb = rand_uniform<double>({bt, k, nn}, -1, 1, rng);
    auto pw2 = probe_weights({bt, m, nn}, rng);
    auto rep2 = check_gradients<double>({a, bb}, [&] { return weighted(matmul(a, bb), pw2); });
    CHECK(rep2.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: softmaxes and layer norm") {
  RngStream rng(131);
  for (int trial = 0; trial < 20; ++trial) {
    size_t rows = 1 + rng.below(3), m = 2 + rng.below(6);
    auto x = rand_uniform<double>({rows, m}, -2, 2, rng);
    auto w = probe_weights({rows, m}, rng);
    auto rep = check_gradients<double>({x}, [&] { return weighted(log_softmax(x), w); });
    CHECK(rep.max_rel_err <= 1e-4);

    size_t b = 1 + rng.below(2), hh = 1 + rng.below(2), lq = 1 + rng.below(4);
    auto sc = rand_uniform<double>({b, hh, lq, lq}, -2, 2, rng);
    auto wm = probe_weights({b, hh, lq, lq}, rng);
    auto rc = check_gradients<double>(
        {sc}, [&] { return weighted(masked_softmax(sc, AttnMask::causal()), wm); });
    CHECK(rc.max_rel_err <= 1e-4);

    std::vector<int> valid(b);
    for (auto& v : valid) v = 1 + static_cast<int>(rng.below(lq));
    auto rv = check_gradients<double>({sc}, [&] {
      return weighted(masked_softmax(sc, AttnMask::from_key_valid(valid)), wm);
    });
    CHECK(rv.max_rel_err <= 1e-4);

    size_t d = 2 + rng.below(6);
    auto lx = rand_uniform<double>({rows, d}, -1, 1, rng);
    auto gamma = rand_uniform<double>({d}, 0.5, 1.5, rng);
    auto beta = rand_uniform<double>({d}, -0.5, 0.5, rng);
    auto wl = probe_weights({rows, d}, rng);
    auto rl = check_gradients<double>({lx, gamma, beta},
                                      [&] { return weighted(layer_norm(lx, gamma, beta), wl); });
    CHECK(rl.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: embedding, nll, shape ops") {
  RngStream rng(137);
  for (int trial = 0; trial < 20; ++trial) {
    size_t v = 4 + rng.below(5), d = 2 + rng.below(4), L = 1 + rng.below(4);
    auto table = rand_uniform<double>({v, d}, -1, 1, rng);
    std::vector<int32_t> ids(L);
    for (auto& id : ids) id = static_cast<int32_t>(rng.below(v));
    auto w = probe_weights({1, L, d}, rng);
    auto rep = check_gradients<double>(
        {table}, [&] { return weighted(embedding(table, ids, {1, L}), w); });
    CHECK(rep.max_rel_err <= 1e-4);

    size_t m = 3 + rng.below(5);
    auto lp = rand_uniform<double>({2, L, m}, -2, 2, rng);
    std::vector<int32_t> targets(2 * L);
    for (auto& t : targets) t = static_cast<int32_t>(rng.below(m));
    targets[0] = 0;  // at least one pad position
    targets[1] = 1;  // and at least one live position
    auto rn = check_gradients<double>(
        {lp}, [&] { return nll_masked(log_softmax(lp), targets, 0); });
    CHECK(rn.max_rel_err <= 1e-4);

    auto x3 = rand_uniform<double>({2, 2 + rng.below(4), 3}, -1, 1, rng);
    size_t t = x3.dim(1);
    auto wp = probe_weights({2, t + 2, 3}, rng);
    auto rp = check_gradients<double>({x3}, [&] { return weighted(pad_axis1(x3, t + 2), wp); });
    CHECK(rp.max_rel_err <= 1e-4);
    auto ws = probe_weights({2, 1, 3}, rng);
    auto rs = check_gradients<double>({x3}, [&] { return weighted(slice_axis1(x3, 1), ws); });
    CHECK(rs.max_rel_err <= 1e-4);

    auto xp = rand_uniform<double>({2, 3, 4}, -1, 1, rng);
    auto wt = probe_weights({4, 2, 3}, rng);
    auto rt = check_gradients<double>(
        {xp}, [&] { return weighted(permute(xp, {2, 0, 1}), wt); });
    CHECK(rt.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradcheck: full attention layer") {
  RngStream rng(139);
  for (int trial = 0; trial < 10; ++trial) {
    ParamRegistry<double> reg;
    MultiHeadAttention<double> mha(8, 2, rng, reg, "mha");
    auto q = rand_uniform<double>({1, 3, 8}, -1, 1, rng);
    auto kv = rand_uniform<double>({1, 4, 8}, -1, 1, rng);
    auto w = probe_weights({1, 3, 8}, rng);
    std::vector<TensorT<double>> wrt{q, kv};
    for (auto& [n, p] : reg.params) wrt.push_back(p);
    auto rep = check_gradients<double>(
        wrt, [&] { return weighted(mha.forward(q, kv, kv, AttnMask::none()), w); });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}
