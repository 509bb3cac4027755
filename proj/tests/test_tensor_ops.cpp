#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lhdff/adam.hpp"
#include "lhdff/nn.hpp"
#include "lhdff/ops.hpp"
#include "lhdff/tensor.hpp"

using namespace lhdff;

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}, std::vector<float>{}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(4.0f).item() == 4.0f);
}

TEST_CASE("conv2d: zero input stays zero") {
  RngStream rng(1);
  auto x = Tensor::zeros({1, 1, 4, 4});
  auto k = rand_uniform<float>({3, 1, 3, 3}, -1, 1, rng);
  auto b = Tensor::zeros({3});
  auto y = conv2d(x, k, b);
  CHECK(y.shape() == Shape{1, 3, 4, 4});
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d: center-delta kernel is identity") {
  Tensor x({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<float> kd(9, 0.0f);
  kd[4] = 1.0f;  // delta at (1,1)
  Tensor k({1, 1, 3, 3}, kd);
  auto y = conv2d(x, k, Tensor::zeros({1}));
  for (size_t i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d: hand-convolved 2x2 input, all-ones 3x3 kernel") {
  // every 3x3 window over the padded 2x2 input sums all four values
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor k({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  auto y = conv2d(x, k, Tensor::zeros({1}));
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.data()) CHECK(v == doctest::Approx(10.0f));
}

TEST_CASE("conv2d: channel mismatch raises shape error") {
  auto x = Tensor::zeros({1, 2, 4, 4});
  auto k = Tensor::zeros({3, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("batch_norm2d: constant channel normalizes to zero in train mode") {
  auto x = Tensor::full({2, 1, 2, 2}, 7.0f);
  auto gamma = Tensor::full({1}, 1.0f);
  auto beta = Tensor::zeros({1});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::full({1}, 1.0f);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true);
  for (float v : y.data()) CHECK(v == doctest::Approx(0.0f));
  CHECK(rm.data()[0] == doctest::Approx(0.7f));  // 0.9*0 + 0.1*7
}

TEST_CASE("batch_norm2d: beta shifts the output mean") {
  RngStream rng(3);
  auto x = rand_uniform<float>({2, 2, 3, 3}, -2, 2, rng);
  auto gamma = Tensor::full({2}, 1.0f);
  auto beta = Tensor::full({2}, 5.0f);
  auto rm = Tensor::zeros({2});
  auto rv = Tensor::full({2}, 1.0f);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true);
  for (size_t c = 0; c < 2; ++c) {
    double acc = 0;
    for (size_t n = 0; n < 2; ++n)
      for (size_t j = 0; j < 9; ++j) acc += y.data()[(n * 2 + c) * 9 + j];
    CHECK(acc / 18.0 == doctest::Approx(5.0).epsilon(1e-4));
  }
}

TEST_CASE("batch_norm2d: values {1,3} normalize to {-1,+1}") {
  // mean 2, biased variance 1
  Tensor x({2, 1, 1, 1}, std::vector<float>{1, 3});
  auto gamma = Tensor::full({1}, 1.0f);
  auto beta = Tensor::zeros({1});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::full({1}, 1.0f);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, 0.1f, 1e-12f, true);
  CHECK(y.data()[0] == doctest::Approx(-1.0f).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("batch_norm2d: eval mode uses running stats") {
  Tensor x({1, 1, 1, 2}, std::vector<float>{4, 8});
  auto gamma = Tensor::full({1}, 1.0f);
  auto beta = Tensor::zeros({1});
  auto rm = Tensor::full({1}, 2.0f);
  auto rv = Tensor::full({1}, 4.0f);
  auto y = batch_norm2d(x, gamma, beta, rm, rv, 0.1f, 0.0f, false);
  CHECK(y.data()[0] == doctest::Approx(1.0f));
  CHECK(y.data()[1] == doctest::Approx(3.0f));
  CHECK(rm.data()[0] == 2.0f);  // untouched in eval
}

TEST_CASE("relu basics") {
  Tensor x({3}, std::vector<float>{-1, 0, 2});
  auto y = relu(x);
  CHECK(y.data()[0] == 0.0f);
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[2] == 2.0f);

  auto neg = Tensor::full({4}, -3.0f);
  auto yneg = relu(neg);
  for (float v : yneg.data()) CHECK(v == 0.0f);
}

TEST_CASE("relu gradient of sum is the step function") {
  Tensor x({2}, std::vector<float>{-1, 2});
  x.set_requires_grad(true);
  GradientTape tape;
  auto loss = sum_all(relu(x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 0.0f);
  CHECK(x.grad()[1] == 1.0f);
}

TEST_CASE("avg_pool2d: hand mean and floor rule") {
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  auto y = avg_pool2d(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(2.5f));

  auto c = Tensor::full({1, 2, 4, 6}, 3.25f);
  auto yc = avg_pool2d(c);
  CHECK(yc.shape() == Shape{1, 2, 2, 3});
  for (float v : yc.data()) CHECK(v == doctest::Approx(3.25f));

  auto odd = Tensor::full({1, 1, 5, 5}, 1.0f);
  CHECK(avg_pool2d(odd).shape() == Shape{1, 1, 2, 2});

  CHECK_THROWS_AS(avg_pool2d(Tensor::zeros({1, 1, 1, 4})), ShapeError);
}

TEST_CASE("linear: identity, dot product, zero weight") {
  Tensor eye({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor x({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
  auto y = linear(x, eye, Tensor::zeros({2}));
  for (size_t i = 0; i < 6; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  Tensor x2({1, 2}, std::vector<float>{1, 1});
  Tensor w({1, 2}, std::vector<float>{1, 1});
  Tensor b({1}, std::vector<float>{1});
  CHECK(linear(x2, w, b).item() == doctest::Approx(3.0f));

  auto zw = Tensor::zeros({3, 2});
  Tensor bb({3}, std::vector<float>{4, 5, 6});
  auto yz = linear(x, zw, bb);
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 3; ++c) CHECK(yz.data()[r * 3 + c] == doctest::Approx(bb.data()[c]));

  CHECK_THROWS_AS(linear(Tensor::zeros({2, 3}), w, b), ShapeError);
}

TEST_CASE("linear broadcasts over leading axes") {
  RngStream rng(5);
  auto x = rand_uniform<float>({2, 3, 4}, -1, 1, rng);
  auto w = rand_uniform<float>({5, 4}, -1, 1, rng);
  auto b = rand_uniform<float>({5}, -1, 1, rng);
  auto y = linear(x, w, b);
  CHECK(y.shape() == Shape{2, 3, 5});
}

TEST_CASE("log_softmax: uniform, stability, closed form") {
  Tensor x({2}, std::vector<float>{0, 0});
  auto y = log_softmax(x);
  CHECK(y.data()[0] == doctest::Approx(-std::log(2.0f)));
  CHECK(y.data()[1] == doctest::Approx(-std::log(2.0f)));

  Tensor big({2}, std::vector<float>{1000, 1000});
  auto yb = log_softmax(big);
  CHECK(yb.data()[0] == doctest::Approx(-std::log(2.0f)));
  CHECK(std::isfinite(yb.data()[1]));

  Tensor z({2}, std::vector<float>{0.0f, std::log(3.0f)});
  auto yz = log_softmax(z);
  CHECK(yz.data()[0] == doctest::Approx(std::log(0.25f)));
  CHECK(yz.data()[1] == doctest::Approx(std::log(0.75f)));
}

TEST_CASE("log_softmax properties: normalization, argmax, shift invariance") {
  RngStream rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    size_t m = 1 + rng.below(12);
    auto x = rand_uniform<float>({3, m}, -5, 5, rng);
    auto y = log_softmax(x);
    for (size_t r = 0; r < 3; ++r) {
      double s = 0;
      size_t amx = 0, amy = 0;
      for (size_t j = 0; j < m; ++j) {
        s += std::exp(static_cast<double>(y.data()[r * m + j]));
        if (x.data()[r * m + j] > x.data()[r * m + amx]) amx = j;
        if (y.data()[r * m + j] > y.data()[r * m + amy]) amy = j;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-6);
      CHECK(amx == amy);
    }
    float c = static_cast<float>(rng.uniform(-100, 100));
    auto xs = Tensor(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
    for (auto& v : xs.mutable_data()) v += c;
    auto ys = log_softmax(xs);
    for (size_t i = 0; i < y.size(); ++i)
      CHECK(ys.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-4));
  }
}

TEST_CASE("multi-head attention: single position gets weight 1") {
  RngStream rng(11);
  ParamRegistry<float> reg;
  MultiHeadAttention<float> mha(128, 4, rng, reg, "mha");
  mha.set_capture_weights(true);
  auto q = rand_uniform<float>({1, 1, 128}, -1, 1, rng);
  auto out = mha.forward(q, q, q, AttnMask::none());
  CHECK(out.shape() == Shape{1, 1, 128});
  for (float w : mha.last_weights()) CHECK(w == doctest::Approx(1.0f));
}

TEST_CASE("multi-head attention: causal row 0 ignores later positions") {
  RngStream rng(13);
  ParamRegistry<float> reg;
  MultiHeadAttention<float> mha(64, 4, rng, reg, "mha");
  auto x = rand_uniform<float>({1, 3, 64}, -1, 1, rng);
  auto base = mha.forward(x, x, x, AttnMask::causal());
  auto x2 = Tensor(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  for (size_t j = 64; j < 3 * 64; ++j) x2.mutable_data()[j] += 0.37f;  // perturb rows 1..2
  auto pert = mha.forward(x2, x2, x2, AttnMask::causal());
  for (size_t j = 0; j < 64; ++j) CHECK(base.data()[j] == pert.data()[j]);
}

TEST_CASE("multi-head attention: uniform queries/keys give uniform weights") {
  RngStream rng(17);
  ParamRegistry<float> reg;
  MultiHeadAttention<float> mha(32, 4, rng, reg, "mha");
  mha.set_capture_weights(true);
  size_t L = 5;
  std::vector<float> rep;
  for (size_t i = 0; i < L; ++i)
    for (size_t j = 0; j < 32; ++j) rep.push_back(0.1f * (j % 7) - 0.2f);
  Tensor x({1, L, 32}, rep);
  mha.forward(x, x, x, AttnMask::none());
  for (float w : mha.last_weights()) CHECK(w == doctest::Approx(1.0f / L).epsilon(1e-4));
}

TEST_CASE("multi-head attention: width must divide across heads") {
  RngStream rng(19);
  ParamRegistry<float> reg;
  CHECK_THROWS_AS(MultiHeadAttention<float>(30, 4, rng, reg, "mha"), ConfigError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamRegistry<float> reg;
  auto p = reg.add_param("p", Tensor({3}, std::vector<float>{1, 2, 3}));
  AdamOptimizer<float> opt(reg);
  p.grad_buffer();  // zeros
  opt.step(0.1f);
  CHECK(opt.step_count() == 1);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[1] == 2.0f);
  CHECK(p.data()[2] == 3.0f);
}

TEST_CASE("adam: first step follows the bias-corrected update formula") {
  // at t=1, m_hat = g and v_hat = g^2, so delta = -lr * g / (|g| + eps)
  ParamRegistry<float> reg;
  auto p = reg.add_param("p", Tensor({2}, std::vector<float>{0.5f, -0.25f}));
  AdamOptimizer<float> opt(reg);
  auto g = p.grad_buffer();
  g[0] = 0.3f;
  g[1] = -0.7f;
  float lr = 0.01f;
  opt.step(lr);
  float eps = 1e-8f;
  CHECK(p.data()[0] ==
        doctest::Approx(0.5f - lr * 0.3f / (std::fabs(0.3f) + eps)).epsilon(1e-5));
  CHECK(p.data()[1] ==
        doctest::Approx(-0.25f + lr * 0.7f / (std::fabs(0.7f) + eps)).epsilon(1e-5));
}

TEST_CASE("adam: constant gradient moves parameters monotonically against it") {
  ParamRegistry<float> reg;
  auto p = reg.add_param("p", Tensor({1}, std::vector<float>{1.0f}));
  AdamOptimizer<float> opt(reg);
  float prev = p.data()[0];
  for (int i = 0; i < 2; ++i) {
    p.zero_grad();
    p.grad_buffer()[0] = 2.0f;
    opt.step(0.05f);
    CHECK(p.data()[0] < prev);
    prev = p.data()[0];
  }
}

TEST_CASE("adam: non-finite gradient aborts the step") {
  ParamRegistry<float> reg;
  auto p = reg.add_param("p", Tensor({1}, std::vector<float>{1.0f}));
  AdamOptimizer<float> opt(reg);
  p.grad_buffer()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(0.1f), NumericError);
  CHECK(p.data()[0] == 1.0f);
  CHECK(opt.step_count() == 0);
}

TEST_CASE("adam skips frozen parameters") {
  ParamRegistry<float> reg;
  auto p = reg.add_param("p", Tensor({1}, std::vector<float>{1.0f}));
  auto f = reg.add_param("f", Tensor({1}, std::vector<float>{2.0f}));
  f.set_requires_grad(false);
  AdamOptimizer<float> opt(reg);
  CHECK(opt.slots().size() == 1);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2x") {
  Tensor x({2, 2}, std::vector<float>{1, -2, 3, 0.5f});
  x.set_requires_grad(true);
  {
    GradientTape tape;
    auto loss = sum_all(x);
    tape.backward(loss);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  x.zero_grad();
  Tensor x2({2}, std::vector<float>{1, 2});
  x2.set_requires_grad(true);
  {
    GradientTape tape;
    auto loss = sum_all(mul(x2, x2));
    tape.backward(loss);
    CHECK(x2.grad()[0] == doctest::Approx(2.0f));
    CHECK(x2.grad()[1] == doctest::Approx(4.0f));
  }
}

TEST_CASE("backward: gradients accumulate across multiple uses") {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  GradientTape tape;
  auto loss = sum_all(add(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0f);
  CHECK(x.grad()[1] == 2.0f);
}

TEST_CASE("backward: second call on a consumed tape is a stale-tape error") {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  GradientTape tape;
  auto loss = sum_all(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward rejects losses from another tape") {
  Tensor x({1}, std::vector<float>{2});
  x.set_requires_grad(true);
  Tensor stale_loss;
  {
    GradientTape t1;
    stale_loss = sum_all(x);
  }
  GradientTape t2;
  CHECK_THROWS_AS(t2.backward(stale_loss), Error);
}

TEST_CASE("no tape means pure forward, no graph retained") {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  auto y = relu(x);
  CHECK(y.node()->tape_id == 0);
}

TEST_CASE("nll_masked: hand value and pad exclusion") {
  // two positions, one padded; log-probs picked directly
  Tensor lp({1, 2, 3},
            std::vector<float>{std::log(0.5f), std::log(0.25f), std::log(0.25f),  //
                               std::log(0.2f), std::log(0.3f), std::log(0.5f)});
  std::vector<int32_t> targets{1, 0};  // second is pad
  auto loss = nll_masked(lp, targets, 0);
  CHECK(loss.item() == doctest::Approx(-std::log(0.25f)));
  std::vector<int32_t> all_pad{0, 0};
  CHECK_THROWS_AS(nll_masked(lp, all_pad, 0), NumericError);
}

TEST_CASE("determinism: same seed reproduces init and dropout bit-exactly") {
  RngStream a(123), b(123);
  auto ta = rand_uniform<float>({64}, -1, 1, a);
  auto tb = rand_uniform<float>({64}, -1, 1, b);
  for (size_t i = 0; i < 64; ++i) CHECK(ta.data()[i] == tb.data()[i]);

  RngStream da(9), db(9);
  auto x = rand_uniform<float>({100}, -1, 1, a);
  auto d1 = dropout(x, 0.3, da);
  auto d2 = dropout(x, 0.3, db);
  for (size_t i = 0; i < 100; ++i) CHECK(d1.data()[i] == d2.data()[i]);
}

TEST_CASE("shape contracts hold for random valid shapes") {
  RngStream rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    size_t n = 1 + rng.below(3), c = 1 + rng.below(4), h = 2 + rng.below(9),
           w = 2 + rng.below(9), c2 = 1 + rng.below(5);
    auto x = rand_uniform<float>({n, c, h, w}, -1, 1, rng);
    auto k = rand_uniform<float>({c2, c, 3, 3}, -1, 1, rng);
    auto y = conv2d(x, k, Tensor::zeros({c2}));
    CHECK(y.shape() == Shape{n, c2, h, w});
    auto p = avg_pool2d(x);
    CHECK(p.shape() == Shape{n, c, h / 2, w / 2});
    size_t din = 1 + rng.below(6), dout = 1 + rng.below(6);
    auto lx = rand_uniform<float>({n, c, din}, -1, 1, rng);
    auto lw = rand_uniform<float>({dout, din}, -1, 1, rng);
    auto ly = linear(lx, lw, Tensor::zeros({dout}));
    CHECK(ly.shape() == Shape{n, c, dout});
  }
}
