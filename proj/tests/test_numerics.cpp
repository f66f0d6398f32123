#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "fdy/gradcheck.hpp"
#include "fdy/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fdy;
using fdy::test::random_tensor;
using V = Var<double>;
using T = Tensor4<double>;
using Fn = std::function<V(const std::vector<V>&)>;

namespace {

V leaf(const T& t) { return V::leaf(t, true); }
V constant(const T& t) { return V::constant(t); }

// Rejects kinks etc.: all differentiable ops must pass at 1e-4.
double check(const Fn& f, const std::vector<T>& points) {
  return finite_diff_check<double>(f, points, 1e-5).max_rel_error;
}

}  // namespace

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 identity kernel") {
    const T x = random_tensor(Shape4{2, 1, 4, 5}, 1);
    const T w(Shape4{1, 1, 1, 1}, 1.0);
    const V y = conv2d(constant(x), constant(w), constant(T(Shape4{1, 1, 1, 1})));
    CHECK(max_abs_diff(y.value(), x) == 0.0);
  }
  SUBCASE("constant input and all-ones 3x3 kernel") {
    const double c = 1.75;
    const V y = conv2d(constant(T(Shape4{1, 1, 5, 5}, c)), constant(T(Shape4{1, 1, 3, 3}, 1.0)));
    CHECK(y.value()(0, 0, 2, 2) == doctest::Approx(9 * c));
    CHECK(y.value()(0, 0, 0, 0) == doctest::Approx(4 * c));
  }
  SUBCASE("frequency-dilated row") {
    const T x(Shape4{1, 1, 1, 5}, {1, 0, 0, 0, 1});
    const T w(Shape4{1, 1, 1, 3}, {1, 1, 1});
    Conv2dOptions opt;
    opt.dilation = {1, 2};
    const V y = conv2d(constant(x), constant(w), opt);
    const T expected = oracle::conv2d_same<double>(x, w, {}, 1, 2);
    CHECK(expected(0, 0, 0, 2) == 2.0);
    CHECK(y.value()(0, 0, 0, 2) == 2.0);
    CHECK(max_abs_diff(y.value(), expected) == 0.0);
  }
  SUBCASE("matches the nested-loop oracle on random data") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const T x = random_tensor(Shape4{2, 3, 6, 7}, seed);
      const T w = random_tensor(Shape4{4, 3, 3, 3}, seed + 100);
      const T b = random_tensor(Shape4{1, 1, 1, 4}, seed + 200);
      for (Index d : {1, 2, 3}) {
        Conv2dOptions opt;
        opt.dilation = {1, d};
        const V y = conv2d(constant(x), constant(w), constant(b), opt);
        const T ref = oracle::conv2d_same<double>(x, w, {b[0], b[1], b[2], b[3]}, 1, d);
        CHECK(max_abs_diff(y.value(), ref) < 1e-12);
      }
    }
  }
  SUBCASE("strided output follows the floor formula") {
    Conv2dOptions opt;
    opt.same = false;
    opt.stride = {2, 2};
    const V y = conv2d(constant(T(Shape4{1, 1, 7, 8})), constant(T(Shape4{1, 1, 3, 3})), opt);
    CHECK(y.shape() == Shape4{1, 1, 3, 3});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(conv2d(constant(T(Shape4{1, 2, 4, 4})), constant(T(Shape4{1, 3, 3, 3}))), ShapeError);
    Conv2dOptions opt;
    opt.same = false;
    CHECK_THROWS_AS(conv2d(constant(T(Shape4{1, 1, 2, 2})), constant(T(Shape4{1, 1, 3, 3})), opt), ShapeError);
    try {
      conv2d(constant(T(Shape4{1, 2, 4, 4})), constant(T(Shape4{1, 3, 3, 3})));
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1,3,3,3]") != std::string::npos);
      CHECK(msg.find("[1,2,4,4]") != std::string::npos);
    }
  }
}

TEST_CASE("conv2d is linear in its kernel") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const T x = random_tensor(Shape4{2, 2, 5, 6}, seed);
    const T w1 = random_tensor(Shape4{3, 2, 3, 3}, seed + 1);
    const T w2 = random_tensor(Shape4{3, 2, 3, 3}, seed + 2);
    const double a = 0.7, b = -1.3;
    T w(w1.shape());
    w.array() = a * w1.array() + b * w2.array();
    const V lhs = conv2d(constant(x), constant(w));
    T rhs(lhs.shape());
    rhs.array() = a * conv2d(constant(x), constant(w1)).value().array() +
                  b * conv2d(constant(x), constant(w2)).value().array();
    CHECK(max_abs_diff(lhs.value(), rhs) < 1e-10);
  }
}

TEST_CASE("conv2d is translation-equivariant along frequency away from the border") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Index F = 16;
    T x(Shape4{1, 2, 4, F});
    T shifted(x.shape());
    Rng rng(seed);
    for (Index c = 0; c < 2; ++c)
      for (Index t = 0; t < 4; ++t)
        for (Index f = 4; f < 10; ++f) {
          x(0, c, t, f) = rng.normal();
          shifted(0, c, t, f + 1) = x(0, c, t, f);
        }
    const T w = random_tensor(Shape4{3, 2, 3, 3}, seed + 7);
    const V y = conv2d(constant(x), constant(w));
    const V ys = conv2d(constant(shifted), constant(w));
    double dev = 0.0;
    for (Index c = 0; c < 3; ++c)
      for (Index t = 0; t < 4; ++t)
        for (Index f = 1; f < F - 2; ++f) dev = std::max(dev, std::abs(ys.value()(0, c, t, f + 1) - y.value()(0, c, t, f)));
    CHECK(dev < 1e-10);
  }
}

TEST_CASE("avg_pool2d") {
  const T x = random_tensor(Shape4{2, 3, 4, 6}, 3);
  CHECK(max_abs_diff(avg_pool2d(constant(x), 1, 1).value(), x) == 0.0);
  const V p = avg_pool2d(constant(T(Shape4{1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
  CHECK(p.value()[0] == 2.5);
  const V q = avg_pool2d(constant(T(Shape4{1, 1, 1, 2}, {1, 3})), 1, 2);
  CHECK(q.shape() == Shape4{1, 1, 1, 1});
  CHECK(q.value()[0] == 2.0);
  CHECK_THROWS_AS(avg_pool2d(constant(x), 3, 1), ShapeError);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const T r = random_tensor(Shape4{2, 2, 8, 8}, seed);
    const V pooled = avg_pool2d(constant(r), 2, 4);
    for (Index b = 0; b < 2; ++b)
      for (Index c = 0; c < 2; ++c) {
        double m_in = 0, m_out = 0;
        for (Index t = 0; t < 8; ++t)
          for (Index f = 0; f < 8; ++f) m_in += r(b, c, t, f) / 64;
        for (Index t = 0; t < 4; ++t)
          for (Index f = 0; f < 2; ++f) m_out += pooled.value()(b, c, t, f) / 8;
        CHECK(std::abs(m_in - m_out) < 1e-12);
      }
  }
}

TEST_CASE("batch_norm") {
  SUBCASE("constant input normalizes to beta") {
    const T x(Shape4{2, 2, 3, 4}, 3.0);
    BatchNormState st(2);
    const V y = batch_norm(constant(x), constant(T(Shape4{1, 1, 1, 2}, 1.0)), constant(T(Shape4{1, 1, 1, 2})), st, true);
    CHECK(y.value().array().abs().maxCoeff() == 0.0);
    BatchNormState st2(2);
    const V y5 = batch_norm(constant(x), constant(T(Shape4{1, 1, 1, 2}, 1.0)), constant(T(Shape4{1, 1, 1, 2}, 5.0)), st2, true);
    CHECK((y5.value().array() - 5.0).abs().maxCoeff() == 0.0);
  }
  SUBCASE("already standardized input passes through") {
    T x = random_tensor(Shape4{4, 2, 8, 8}, 11);
    for (Index c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      const double n = 4 * 64;
      for (Index b = 0; b < 4; ++b)
        for (Index i = 0; i < 64; ++i) m += x[(b * 2 + c) * 64 + i] / n;
      for (Index b = 0; b < 4; ++b)
        for (Index i = 0; i < 64; ++i) v += std::pow(x[(b * 2 + c) * 64 + i] - m, 2) / n;
      for (Index b = 0; b < 4; ++b)
        for (Index i = 0; i < 64; ++i) x[(b * 2 + c) * 64 + i] = (x[(b * 2 + c) * 64 + i] - m) / std::sqrt(v);
    }
    BatchNormState st(2);
    const V y = batch_norm(constant(x), constant(T(Shape4{1, 1, 1, 2}, 1.0)), constant(T(Shape4{1, 1, 1, 2})), st, true);
    CHECK(max_abs_diff(y.value(), x) < 1e-3);
  }
  SUBCASE("running statistics and eval mode") {
    const T x = random_tensor(Shape4{3, 1, 4, 4}, 5, 2.0);
    BatchNormState st(1);
    batch_norm(constant(x), constant(T(Shape4{1, 1, 1, 1}, 1.0)), constant(T(Shape4{1, 1, 1, 1})), st, true);
    const double m = x.array().mean();
    const double var_u = (x.array() - m).square().sum() / (x.size() - 1);
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * m));
    CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * var_u));
    const V e = batch_norm(constant(x), constant(T(Shape4{1, 1, 1, 1}, 2.0)), constant(T(Shape4{1, 1, 1, 1}, 1.0)), st, false);
    CHECK(e.value()[3] == doctest::Approx(2.0 * (x[3] - st.running_mean[0]) / std::sqrt(st.running_var[0] + 1e-5) + 1.0));
  }
}

TEST_CASE("activations") {
  const V x = constant(T(Shape4{1, 1, 1, 3}, {-1.0, 2.0, 0.0}));
  const V r = relu(x);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 2.0);
  CHECK(sigmoid(x).value()[2] == 0.5);

  const T g = random_tensor(Shape4{2, 3, 4, 5}, 9);
  const V gated = context_gate(constant(g), constant(T(Shape4{3, 3, 1, 1})), constant(T(Shape4{1, 1, 1, 3})));
  T half(g.shape());
  half.array() = 0.5 * g.array();
  CHECK(max_abs_diff(gated.value(), half) < 1e-15);
}

TEST_CASE("softmax_temperature") {
  const V a = softmax(constant(T(Shape4{1, 2, 1, 1}, {0.0, 0.0})), 1, 1.0);
  CHECK(a.value()[0] == 0.5);
  CHECK(a.value()[1] == 0.5);
  const V b = softmax(constant(T(Shape4{1, 2, 1, 1}, {std::log(2.0), 0.0})), 1, 1.0);
  CHECK(b.value()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(b.value()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const T logits = random_tensor(Shape4{3, 4, 1, 5}, 2, 10.0);
  const V hot = softmax(constant(logits), 1, 1e9);
  CHECK((hot.value().array() - 0.25).abs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(softmax(constant(logits), 1, 0.0), ConfigError);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const T l = random_tensor(Shape4{2, 4, 3, 5}, seed, 3.0);
    T shifted = l;
    shifted.array() += 17.5;
    const V s = softmax(constant(l), 1, 31.0);
    const V s2 = softmax(constant(shifted), 1, 31.0);
    for (Index bb = 0; bb < 2; ++bb)
      for (Index t = 0; t < 3; ++t)
        for (Index f = 0; f < 5; ++f) {
          double total = 0;
          for (Index k = 0; k < 4; ++k) total += s.value()(bb, k, t, f);
          CHECK(std::abs(total - 1.0) < 1e-12);
        }
    CHECK(max_abs_diff(s.value(), s2.value()) < 1e-12);
  }
}

TEST_CASE("reverse_sweep") {
  SUBCASE("sum of squares") {
    const T x0 = random_tensor(Shape4{1, 2, 3, 4}, 4);
    V x = leaf(x0);
    reverse_sweep(sum(mul(x, x)));
    T expected(x0.shape());
    expected.array() = 2.0 * x0.array();
    CHECK(max_abs_diff(x.grad(), expected) < 1e-15);
  }
  SUBCASE("softmax followed by sum has zero gradient") {
    V x = leaf(random_tensor(Shape4{2, 4, 1, 3}, 5));
    reverse_sweep(sum(softmax(x, 1, 1.0)));
    CHECK(x.grad().array().abs().maxCoeff() < 1e-15);
  }
  SUBCASE("non-scalar loss is rejected") {
    V x = leaf(T(Shape4{1, 1, 1, 2}));
    CHECK_THROWS_AS(reverse_sweep(x), ShapeError);
  }
  SUBCASE("gradients are reset at the start of each sweep") {
    const T x0 = random_tensor(Shape4{1, 1, 2, 2}, 6);
    V x = leaf(x0);
    reverse_sweep(sum(mul(x, x)));
    reverse_sweep(sum(mul(x, x)));
    CHECK(x.grad()[1] == doctest::Approx(2 * x0[1]));
  }
  SUBCASE("shared subexpressions accumulate") {
    V x = leaf(T(Shape4{1, 1, 1, 1}, 3.0));
    const V y = mul(x, x);
    reverse_sweep(sum(add(y, y)));
    CHECK(x.grad()[0] == doctest::Approx(12.0));
  }
  SUBCASE("conv2d then sum against central differences") {
    const T x0 = random_tensor(Shape4{1, 2, 4, 5}, 7);
    const T w0 = random_tensor(Shape4{2, 2, 3, 3}, 8);
    Fn f = [](const std::vector<V>& v) { return sum(conv2d(v[0], v[1])); };
    CHECK(check(f, {x0, w0}) < 1e-4);
  }
}

TEST_CASE("finite_diff_check") {
  const T p = random_tensor(Shape4{1, 1, 2, 3}, 12);
  const T w = random_tensor(Shape4{1, 1, 2, 3}, 13);
  std::function<V(const V&)> linear_f = [&w](const V& x) { return weighted_sum(x, w); };
  CHECK(finite_diff_check<double>(linear_f, p, 1e-5) < 1e-10);
  std::function<V(const V&)> quadratic = [](const V& x) { return sum(mul(x, x)); };
  CHECK(finite_diff_check<double>(quadratic, p, 1e-5) < 1e-6);
  std::function<V(const V&)> constant_f = [](const V&) { return V::constant(T(Shape4{1, 1, 1, 1}, 4.0)); };
  CHECK(finite_diff_check<double>(constant_f, p, 1e-5) == 0.0);
}

TEST_CASE("every differentiable op passes the gradient check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    const T proj4 = random_tensor(Shape4{2, 3, 4, 6}, seed + 1000);
    auto reduce = [](const V& y, std::uint64_t s) { return weighted_sum(y, random_tensor(y.shape(), s + 5000)); };

    const T x = random_tensor(Shape4{2, 3, 4, 6}, seed);
    const T y = random_tensor(Shape4{2, 3, 4, 6}, seed + 1);
    CHECK(check([&](const std::vector<V>& v) { return reduce(add(v[0], v[1]), seed); }, {x, y}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(sub(v[0], v[1]), seed); }, {x, y}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(mul(v[0], v[1]), seed); }, {x, y}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(scale(v[0], 2.5), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(relu(v[0]), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(sigmoid(v[0]), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(tanh(v[0]), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(softmax(v[0], 1, 2.0), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(softmax(v[0], 2, 0.5), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(avg_pool2d(v[0], 2, 3), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(mean_axis(v[0], 2), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(sum_axis(v[0], 3), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(slice(v[0], 1, 1, 2), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(concat<double>({v[0], v[1]}, 1), seed); }, {x, y}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(permute(v[0], {0, 3, 2, 1}), seed); }, {x}) < 1e-4);
    CHECK(check([&](const std::vector<V>& v) { return reduce(repeat_axis(v[0], 2, 3), seed); }, {x}) < 1e-4);
    const T bcast = random_tensor(Shape4{2, 1, 1, 6}, seed + 2);
    CHECK(check([&](const std::vector<V>& v) { return reduce(mul_broadcast(v[0], v[1]), seed); }, {x, bcast}) < 1e-4);
    const T bias = random_tensor(Shape4{1, 1, 1, 3}, seed + 3);
    CHECK(check([&](const std::vector<V>& v) { return reduce(add_channel_bias(v[0], v[1]), seed); }, {x, bias}) < 1e-4);

    const T w = random_tensor(Shape4{4, 3, 3, 3}, seed + 4, 0.5);
    const T wb = random_tensor(Shape4{1, 1, 1, 4}, seed + 5);
    for (Index d : {1, 2}) {
      Conv2dOptions opt;
      opt.dilation = {1, d};
      CHECK(check([&](const std::vector<V>& v) { return reduce(conv2d(v[0], v[1], v[2], opt), seed); }, {x, w, wb}) < 1e-4);
    }
    Conv2dOptions strided;
    strided.same = false;
    strided.stride = {2, 1};
    strided.padding = {1, 0, 1, 1};
    CHECK(check([&](const std::vector<V>& v) { return reduce(conv2d(v[0], v[1], strided), seed); }, {x, w}) < 1e-4);

    const T gamma = random_tensor(Shape4{1, 1, 1, 3}, seed + 6);
    const T beta = random_tensor(Shape4{1, 1, 1, 3}, seed + 7);
    for (bool train : {true, false}) {
      BatchNormState st(3);
      st.running_mean = Eigen::ArrayXd::Constant(3, 0.2);
      st.running_var = Eigen::ArrayXd::Constant(3, 1.5);
      CHECK(check([&](const std::vector<V>& v) { return reduce(batch_norm(v[0], v[1], v[2], st, train), seed); },
                  {x, gamma, beta}) < 1e-4);
    }
    const T gate_w = random_tensor(Shape4{3, 3, 1, 1}, seed + 8);
    CHECK(check([&](const std::vector<V>& v) { return reduce(context_gate(v[0], v[1], v[2]), seed); }, {x, gate_w, bias}) < 1e-4);

    const T seq = random_tensor(Shape4{2, 1, 5, 4}, seed + 9);
    const T lw = random_tensor(Shape4{1, 1, 3, 4}, seed + 10);
    const T lb = random_tensor(Shape4{1, 1, 1, 3}, seed + 11);
    CHECK(check([&](const std::vector<V>& v) { return reduce(linear(v[0], v[1], v[2]), seed); }, {seq, lw, lb}) < 1e-4);
    const Index H = 3;
    const T wih = random_tensor(Shape4{1, 1, 3 * H, 4}, seed + 12, 0.6);
    const T whh = random_tensor(Shape4{1, 1, 3 * H, H}, seed + 13, 0.6);
    const T bih = random_tensor(Shape4{1, 1, 1, 3 * H}, seed + 14, 0.3);
    const T bhh = random_tensor(Shape4{1, 1, 1, 3 * H}, seed + 15, 0.3);
    for (bool rev : {false, true})
      CHECK(check([&](const std::vector<V>& v) { return reduce(gru(v[0], v[1], v[2], v[3], v[4], rev), seed); },
                  {seq, wih, whh, bih, bhh}) < 1e-4);

    Rng prng(seed);
    T probs(Shape4{2, 3, 4, 1});
    T target(probs.shape());
    for (Index i = 0; i < probs.size(); ++i) {
      probs[i] = prng.uniform(0.05, 0.95);
      target[i] = prng.uniform() < 0.5 ? 0.0 : 1.0;
    }
    CHECK(check([&](const std::vector<V>& v) { return binary_cross_entropy(v[0], target); }, {probs}) < 1e-4);
    (void)proj4;
  }
}

TEST_CASE("gru matches a step-by-step scalar reference") {
  const Index B = 2, Tn = 4, D = 3, H = 2;
  const T seq = random_tensor(Shape4{B, 1, Tn, D}, 21);
  const T wih = random_tensor(Shape4{1, 1, 3 * H, D}, 22, 0.5);
  const T whh = random_tensor(Shape4{1, 1, 3 * H, H}, 23, 0.5);
  const T bih = random_tensor(Shape4{1, 1, 1, 3 * H}, 24, 0.5);
  const T bhh = random_tensor(Shape4{1, 1, 1, 3 * H}, 25, 0.5);
  const V out = gru(constant(seq), constant(wih), constant(whh), constant(bih), constant(bhh), false);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Index b = 0; b < B; ++b) {
    std::vector<double> h(H, 0.0);
    for (Index t = 0; t < Tn; ++t) {
      std::vector<double> gi(3 * H), gh(3 * H);
      for (Index g = 0; g < 3 * H; ++g) {
        gi[g] = bih[g];
        gh[g] = bhh[g];
        for (Index d = 0; d < D; ++d) gi[g] += wih[g * D + d] * seq(b, 0, t, d);
        for (Index k = 0; k < H; ++k) gh[g] += whh[g * H + k] * h[k];
      }
      std::vector<double> hn(H);
      for (Index k = 0; k < H; ++k) {
        const double r = sig(gi[k] + gh[k]);
        const double z = sig(gi[H + k] + gh[H + k]);
        const double n = std::tanh(gi[2 * H + k] + r * gh[2 * H + k]);
        hn[k] = (1 - z) * n + z * h[k];
      }
      h = hn;
      for (Index k = 0; k < H; ++k) CHECK(out.value()(b, 0, t, k) == doctest::Approx(h[k]).epsilon(1e-12));
    }
  }
}
