#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fdy/augment.hpp"
#include "test_util.hpp"

using namespace fdy;

namespace {

LabeledBatch make_batch(Index B, Index T, Index F, Index C, std::uint64_t seed) {
  LabeledBatch b;
  b.features = test::random_tensor<float>(Shape4{B, 1, T, F}, seed);
  b.strong = Tensor4<float>(Shape4{B, C, T, 1});
  b.weak = Tensor4<float>(Shape4{B, C, 1, 1});
  Rng rng(seed + 1);
  for (Index i = 0; i < b.strong.size(); ++i) b.strong[i] = rng.uniform() < 0.3f ? 1.0f : 0.0f;
  for (Index i = 0; i < b.weak.size(); ++i) b.weak[i] = rng.uniform() < 0.5f ? 1.0f : 0.0f;
  b.has_strong.assign(static_cast<std::size_t>(B), true);
  b.has_weak.assign(static_cast<std::size_t>(B), true);
  return b;
}

bool same(const LabeledBatch& a, const LabeledBatch& b) {
  return a.features.shape() == b.features.shape() && max_abs_diff(a.features, b.features) == 0.0f &&
         max_abs_diff(a.strong, b.strong) == 0.0f && max_abs_diff(a.weak, b.weak) == 0.0f;
}

float clip_mean(const Tensor4<float>& t, Index b) {
  const Index per = t.size() / t.shape().b;
  return t.array().segment(b * per, per).mean();
}

}  // namespace

TEST_CASE("frame_shift") {
  const LabeledBatch b = make_batch(3, 40, 6, 2, 1);
  CHECK(same(frame_shift(b, std::vector<Index>{0, 0, 0}), b));
  CHECK(same(frame_shift(frame_shift(b, std::vector<Index>{5, -7, 13}), std::vector<Index>{-5, 7, -13}), b));

  LabeledBatch ev = make_batch(1, 40, 6, 2, 2);
  ev.strong.array().setZero();
  for (Index t = 10; t < 20; ++t) ev.strong(0, 1, t, 0) = 1.0f;
  const LabeledBatch shifted = frame_shift(ev, std::vector<Index>{5});
  for (Index t = 0; t < 40; ++t) CHECK(shifted.strong(0, 1, t, 0) == ((t >= 15 && t < 25) ? 1.0f : 0.0f));
  CHECK(shifted.features(0, 0, 15, 3) == ev.features(0, 0, 10, 3));
  CHECK(max_abs_diff(shifted.weak, ev.weak) == 0.0f);

  Rng r1(9), r2(9);
  CHECK(same(frame_shift(b, 8, r1), frame_shift(b, 8, r2)));
  Rng r3(9);
  CHECK_THROWS_AS(frame_shift(b, 40, r3), ConfigError);
}

TEST_CASE("mixup") {
  const LabeledBatch b = make_batch(4, 12, 5, 2, 3);
  const std::vector<Index> partner{1, 0, 3, 2};
  CHECK(same(mixup(b, partner, 1.0), b));

  LabeledBatch pair = make_batch(2, 12, 5, 2, 4);
  pair.weak(0, 0, 0, 0) = 1.0f;
  pair.weak(0, 1, 0, 0) = 0.0f;
  pair.weak(1, 0, 0, 0) = 0.0f;
  pair.weak(1, 1, 0, 0) = 1.0f;
  const LabeledBatch m = mixup(pair, std::vector<Index>{1, 0}, 0.5);
  CHECK(m.weak(0, 0, 0, 0) == 0.5f);
  CHECK(m.weak(0, 1, 0, 0) == 0.5f);

  for (double lambda : {0.1, 0.37, 0.8}) {
    const LabeledBatch mixed = mixup(b, partner, lambda);
    for (Index i = 0; i < 4; ++i)
      CHECK(std::abs(clip_mean(mixed.features, i) -
                     (lambda * clip_mean(b.features, i) + (1 - lambda) * clip_mean(b.features, partner[static_cast<std::size_t>(i)]))) <
            1e-6);
  }

  Rng r(5);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledBatch tiny = mixup(b, 1e-4, r);
    for (Index i = 0; i < 4; ++i) {
      bool matches = false;
      for (Index j = 0; j < 4; ++j) {
        const Index per = b.features.size() / 4;
        const float d = (tiny.features.array().segment(i * per, per) - b.features.array().segment(j * per, per)).abs().maxCoeff();
        matches = matches || d < 1e-6f;
      }
      CHECK(matches);
    }
  }
  Rng r1(6), r2(6);
  CHECK(same(mixup(b, 0.2, r1), mixup(b, 0.2, r2)));
  Rng r3(1);
  CHECK_THROWS_AS(mixup(b, 0.0, r3), ConfigError);
  CHECK_THROWS_AS(mixup(make_batch(1, 12, 5, 2, 1), 0.2, r3), ConfigError);
}

TEST_CASE("time_mask") {
  const LabeledBatch b = make_batch(2, 30, 4, 3, 7);
  CHECK(same(time_mask(b, std::vector<Span>{{3, 3}, {0, 0}}), b));
  const LabeledBatch full = time_mask(b, std::vector<Span>{{0, 30}, {0, 30}});
  CHECK((full.features.array() == 0.0f).all());
  CHECK((full.strong.array() == 0.0f).all());
  const LabeledBatch part = time_mask(b, std::vector<Span>{{5, 9}, {20, 30}});
  for (Index t = 0; t < 30; ++t)
    for (Index f = 0; f < 4; ++f) {
      const bool inside = t >= 5 && t < 9;
      if (inside) CHECK(part.features(0, 0, t, f) == 0.0f);
      else CHECK(part.features(0, 0, t, f) == b.features(0, 0, t, f));
    }
  for (Index c = 0; c < 3; ++c) CHECK(part.strong(0, c, 6, 0) == 0.0f);
  CHECK(max_abs_diff(part.weak, b.weak) == 0.0f);
  Rng r(3);
  CHECK(same(time_mask(b, 0, r), b));
  Rng r1(2), r2(2);
  CHECK(same(time_mask(b, 10, r1), time_mask(b, 10, r2)));
  CHECK_THROWS_AS(time_mask(b, 31, r), ConfigError);
}

TEST_CASE("filter_augment") {
  const LabeledBatch b = make_batch(2, 10, 16, 2, 8);
  Rng r(4);
  CHECK(same(filter_augment(b, 2, 5, 0.0, r), b));

  const double g = 4.5;
  const auto single = filter_gain_curve(16, {0, 16}, {g});
  const LabeledBatch scaled = filter_augment(b, std::vector<std::vector<double>>{single, single});
  const float factor = static_cast<float>(std::pow(10.0, g / 20.0));
  CHECK((scaled.features.array() - factor * b.features.array()).abs().maxCoeff() < 1e-6f);

  const auto two = filter_gain_curve(16, {0, 7, 16}, {g, g});
  for (std::size_t i = 0; i < 16; ++i) CHECK(two[i] == doctest::Approx(single[i]));

  const auto ramp = filter_gain_curve(16, {0, 4, 12, 16}, {-6.0, 0.0, 6.0});
  CHECK(ramp[0] == -6.0);
  CHECK(ramp[15] == 6.0);
  for (std::size_t i = 1; i < 16; ++i) CHECK(ramp[i] >= ramp[i - 1]);
  CHECK(max_abs_diff(scaled.strong, b.strong) == 0.0f);

  for (int trial = 0; trial < 20; ++trial) {
    const LabeledBatch a = filter_augment(b, 2, 5, 6.0, r);
    CHECK(a.features.shape() == b.features.shape());
    const float lo = static_cast<float>(std::pow(10.0, -6.0 / 20.0)) - 1e-5f;
    const float hi = static_cast<float>(std::pow(10.0, 6.0 / 20.0)) + 1e-5f;
    const auto ratio = (a.features.array() / b.features.array()).eval();
    CHECK((ratio >= lo).all());
    CHECK((ratio <= hi).all());
  }
  Rng r1(11), r2(11);
  CHECK(same(filter_augment(b, 2, 5, 6.0, r1), filter_augment(b, 2, 5, 6.0, r2)));
  CHECK_THROWS_AS(filter_augment(b, 0, 5, 6.0, r), ConfigError);
}
