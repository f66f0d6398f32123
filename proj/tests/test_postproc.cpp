#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fdy/errors.hpp"
#include "fdy/postproc.hpp"
#include "fdy/rng.hpp"
#include "fdy/synth.hpp"
#include "oracles.hpp"

using namespace fdy;

namespace {

FramePosteriors one_class(const std::vector<double>& row, double hop = 0.064, const std::string& clip = "c") {
  FramePosteriors p;
  p.clip = clip;
  p.hop = hop;
  p.p.resize(1, static_cast<Index>(row.size()));
  for (std::size_t i = 0; i < row.size(); ++i) p.p(0, static_cast<Index>(i)) = row[i];
  return p;
}

std::vector<oracle::MicroEvent> to_micro(const EventList& events) {
  std::vector<oracle::MicroEvent> out;
  for (const auto& e : events) out.push_back({e.file, e.cls, e.onset, e.offset});
  return out;
}

PsdsParams params_with(int n_thresholds) {
  EvalConfig eval;
  eval.n_thresholds = n_thresholds;
  return PsdsParams::from(eval);
}

struct MicroSet {
  EventList gt;
  std::vector<EventList> dets;  // per threshold
  double hours;
};

Event random_event(Rng& rng, int n_clips, int n_classes) {
  Event e;
  e.file = "f" + std::to_string(rng.uniform_int(0, n_clips - 1));
  e.cls = static_cast<int>(rng.uniform_int(0, n_classes - 1));
  e.onset = std::round(rng.uniform(0.0, 8.0) * 100) / 100;
  e.offset = e.onset + 0.1 + std::round(rng.uniform(0.0, 2.0) * 100) / 100;
  return e;
}

MicroSet random_micro(std::uint64_t seed, int n_thresholds) {
  Rng rng(seed);
  MicroSet m;
  const int n_clips = static_cast<int>(rng.uniform_int(1, 5));
  const int n_gt = static_cast<int>(rng.uniform_int(1, 4));
  for (int i = 0; i < n_gt; ++i) m.gt.push_back(random_event(rng, n_clips, 2));
  m.hours = n_clips * 10.0 / 3600.0;
  for (int k = 0; k < n_thresholds; ++k) {
    EventList d;
    for (const auto& g : m.gt) {
      if (rng.uniform() < 0.6) {
        Event e = g;
        e.onset = std::max(0.0, g.onset + rng.uniform(-0.4, 0.4));
        e.offset = std::max(e.onset + 0.05, g.offset + rng.uniform(-0.4, 0.4));
        d.push_back(e);
      }
    }
    const int spurious = static_cast<int>(rng.uniform_int(0, 2));
    for (int i = 0; i < spurious; ++i) d.push_back(random_event(rng, n_clips, 2));
    m.dets.push_back(d);
  }
  return m;
}

double oracle_psds(const MicroSet& m, const PsdsParams& p, int n_classes) {
  std::vector<std::vector<oracle::MicroEvent>> dets;
  for (const auto& d : m.dets) dets.push_back(to_micro(d));
  return oracle::psds_reference(dets, to_micro(m.gt), n_classes, m.hours, p.dtc, p.gtc, p.alpha_st, p.e_max);
}

}  // namespace

TEST_CASE("median filter examples") {
  const std::vector<double> x{0.2, 0.9, 0.1, 0.5, 0.7};
  CHECK(median_filter_1d(x, 1) == x);
  CHECK(median_filter_1d({0, 1, 0}, 3) == std::vector<double>{0, 0, 0});
  CHECK(median_filter_1d({1, 1, 0, 1, 1}, 3) == std::vector<double>{1, 1, 1, 1, 1});
  CHECK(median_filter_1d({1, 1, 0, 1, 1}, 3) == oracle::median_filter_1d({1, 1, 0, 1, 1}, 3));
  CHECK_THROWS_WITH_AS(median_filter_1d(x, 4), doctest::Contains("odd"), ConfigError);
  CHECK_THROWS_AS(median_filter_1d(x, 0), ConfigError);
  CHECK(median_filter_1d({}, 7).empty());
}

TEST_CASE("median filter agrees with the sorting oracle on random signals") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(rng.uniform_int(1, 40)));
    for (auto& v : x) v = rng.uniform();
    const Index w = 2 * rng.uniform_int(0, 5) + 1;
    CHECK(median_filter_1d(x, w) == oracle::median_filter_1d(x, static_cast<int>(w)));
  }
}

TEST_CASE("width-3 median filter on all binary signals of length 10") {
  // Idempotence holds except on alternating stretches: 0101010101 keeps
  // oscillating and only settles after several passes.
  int not_idempotent = 0;
  for (int bits = 0; bits < 1024; ++bits) {
    std::vector<double> x(10);
    for (int i = 0; i < 10; ++i) x[static_cast<std::size_t>(i)] = (bits >> i) & 1;
    bool alternating4 = false;
    for (int i = 0; i + 3 < 10; ++i) {
      const auto u = static_cast<std::size_t>(i);
      alternating4 |= x[u] != x[u + 1] && x[u + 1] != x[u + 2] && x[u + 2] != x[u + 3];
    }
    const auto once = median_filter_1d(x, 3);
    const bool idempotent = median_filter_1d(once, 3) == once;
    if (!alternating4) CHECK(idempotent);
    not_idempotent += !idempotent;
    auto root = once;
    for (int pass = 0; pass < 5; ++pass) root = median_filter_1d(root, 3);
    CHECK(median_filter_1d(root, 3) == root);
  }
  CHECK(not_idempotent == 222);
}

TEST_CASE("per-class widths") {
  FramePosteriors p;
  p.p.resize(2, 5);
  p.p << 1, 1, 0, 1, 1, 1, 1, 0, 1, 1;
  const auto f = median_filter(p, std::vector<Index>{1, 3});
  CHECK(f.p(0, 2) == 0.0);
  CHECK(f.p(1, 2) == 1.0);
  CHECK_THROWS_AS(median_filter(p, std::vector<Index>{1, 3, 5}), ConfigError);
}

TEST_CASE("decode events examples") {
  CHECK(decode_events(one_class(std::vector<double>(30, 0.0)), 0.5).empty());
  std::vector<double> row(30, 0.0);
  for (int t = 10; t < 20; ++t) row[static_cast<std::size_t>(t)] = 1.0;
  auto ev = decode_events(one_class(row), 0.5);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].onset == doctest::Approx(0.64));
  CHECK(ev[0].offset == doctest::Approx(1.28));
  CHECK(ev[0].confidence == 1.0);
  row[15] = 0.3;
  ev = decode_events(one_class(row), 0.5);
  REQUIRE(ev.size() == 2);
  CHECK(ev[0].offset == doctest::Approx(15 * 0.064));
  CHECK(ev[1].onset == doctest::Approx(16 * 0.064));
  row.assign(30, 0.0);
  row[0] = 0.6;
  row[1] = 0.8;
  ev = decode_events(one_class(row), 0.6);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].confidence == doctest::Approx(0.7));
}

TEST_CASE("decoding a frame-aligned rasterization recovers the events") {
  Rng rng(9);
  const double hop = 0.064;
  const Index T = 100;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> row(T, 0.0);
    EventList truth;
    Index t = rng.uniform_int(0, 5);
    while (t < T - 2) {
      const Index len = rng.uniform_int(1, 10);
      const Index end = std::min(T, t + len);
      truth.push_back(Event{"c", 0, static_cast<double>(t) * hop, static_cast<double>(end) * hop});
      t = end + rng.uniform_int(1, 8);
    }
    for (const auto& e : truth) {
      const auto r = rasterize_event(e.onset, e.offset, hop, T);
      for (Index i = 0; i < T; ++i) row[static_cast<std::size_t>(i)] = std::max(row[static_cast<std::size_t>(i)], static_cast<double>(r[static_cast<std::size_t>(i)]));
    }
    CHECK(decode_events(one_class(row, hop), 0.5) == truth);
  }
}

TEST_CASE("intersection counting examples") {
  const EventList gt{{"a", 0, 1.0, 2.0}};
  auto c = intersection_counts({{"a", 0, 1.0, 2.0}}, gt, 1, 0.7, 0.7);
  CHECK(c.per_class[0].tp == 1);
  CHECK(c.per_class[0].fp == 0);
  c = intersection_counts({{"a", 0, 5.0, 6.0}}, gt, 1, 0.7, 0.7);
  CHECK(c.per_class[0].tp == 0);
  CHECK(c.per_class[0].fp == 1);
  c = intersection_counts({{"b", 0, 1.0, 2.0}}, gt, 1, 0.7, 0.7);
  CHECK(c.per_class[0].fp == 1);

  // detection [0.0, 1.0) against ground truth [0.31 or 0.30, 5): 69% vs 70% of its span overlaps
  const EventList long_gt69{{"a", 0, 0.31, 5.0}}, long_gt70{{"a", 0, 0.30, 5.0}};
  const EventList det{{"a", 0, 0.0, 1.0}};
  auto fraction = [](const Event& d, const Event& g) {
    const double ov = std::max(0.0, std::min(d.offset, g.offset) - std::max(d.onset, g.onset));
    return ov / (d.offset - d.onset);
  };
  CHECK(fraction(det[0], long_gt69[0]) == doctest::Approx(0.69));
  CHECK(fraction(det[0], long_gt70[0]) == doctest::Approx(0.70));
  CHECK(intersection_counts(det, long_gt69, 1, 0.7, 0.1).per_class[0].fp == 1);
  CHECK(intersection_counts(det, long_gt70, 1, 0.7, 0.1).per_class[0].fp == 0);
  CHECK(intersection_counts(det, long_gt70, 1, 0.7, 0.1).per_class[0].det_pass == 1);

  CHECK_THROWS_AS(intersection_counts({{"a", 0, 2.0, 1.0}}, gt, 1, 0.7, 0.7), FormatError);
  CHECK_THROWS_AS(intersection_counts({{"a", 3, 1.0, 2.0}}, gt, 1, 0.7, 0.7), FormatError);
  CHECK_THROWS_AS(intersection_counts({}, gt, 1, 0.0, 0.7), ConfigError);
}

TEST_CASE("intersection F1") {
  const EventList gt{{"a", 0, 1.0, 2.0}, {"a", 1, 3.0, 4.0}};
  CHECK(intersection_f1(intersection_counts(gt, gt, 2, 0.7, 0.7)) == 1.0);
  CHECK(intersection_f1(intersection_counts({}, gt, 2, 0.7, 0.7)) == 0.0);
  CHECK(intersection_f1(intersection_counts({gt[0]}, gt, 2, 0.7, 0.7)) == doctest::Approx(0.5));
}

TEST_CASE("PSDS trivial cases") {
  const auto params = params_with(50);
  const EventList gt{{"a", 0, 1.0, 2.0}, {"b", 1, 3.0, 5.0}, {"b", 0, 6.0, 6.5}};
  const std::vector<EventList> perfect(50, gt), none(50);
  const auto r = psds1_from_detections(perfect, gt, 2, 20.0 / 3600.0, params);
  CHECK(r.psds1 == 1.0);
  CHECK(psds1_from_detections(none, gt, 2, 20.0 / 3600.0, params).psds1 == 0.0);
  CHECK(r.scored_classes.size() == 2);
  CHECK(r.text({"x", "y"}).find("psds1 = 1") != std::string::npos);
  CHECK(r.key_values().find("n_thresholds = 50") != std::string::npos);

  const auto r3 = psds1_from_detections(perfect, gt, 3, 20.0 / 3600.0, params);
  CHECK(r3.psds1 == 1.0);
  REQUIRE(r3.warnings.size() == 1);
  CHECK(r3.warnings[0].find("class 2") != std::string::npos);

  CHECK_THROWS_AS(psds1_from_detections(none, gt, 2, 0.0, params), ConfigError);
  CHECK_THROWS_AS(psds1_from_detections(std::vector<EventList>(3), gt, 2, 1.0, params), ConfigError);
  PsdsParams bad = params;
  bad.thresholds = {0.5, 0.4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("threshold set") {
  const auto t = EvalConfig{}.thresholds();
  REQUIRE(t.size() == 50);
  CHECK(t.front() == doctest::Approx(0.01));
  CHECK(t.back() == doctest::Approx(0.99));
  for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] - t[i - 1] == doctest::Approx(0.02));
}

TEST_CASE("PSDS equals the direct-definition oracle on random micro-datasets") {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const int n_thr = 1 + static_cast<int>(seed % 6);
    const auto params = params_with(n_thr);
    const auto m = random_micro(seed, n_thr);
    const double ours = psds1_from_detections(m.dets, m.gt, 2, m.hours, params).psds1;
    const double ref = oracle_psds(m, params, 2);
    CHECK(std::abs(ours - ref) <= 1e-9);
    CHECK(ours >= 0.0);
    CHECK(ours <= 1.0);
  }
}

TEST_CASE("PSDS monotonicity under added correct and spurious detections") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const int n_thr = 1 + static_cast<int>(seed % 4);
    const auto params = params_with(n_thr);
    auto m = random_micro(1000 + seed, n_thr);
    const double base = psds1_from_detections(m.dets, m.gt, 2, m.hours, params).psds1;
    CHECK(std::abs(base - oracle_psds(m, params, 2)) <= 1e-9);

    // a new ground-truth event in a fresh clip, detected exactly at every threshold
    MicroSet plus = m;
    const Event extra{"fresh", static_cast<int>(seed % 2), 1.0, 2.0};
    plus.gt.push_back(extra);
    for (auto& d : plus.dets) d.push_back(extra);
    // ...compared against the same ground truth with that event missed
    MicroSet miss = plus;
    miss.dets = m.dets;
    const double with_tp = psds1_from_detections(plus.dets, plus.gt, 2, m.hours, params).psds1;
    const double without_tp = psds1_from_detections(miss.dets, miss.gt, 2, m.hours, params).psds1;
    CHECK(with_tp >= without_tp - 1e-12);
    CHECK(std::abs(with_tp - oracle_psds(plus, params, 2)) <= 1e-9);

    MicroSet spur = m;
    for (auto& d : spur.dets) d.push_back(Event{"nowhere", static_cast<int>(seed % 2), 0.0, 1.0});
    const double with_fp = psds1_from_detections(spur.dets, spur.gt, 2, m.hours, params).psds1;
    CHECK(with_fp <= base + 1e-12);
    CHECK(std::abs(with_fp - oracle_psds(spur, params, 2)) <= 1e-9);
  }
}

TEST_CASE("eFPR does not increase with threshold when bumps sit inside or away from ground truth") {
  Rng rng(31);
  const auto params = params_with(50);
  const double hop = 0.064;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FramePosteriors> posts;
    EventList gt;
    for (int clip = 0; clip < 3; ++clip) {
      FramePosteriors p;
      p.clip = "c" + std::to_string(clip);
      p.hop = hop;
      p.p = Eigen::MatrixXd::Zero(2, 120);
      for (int c = 0; c < 2; ++c) {
        // ground truth covers frames [20, 60); the bump lives in [20, 60) or in [70, 120)
        gt.push_back(Event{p.clip, c, 20 * hop, 60 * hop});
        const bool hit = rng.uniform() < 0.5;
        const double lo = hit ? 20 : 70, hi = hit ? 60 : 120;
        const double centre = rng.uniform(lo + 5, hi - 5), width = rng.uniform(1, 4), peak = rng.uniform(0.3, 1.0);
        for (Index t = static_cast<Index>(lo); t < static_cast<Index>(hi); ++t)
          p.p(c, t) = peak * std::exp(-std::pow((static_cast<double>(t) - centre) / width, 2));
      }
      posts.push_back(p);
    }
    std::vector<EventList> dets;
    for (double th : params.thresholds) dets.push_back(decode_events(posts, th));
    const auto r = psds1_from_detections(dets, gt, 2, 30.0 / 3600.0, params);
    for (std::size_t k = 1; k < r.points.size(); ++k)
      for (int c = 0; c < 2; ++c) CHECK(r.points[k].efpr[static_cast<std::size_t>(c)] <= r.points[k - 1].efpr[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("a narrower detection at a higher threshold can fail the DTC that a wider one met") {
  const EventList gt{{"a", 0, 0.0, 2.5}};
  const EventList wide{{"a", 0, 0.0, 3.0}}, narrow{{"a", 0, 2.4, 2.6}};
  std::vector<IntersectionCounts> counts{intersection_counts(wide, gt, 1, 0.7, 0.7),
                                         intersection_counts(narrow, gt, 1, 0.7, 0.7)};
  PsdsParams p = params_with(2);
  const auto r = psds1(counts, 1.0, p);
  CHECK(r.points[0].efpr[0] == 0.0);
  CHECK(r.points[1].efpr[0] == 1.0);
}

TEST_CASE("rasterized ground truth as posteriors scores PSDS 1") {
  const double hop = 0.064;
  const Index T = 156;
  EventList gt{{"a", 0, 0.64, 1.92}, {"a", 1, 3.2, 5.12}, {"b", 0, 6.4, 8.0}};
  std::vector<FramePosteriors> posts;
  for (const std::string clip : {"a", "b"}) {
    FramePosteriors p;
    p.clip = clip;
    p.hop = hop;
    p.p = Eigen::MatrixXd::Zero(2, T);
    for (const auto& e : gt)
      if (e.file == clip) {
        const auto r = rasterize_event(e.onset, e.offset, hop, T);
        for (Index t = 0; t < T; ++t)
          if (r[static_cast<std::size_t>(t)]) p.p(e.cls, t) = 1.0;
      }
    posts.push_back(median_filter(p, 7));
  }
  const auto params = params_with(50);
  std::vector<EventList> dets;
  for (double th : params.thresholds) dets.push_back(decode_events(posts, th));
  CHECK(psds1_from_detections(dets, gt, 2, 20.0 / 3600.0, params).psds1 == doctest::Approx(1.0));
}

TEST_CASE("restricting a report to one class matches scoring that class alone") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const int n_thr = 1 + static_cast<int>(seed % 5);
    const auto params = params_with(n_thr);
    const auto m = random_micro(5000 + seed, n_thr);
    const auto full = psds1_from_detections(m.dets, m.gt, 2, m.hours, params);
    for (int keep = 0; keep < 2; ++keep) {
      auto only = [keep](const EventList& events) {
        EventList out;
        for (auto e : events)
          if (e.cls == keep) {
            e.cls = 0;
            out.push_back(e);
          }
        return out;
      };
      std::vector<EventList> dets;
      for (const auto& d : m.dets) dets.push_back(only(d));
      const auto alone = psds1_from_detections(dets, only(m.gt), 1, m.hours, params);
      CHECK(std::abs(psds1_restricted(full, {keep}, params).psds1 - alone.psds1) <= 1e-12);
    }
    CHECK(std::abs(psds1_restricted(full, {0, 1}, params).psds1 - full.psds1) <= 1e-12);
  }
  const auto m = random_micro(1, 2);
  const auto full = psds1_from_detections(m.dets, m.gt, 2, m.hours, params_with(2));
  CHECK_THROWS_AS(psds1_restricted(full, {2}, params_with(2)), ConfigError);
}
