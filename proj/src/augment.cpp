#include "fdy/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fdy/errors.hpp"

namespace fdy {

void LabeledBatch::check() const {
  const Shape4 f = features.shape(), s = strong.shape(), w = weak.shape();
  if (f.c != 1 || s.b != f.b || s.t != f.t || s.f != 1 || w.b != f.b || w.c != s.c || w.t != 1 || w.f != 1)
    throw ShapeError("labeled batch shapes disagree: features " + f.str() + ", strong " + s.str() + ", weak " + w.str());
}

LabeledBatch frame_shift(const LabeledBatch& batch, const std::vector<Index>& shifts) {
  batch.check();
  const Index B = batch.batch(), T = batch.frames();
  if (static_cast<Index>(shifts.size()) != B) throw ShapeError("frame_shift: one shift per clip required");
  LabeledBatch out = batch;
  const Index F = batch.features.shape().f, C = batch.strong.shape().c;
  for (Index b = 0; b < B; ++b) {
    const Index s = ((shifts[static_cast<std::size_t>(b)] % T) + T) % T;
    for (Index t = 0; t < T; ++t) {
      const Index dst = (t + s) % T;
      for (Index f = 0; f < F; ++f) out.features(b, 0, dst, f) = batch.features(b, 0, t, f);
      for (Index c = 0; c < C; ++c) out.strong(b, c, dst, 0) = batch.strong(b, c, t, 0);
    }
  }
  return out;
}

LabeledBatch frame_shift(const LabeledBatch& batch, Index max_shift, Rng& rng) {
  if (max_shift >= batch.frames()) throw ConfigError("frame_shift: max_shift must be below the frame count");
  std::vector<Index> shifts(static_cast<std::size_t>(batch.batch()));
  for (auto& s : shifts) s = rng.uniform_int(-max_shift, max_shift);
  return frame_shift(batch, shifts);
}

LabeledBatch mixup(const LabeledBatch& batch, const std::vector<Index>& partner, double lambda) {
  batch.check();
  const Index B = batch.batch();
  if (static_cast<Index>(partner.size()) != B) throw ShapeError("mixup: one partner per clip required");
  LabeledBatch out = batch;
  const float l = static_cast<float>(lambda), m = static_cast<float>(1.0 - lambda);
  auto blend = [&](const Tensor4<float>& in, Tensor4<float>& dst) {
    const Index per = in.size() / B;
    for (Index b = 0; b < B; ++b) {
      const Index p = partner[static_cast<std::size_t>(b)];
      dst.array().segment(b * per, per) = l * in.array().segment(b * per, per) + m * in.array().segment(p * per, per);
    }
  };
  blend(batch.features, out.features);
  blend(batch.strong, out.strong);
  blend(batch.weak, out.weak);
  for (Index b = 0; b < B; ++b) {
    const auto p = static_cast<std::size_t>(partner[static_cast<std::size_t>(b)]);
    out.has_strong[static_cast<std::size_t>(b)] = batch.has_strong[static_cast<std::size_t>(b)] && batch.has_strong[p];
    out.has_weak[static_cast<std::size_t>(b)] = batch.has_weak[static_cast<std::size_t>(b)] && batch.has_weak[p];
  }
  return out;
}

LabeledBatch mixup(const LabeledBatch& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be > 0");
  if (batch.batch() < 2) throw ConfigError("mixup: needs at least two clips");
  const double lambda = rng.beta(alpha, alpha);
  std::vector<Index> partner(static_cast<std::size_t>(batch.batch()));
  std::iota(partner.begin(), partner.end(), Index{0});
  for (Index i = batch.batch() - 1; i > 0; --i)
    std::swap(partner[static_cast<std::size_t>(i)], partner[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return mixup(batch, partner, lambda);
}

LabeledBatch time_mask(const LabeledBatch& batch, const std::vector<Span>& spans) {
  batch.check();
  const Index B = batch.batch(), T = batch.frames();
  if (static_cast<Index>(spans.size()) != B) throw ShapeError("time_mask: one span per clip required");
  LabeledBatch out = batch;
  const Index F = batch.features.shape().f, C = batch.strong.shape().c;
  for (Index b = 0; b < B; ++b) {
    const Span s = spans[static_cast<std::size_t>(b)];
    if (s.begin < 0 || s.end > T || s.begin > s.end) throw ShapeError("time_mask: span outside the clip");
    for (Index t = s.begin; t < s.end; ++t) {
      for (Index f = 0; f < F; ++f) out.features(b, 0, t, f) = 0.0f;
      for (Index c = 0; c < C; ++c) out.strong(b, c, t, 0) = 0.0f;
    }
  }
  return out;
}

LabeledBatch time_mask(const LabeledBatch& batch, Index max_width, Rng& rng) {
  const Index T = batch.frames();
  if (max_width > T || max_width < 0) throw ConfigError("time_mask: max_width must lie in [0, T]");
  std::vector<Span> spans(static_cast<std::size_t>(batch.batch()));
  for (auto& s : spans) {
    const Index w = rng.uniform_int(0, max_width);
    s.begin = rng.uniform_int(0, T - w);
    s.end = s.begin + w;
  }
  return time_mask(batch, spans);
}

std::vector<double> filter_gain_curve(Index n_bins, const std::vector<Index>& edges, const std::vector<double>& gains_db) {
  if (edges.size() != gains_db.size() + 1 || gains_db.empty())
    throw ConfigError("filter_augment: need n bands as n+1 edges and n gains");
  if (edges.front() != 0 || edges.back() != n_bins) throw ConfigError("filter_augment: edges must span [0, F]");
  std::vector<double> centres;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    if (edges[k + 1] <= edges[k]) throw ConfigError("filter_augment: edges must be strictly increasing");
    centres.push_back(0.5 * static_cast<double>(edges[k] + edges[k + 1] - 1));
  }
  std::vector<double> curve(static_cast<std::size_t>(n_bins));
  for (Index f = 0; f < n_bins; ++f) {
    const double x = static_cast<double>(f);
    double g;
    if (x <= centres.front()) {
      g = gains_db.front();
    } else if (x >= centres.back()) {
      g = gains_db.back();
    } else {
      std::size_t k = 0;
      while (centres[k + 1] < x) ++k;
      const double u = (x - centres[k]) / (centres[k + 1] - centres[k]);
      g = gains_db[k] + u * (gains_db[k + 1] - gains_db[k]);
    }
    curve[static_cast<std::size_t>(f)] = g;
  }
  return curve;
}

LabeledBatch filter_augment(const LabeledBatch& batch, const std::vector<std::vector<double>>& curves_db) {
  batch.check();
  const Index B = batch.batch(), T = batch.frames(), F = batch.features.shape().f;
  if (static_cast<Index>(curves_db.size()) != B) throw ShapeError("filter_augment: one curve per clip required");
  LabeledBatch out = batch;
  for (Index b = 0; b < B; ++b) {
    const auto& c = curves_db[static_cast<std::size_t>(b)];
    if (static_cast<Index>(c.size()) != F) throw ShapeError("filter_augment: curve length must equal F");
    std::vector<float> factor(static_cast<std::size_t>(F));
    for (Index f = 0; f < F; ++f) factor[static_cast<std::size_t>(f)] = static_cast<float>(std::pow(10.0, c[static_cast<std::size_t>(f)] / 20.0));
    for (Index t = 0; t < T; ++t)
      for (Index f = 0; f < F; ++f) out.features(b, 0, t, f) *= factor[static_cast<std::size_t>(f)];
  }
  return out;
}

LabeledBatch filter_augment(const LabeledBatch& batch, int bands_min, int bands_max, double gain_db, Rng& rng) {
  const Index F = batch.features.shape().f;
  if (bands_min < 1 || bands_max < bands_min) throw ConfigError("filter_augment: band count range must satisfy 1 <= min <= max");
  if (!std::isfinite(gain_db)) throw ConfigError("filter_augment: gain range must be finite");
  std::vector<std::vector<double>> curves;
  for (Index b = 0; b < batch.batch(); ++b) {
    const Index n = std::min<Index>(rng.uniform_int(bands_min, bands_max), F);
    std::vector<Index> inner;
    while (static_cast<Index>(inner.size()) < n - 1) {
      const Index e = rng.uniform_int(1, F - 1);
      if (std::find(inner.begin(), inner.end(), e) == inner.end()) inner.push_back(e);
    }
    std::sort(inner.begin(), inner.end());
    std::vector<Index> edges{0};
    edges.insert(edges.end(), inner.begin(), inner.end());
    edges.push_back(F);
    std::vector<double> gains(static_cast<std::size_t>(n));
    for (auto& g : gains) g = rng.uniform(-gain_db, gain_db);
    curves.push_back(filter_gain_curve(F, edges, gains));
  }
  return filter_augment(batch, curves);
}

}  // namespace fdy
