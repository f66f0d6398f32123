#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fdy::oracle {

std::vector<double> median_filter_1d(const std::vector<double>& x, int width) {
  const int half = width / 2;
  const int n = static_cast<int>(x.size());
  std::vector<double> padded;
  for (int i = -half; i < n + half; ++i) padded.push_back(x[static_cast<std::size_t>(std::clamp(i, 0, n - 1))]);
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> window(padded.begin() + i, padded.begin() + i + width);
    std::sort(window.begin(), window.end());
    out.push_back(window[static_cast<std::size_t>(half)]);
  }
  return out;
}

std::vector<int> rasterize(double onset, double offset, double hop, int n_frames) {
  std::vector<int> active(static_cast<std::size_t>(n_frames), 0);
  for (int i = 0; i < n_frames; ++i) {
    const double lo = i * hop, hi = (i + 1) * hop;
    const double overlap = std::min(hi, offset) - std::max(lo, onset);
    if (overlap >= hop / 2) active[static_cast<std::size_t>(i)] = 1;
  }
  return active;
}

namespace {

double overlap(const MicroEvent& a, const MicroEvent& b) {
  if (a.file != b.file || a.cls != b.cls) return 0.0;
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

}  // namespace

double psds_reference(const std::vector<std::vector<MicroEvent>>& detections_per_threshold,
                      const std::vector<MicroEvent>& ground_truth, int n_classes, double total_hours,
                      double dtc, double gtc, double alpha_st, double e_max) {
  std::vector<int> n_gt(static_cast<std::size_t>(n_classes), 0);
  for (const auto& g : ground_truth) ++n_gt[static_cast<std::size_t>(g.cls)];
  std::vector<int> classes;
  for (int c = 0; c < n_classes; ++c)
    if (n_gt[static_cast<std::size_t>(c)] > 0) classes.push_back(c);
  if (classes.empty()) return 0.0;

  // points[c] = list of (efpr, tpr)
  std::vector<std::vector<std::pair<double, double>>> points(static_cast<std::size_t>(n_classes));
  for (const auto& dets : detections_per_threshold) {
    std::vector<int> fp(static_cast<std::size_t>(n_classes), 0), tp(static_cast<std::size_t>(n_classes), 0);
    std::vector<bool> passes(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      double inter = 0.0;
      for (const auto& g : ground_truth) inter += overlap(dets[i], g);
      passes[i] = inter / (dets[i].offset - dets[i].onset) >= dtc;
      if (!passes[i]) ++fp[static_cast<std::size_t>(dets[i].cls)];
    }
    for (const auto& g : ground_truth) {
      double inter = 0.0;
      for (std::size_t i = 0; i < dets.size(); ++i)
        if (passes[i]) inter += overlap(dets[i], g);
      if (inter / (g.offset - g.onset) >= gtc) ++tp[static_cast<std::size_t>(g.cls)];
    }
    for (int c : classes)
      points[static_cast<std::size_t>(c)].emplace_back(fp[static_cast<std::size_t>(c)] / total_hours,
                                                      static_cast<double>(tp[static_cast<std::size_t>(c)]) /
                                                          n_gt[static_cast<std::size_t>(c)]);
  }

  std::set<double> breaks{0.0, e_max};
  for (int c : classes)
    for (const auto& [e, r] : points[static_cast<std::size_t>(c)])
      if (e < e_max) breaks.insert(e);
  const std::vector<double> xs(breaks.begin(), breaks.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    std::vector<double> tprs;
    for (int c : classes) {
      double best = 0.0;
      for (const auto& [e, r] : points[static_cast<std::size_t>(c)])
        if (e <= xs[i]) best = std::max(best, r);
      tprs.push_back(best);
    }
    double m = 0.0;
    for (double v : tprs) m += v;
    m /= static_cast<double>(tprs.size());
    double var = 0.0;
    for (double v : tprs) var += (v - m) * (v - m);
    var /= static_cast<double>(tprs.size());
    const double eff = std::max(0.0, m - alpha_st * std::sqrt(var));
    area += eff * (xs[i + 1] - xs[i]);
  }
  return area / e_max;
}

}  // namespace fdy::oracle
