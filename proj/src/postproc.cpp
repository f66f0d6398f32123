#include "fdy/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "fdy/errors.hpp"

namespace fdy {

std::vector<double> median_filter_1d(const std::vector<double>& x, Index width) {
  if (width < 1 || width % 2 == 0)
    throw ConfigError("median filter width must be odd and positive, got " + std::to_string(width));
  const Index n = static_cast<Index>(x.size()), half = width / 2;
  std::vector<double> out(x.size()), window(static_cast<std::size_t>(width));
  for (Index i = 0; i < n; ++i) {
    for (Index k = -half; k <= half; ++k)
      window[static_cast<std::size_t>(k + half)] = x[static_cast<std::size_t>(std::clamp<Index>(i + k, 0, n - 1))];
    std::nth_element(window.begin(), window.begin() + half, window.end());
    out[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(half)];
  }
  return out;
}

FramePosteriors median_filter(const FramePosteriors& post, Index width) {
  return median_filter(post, std::vector<Index>{width});
}

FramePosteriors median_filter(const FramePosteriors& post, const std::vector<Index>& widths) {
  const Index C = post.n_classes();
  if (widths.size() != 1 && static_cast<Index>(widths.size()) != C)
    throw ConfigError("median filter needs 1 or " + std::to_string(C) + " widths, got " + std::to_string(widths.size()));
  FramePosteriors out = post;
  std::vector<double> row(static_cast<std::size_t>(post.frames()));
  for (Index c = 0; c < C; ++c) {
    for (Index t = 0; t < post.frames(); ++t) row[static_cast<std::size_t>(t)] = post.p(c, t);
    const auto f = median_filter_1d(row, widths.size() == 1 ? widths[0] : widths[static_cast<std::size_t>(c)]);
    for (Index t = 0; t < post.frames(); ++t) out.p(c, t) = f[static_cast<std::size_t>(t)];
  }
  return out;
}

EventList decode_events(const FramePosteriors& post, double threshold) {
  EventList out;
  for (Index c = 0; c < post.n_classes(); ++c) {
    Index t = 0;
    while (t < post.frames()) {
      if (post.p(c, t) < threshold) {
        ++t;
        continue;
      }
      const Index begin = t;
      double sum = 0.0;
      while (t < post.frames() && post.p(c, t) >= threshold) sum += post.p(c, t++);
      Event e{post.clip, static_cast<int>(c), static_cast<double>(begin) * post.hop, static_cast<double>(t) * post.hop};
      e.confidence = sum / static_cast<double>(t - begin);
      out.push_back(e);
    }
  }
  return out;
}

EventList decode_events(const std::vector<FramePosteriors>& posts, double threshold) {
  EventList out;
  for (const auto& p : posts) {
    auto e = decode_events(p, threshold);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

namespace {

using Key = std::pair<std::string, int>;

double overlap(const Event& a, const Event& b) {
  return std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
}

std::map<Key, std::vector<const Event*>> group(const EventList& events) {
  std::map<Key, std::vector<const Event*>> g;
  for (const auto& e : events) g[{e.file, e.cls}].push_back(&e);
  for (auto& [k, v] : g)
    std::stable_sort(v.begin(), v.end(), [](const Event* a, const Event* b) { return a->onset < b->onset; });
  return g;
}

}  // namespace

IntersectionCounts intersection_counts(const EventList& detections, const EventList& ground_truth, int n_classes,
                                       double dtc, double gtc) {
  if (!(dtc > 0 && dtc <= 1) || !(gtc > 0 && gtc <= 1)) throw ConfigError("dtc and gtc must lie in (0, 1]");
  validate_events(detections);
  validate_events(ground_truth);
  IntersectionCounts out;
  out.per_class.resize(static_cast<std::size_t>(n_classes));
  auto slot = [&](int cls) -> ClassCounts& {
    if (cls < 0 || cls >= n_classes)
      throw FormatError("event class " + std::to_string(cls) + " outside [0, " + std::to_string(n_classes) + ")");
    return out.per_class[static_cast<std::size_t>(cls)];
  };
  for (const auto& g : ground_truth) ++slot(g.cls).n_gt;
  for (const auto& d : detections) ++slot(d.cls).n_det;

  const auto gts = group(ground_truth);
  const auto dets = group(detections);
  std::map<Key, std::vector<const Event*>> passing;
  for (const auto& [key, list] : dets) {
    const auto it = gts.find(key);
    for (const Event* d : list) {
      double covered = 0.0;
      if (it != gts.end())
        for (const Event* g : it->second) covered += overlap(*d, *g);
      if (covered / d->duration() >= dtc) {
        ++slot(key.second).det_pass;
        passing[key].push_back(d);
      } else {
        ++slot(key.second).fp;
      }
    }
  }
  for (const auto& [key, list] : gts) {
    const auto it = passing.find(key);
    for (const Event* g : list) {
      double covered = 0.0;
      if (it != passing.end())
        for (const Event* d : it->second) covered += overlap(*d, *g);
      if (covered / g->duration() >= gtc) ++slot(key.second).tp;
    }
  }
  for (const auto& c : out.per_class) {
    out.total.tp += c.tp;
    out.total.fp += c.fp;
    out.total.n_gt += c.n_gt;
    out.total.n_det += c.n_det;
    out.total.det_pass += c.det_pass;
  }
  return out;
}

double intersection_f1(const IntersectionCounts& counts) {
  double sum = 0.0;
  int n = 0;
  for (const auto& c : counts.per_class) {
    if (c.n_gt == 0) continue;
    ++n;
    const double precision = c.n_det ? static_cast<double>(c.det_pass) / c.n_det : 0.0;
    const double recall = static_cast<double>(c.tp) / c.n_gt;
    if (precision + recall > 0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return n ? sum / n : 0.0;
}

PsdsParams PsdsParams::from(const EvalConfig& eval) {
  PsdsParams p;
  p.dtc = eval.dtc;
  p.gtc = eval.gtc;
  p.alpha_st = eval.alpha_st;
  p.e_max = eval.e_max;
  p.thresholds = eval.thresholds();
  return p;
}

void PsdsParams::validate() const {
  if (!(dtc > 0 && dtc <= 1) || !(gtc > 0 && gtc <= 1)) throw ConfigError("dtc and gtc must lie in (0, 1]");
  if (!(e_max > 0)) throw ConfigError("e_max must be positive");
  if (alpha_st < 0) throw ConfigError("alpha_st must be non-negative");
  if (thresholds.empty()) throw ConfigError("at least one threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0 && thresholds[i] < 1)) throw ConfigError("thresholds must lie in (0, 1)");
    if (i && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("thresholds must be strictly increasing");
  }
}

PsdsReport psds1(const std::vector<IntersectionCounts>& per_threshold, double duration_hours,
                 const PsdsParams& params) {
  params.validate();
  if (per_threshold.size() != params.thresholds.size())
    throw ConfigError("expected counts for " + std::to_string(params.thresholds.size()) + " thresholds, got " +
                      std::to_string(per_threshold.size()));
  if (!(duration_hours > 0)) throw ConfigError("dataset duration must be positive");
  PsdsReport r;
  r.duration_hours = duration_hours;
  const int C = per_threshold.empty() ? 0 : static_cast<int>(per_threshold[0].per_class.size());
  for (int c = 0; c < C; ++c) {
    if (per_threshold[0].per_class[static_cast<std::size_t>(c)].n_gt > 0)
      r.scored_classes.push_back(c);
    else
      r.warnings.push_back("class " + std::to_string(c) + " has no ground-truth events and is left out of PSDS");
  }
  for (std::size_t k = 0; k < per_threshold.size(); ++k) {
    PsdsOperatingPoint op;
    op.threshold = params.thresholds[k];
    op.counts = per_threshold[k].per_class;
    for (const auto& cc : op.counts) {
      op.tpr.push_back(cc.n_gt ? static_cast<double>(cc.tp) / cc.n_gt : 0.0);
      op.efpr.push_back(static_cast<double>(cc.fp) / duration_hours);
    }
    r.points.push_back(std::move(op));
  }
  if (r.scored_classes.empty()) return r;

  // per class ROC staircase: best TPR among operating points with eFPR <= e
  std::vector<std::vector<std::pair<double, double>>> roc;
  std::vector<double> corners{0.0};
  for (int c : r.scored_classes) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& op : r.points) pts.emplace_back(op.efpr[static_cast<std::size_t>(c)], op.tpr[static_cast<std::size_t>(c)]);
    std::sort(pts.begin(), pts.end());
    double best = 0.0;
    for (auto& [e, t] : pts) {
      best = std::max(best, t);
      t = best;
      if (e < params.e_max) corners.push_back(e);
    }
    roc.push_back(std::move(pts));
  }
  std::sort(corners.begin(), corners.end());
  corners.erase(std::unique(corners.begin(), corners.end()), corners.end());

  auto tpr_at = [](const std::vector<std::pair<double, double>>& pts, double e) {
    auto it = std::upper_bound(pts.begin(), pts.end(), std::make_pair(e, 2.0));
    return it == pts.begin() ? 0.0 : std::prev(it)->second;
  };
  double area = 0.0;
  for (std::size_t i = 0; i < corners.size(); ++i) {
    const double e = corners[i];
    const double next = i + 1 < corners.size() ? corners[i + 1] : params.e_max;
    double mean = 0.0;
    std::vector<double> v;
    for (const auto& pts : roc) v.push_back(tpr_at(pts, e));
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double eff = std::max(0.0, mean - params.alpha_st * std::sqrt(var));
    r.effective.emplace_back(e, eff);
    area += eff * (next - e);
  }
  r.psds1 = std::clamp(area / params.e_max, 0.0, 1.0);
  return r;
}

PsdsReport psds1_from_detections(const std::vector<EventList>& detections_per_threshold,
                                 const EventList& ground_truth, int n_classes, double duration_hours,
                                 const PsdsParams& params) {
  std::vector<IntersectionCounts> counts;
  for (const auto& dets : detections_per_threshold)
    counts.push_back(intersection_counts(dets, ground_truth, n_classes, params.dtc, params.gtc));
  return psds1(counts, duration_hours, params);
}

PsdsReport psds1_restricted(const PsdsReport& report, const std::vector<int>& classes, const PsdsParams& params) {
  std::vector<IntersectionCounts> counts;
  for (const auto& op : report.points) {
    IntersectionCounts ic;
    for (int c : classes) {
      if (c < 0 || static_cast<std::size_t>(c) >= op.counts.size())
        throw ConfigError("class " + std::to_string(c) + " is not part of the report");
      const ClassCounts& cc = op.counts[static_cast<std::size_t>(c)];
      ic.per_class.push_back(cc);
      ic.total.tp += cc.tp;
      ic.total.fp += cc.fp;
      ic.total.n_gt += cc.n_gt;
      ic.total.n_det += cc.n_det;
      ic.total.det_pass += cc.det_pass;
    }
    counts.push_back(std::move(ic));
  }
  return psds1(counts, report.duration_hours, params);
}

std::string PsdsReport::text(const std::vector<std::string>& class_names) const {
  std::ostringstream os;
  os << "threshold\tclass\ttp\tfp\tn_gt\ttpr\tefpr\n";
  char buf[160];
  for (const auto& op : points)
    for (std::size_t c = 0; c < op.counts.size(); ++c) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      std::snprintf(buf, sizeof buf, "%.4f\t%s\t%d\t%d\t%d\t%.6f\t%.6f\n", op.threshold, name.c_str(), op.counts[c].tp,
                    op.counts[c].fp, op.counts[c].n_gt, op.tpr[c], op.efpr[c]);
      os << buf;
    }
  for (const auto& w : warnings) os << "# warning: " << w << '\n';
  os << key_values();
  return os.str();
}

std::string PsdsReport::key_values() const {
  std::ostringstream os;
  os << "psds1 = " << format_number(psds1) << '\n';
  os << "duration_hours = " << format_number(duration_hours) << '\n';
  os << "n_thresholds = " << points.size() << '\n';
  os << "scored_classes = " << scored_classes.size() << '\n';
  return os.str();
}

}  // namespace fdy
