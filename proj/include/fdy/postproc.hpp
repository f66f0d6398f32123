#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "fdy/config.hpp"
#include "fdy/events.hpp"

namespace fdy {

/// Class-by-frame probabilities for one clip.
struct FramePosteriors {
  std::string clip;
  Eigen::MatrixXd p;  // [n_classes, T]
  double hop = 0.064;

  Index n_classes() const { return p.rows(); }
  Index frames() const { return p.cols(); }
};

/// Sliding median with edge replication. `width` must be odd and positive.
std::vector<double> median_filter_1d(const std::vector<double>& x, Index width);
FramePosteriors median_filter(const FramePosteriors& post, Index width);
/// `widths` holds one width for every class, or a single shared width.
FramePosteriors median_filter(const FramePosteriors& post, const std::vector<Index>& widths);

/// Maximal runs of frames with p >= threshold, one event per run, confidence = mean p over the run.
EventList decode_events(const FramePosteriors& post, double threshold);
EventList decode_events(const std::vector<FramePosteriors>& posts, double threshold);

struct ClassCounts {
  int tp = 0;          // ground-truth events meeting the GTC
  int fp = 0;          // detections failing the DTC
  int n_gt = 0;
  int n_det = 0;
  int det_pass = 0;    // detections meeting the DTC
};

struct IntersectionCounts {
  std::vector<ClassCounts> per_class;
  ClassCounts total;
};

/// Intersection-based matching without cross-trigger accounting. A detection
/// passes when the fraction of its span covered by same-class ground truth in
/// the same clip reaches `dtc`; a ground-truth event is detected when passing
/// detections cover at least `gtc` of it.
IntersectionCounts intersection_counts(const EventList& detections, const EventList& ground_truth, int n_classes,
                                       double dtc, double gtc);

/// Macro-averaged F1 over classes that have ground truth, with
/// precision = det_pass / n_det and recall = tp / n_gt.
double intersection_f1(const IntersectionCounts& counts);

struct PsdsParams {
  double dtc = 0.7;
  double gtc = 0.7;
  double alpha_st = 1.0;
  double e_max = 100.0;
  std::vector<double> thresholds;

  static PsdsParams from(const EvalConfig& eval);
  void validate() const;
};

struct PsdsOperatingPoint {
  double threshold = 0.0;
  std::vector<ClassCounts> counts;
  std::vector<double> tpr;
  std::vector<double> efpr;
};

struct PsdsReport {
  std::vector<PsdsOperatingPoint> points;
  std::vector<int> scored_classes;                     // classes with ground truth
  std::vector<std::pair<double, double>> effective;    // (eFPR, effective TPR) staircase corners
  double duration_hours = 0.0;
  double psds1 = 0.0;
  std::vector<std::string> warnings;

  /// Per-threshold per-class table followed by a `key = value` block.
  std::string text(const std::vector<std::string>& class_names) const;
  std::string key_values() const;
};

PsdsReport psds1(const std::vector<IntersectionCounts>& per_threshold, double duration_hours,
                 const PsdsParams& params);

/// Re-scores an existing report on a subset of its classes, as though the
/// remaining classes were absent from the label set.
PsdsReport psds1_restricted(const PsdsReport& report, const std::vector<int>& classes, const PsdsParams& params);

PsdsReport psds1_from_detections(const std::vector<EventList>& detections_per_threshold,
                                 const EventList& ground_truth, int n_classes, double duration_hours,
                                 const PsdsParams& params);

}  // namespace fdy
