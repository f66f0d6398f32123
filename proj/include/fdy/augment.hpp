#pragma once

// Training-time augmentations on a labeled batch. Each random version draws
// its parameters from `rng` and forwards to an explicit-parameter version.

#include <vector>

#include "fdy/rng.hpp"
#include "fdy/tensor.hpp"

namespace fdy {

struct LabeledBatch {
  Tensor4<float> features;  // [B, 1, T, F]
  Tensor4<float> strong;    // [B, n_classes, T, 1], aligned with feature frames
  Tensor4<float> weak;      // [B, n_classes, 1, 1]
  std::vector<bool> has_strong;
  std::vector<bool> has_weak;

  Index batch() const { return features.shape().b; }
  Index frames() const { return features.shape().t; }
  void check() const;
};

/// Circular shift of features and strong labels by shifts[b] frames.
LabeledBatch frame_shift(const LabeledBatch& batch, const std::vector<Index>& shifts);
LabeledBatch frame_shift(const LabeledBatch& batch, Index max_shift, Rng& rng);

/// out[i] = lambda·in[i] + (1 − lambda)·in[partner[i]] for features and labels.
LabeledBatch mixup(const LabeledBatch& batch, const std::vector<Index>& partner, double lambda);
LabeledBatch mixup(const LabeledBatch& batch, double alpha, Rng& rng);

struct Span {
  Index begin = 0;
  Index end = 0;  // exclusive
};

/// Zeroes features and strong labels on spans[b].
LabeledBatch time_mask(const LabeledBatch& batch, const std::vector<Span>& spans);
LabeledBatch time_mask(const LabeledBatch& batch, Index max_width, Rng& rng);

/// Per-bin gain curve of the linear filter type: band k covers
/// [edges[k], edges[k+1]) and its gain sits at the band centre; bins between
/// centres interpolate linearly, bins outside the outer centres hold the edge value.
std::vector<double> filter_gain_curve(Index n_bins, const std::vector<Index>& edges, const std::vector<double>& gains_db);

/// Multiplies every bin of clip b by 10^(curves_db[b][f] / 20).
LabeledBatch filter_augment(const LabeledBatch& batch, const std::vector<std::vector<double>>& curves_db);
LabeledBatch filter_augment(const LabeledBatch& batch, int bands_min, int bands_max, double gain_db, Rng& rng);

}  // namespace fdy
