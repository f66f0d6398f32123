#pragma once

// Independent reference implementations used by the test suites and the
// `verify` command. Nothing here calls the code paths it is used to check.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fdy/tensor.hpp"

namespace fdy::oracle {

/// Direct nested-loop cross-correlation, stride 1, zero "same" padding with
/// the odd cell at the end.
template <class Scalar>
Tensor4<Scalar> conv2d_same(const Tensor4<Scalar>& x, const Tensor4<Scalar>& w, const std::vector<Scalar>& bias,
                            Index d_t, Index d_f) {
  const Shape4 xs = x.shape(), ws = w.shape();
  Tensor4<Scalar> out(Shape4{xs.b, ws.b, xs.t, xs.f});
  const Index pad_t = d_t * (ws.t - 1) / 2;
  const Index pad_f = d_f * (ws.f - 1) / 2;
  for (Index b = 0; b < xs.b; ++b)
    for (Index co = 0; co < ws.b; ++co)
      for (Index t = 0; t < xs.t; ++t)
        for (Index f = 0; f < xs.f; ++f) {
          Scalar acc = bias.empty() ? Scalar(0) : bias[static_cast<std::size_t>(co)];
          for (Index ci = 0; ci < xs.c; ++ci)
            for (Index i = 0; i < ws.t; ++i)
              for (Index j = 0; j < ws.f; ++j) {
                const Index ti = t - pad_t + i * d_t;
                const Index fi = f - pad_f + j * d_f;
                if (ti < 0 || ti >= xs.t || fi < 0 || fi >= xs.f) continue;
                acc += w(co, ci, i, j) * x(b, ci, ti, fi);
              }
          out(b, co, t, f) = acc;
        }
  return out;
}

/// Frequency dynamic convolution by per-output-bin kernel assembly: for every
/// output bin f the kernel Σ_k attn_k(b, f)·W_k is built explicitly (dilated
/// kernels enter through their dilated tap positions) and applied once.
template <class Scalar>
Tensor4<Scalar> fdy_assembled(const Tensor4<Scalar>& x, const std::vector<Tensor4<Scalar>>& kernels,
                              const std::vector<int>& dilations, const std::vector<Scalar>& bias,
                              const Tensor4<Scalar>& attention) {
  const Shape4 xs = x.shape(), ws = kernels.front().shape();
  int max_d = 1;
  for (int d : dilations) max_d = std::max(max_d, d);
  // Dense kernel over frequency offsets [-(kf-1)/2*max_d, +(kf-1)/2*max_d] (odd kernels).
  const Index half_t = (ws.t - 1) / 2;
  const Index half_f = (ws.f - 1) / 2 * max_d;
  const Index span_f = 2 * half_f + 1;
  Tensor4<Scalar> out(Shape4{xs.b, ws.b, xs.t, xs.f});
  for (Index b = 0; b < xs.b; ++b)
    for (Index f = 0; f < xs.f; ++f) {
      Tensor4<Scalar> assembled(Shape4{ws.b, ws.c, ws.t, span_f});
      for (std::size_t k = 0; k < kernels.size(); ++k) {
        const Scalar a = attention(b, static_cast<Index>(k), 0, f);
        const Index d = dilations[k];
        for (Index co = 0; co < ws.b; ++co)
          for (Index ci = 0; ci < ws.c; ++ci)
            for (Index i = 0; i < ws.t; ++i)
              for (Index j = 0; j < ws.f; ++j) {
                const Index offset = (j - (ws.f - 1) / 2) * d;
                assembled(co, ci, i, offset + half_f) += a * kernels[k](co, ci, i, j);
              }
      }
      for (Index co = 0; co < ws.b; ++co)
        for (Index t = 0; t < xs.t; ++t) {
          Scalar acc = bias.empty() ? Scalar(0) : bias[static_cast<std::size_t>(co)];
          for (Index ci = 0; ci < ws.c; ++ci)
            for (Index i = 0; i < ws.t; ++i)
              for (Index j = 0; j < span_f; ++j) {
                const Index ti = t + i - half_t;
                const Index fi = f + j - half_f;
                if (ti < 0 || ti >= xs.t || fi < 0 || fi >= xs.f) continue;
                acc += assembled(co, ci, i, j) * x(b, ci, ti, fi);
              }
          out(b, co, t, f) = acc;
        }
    }
  return out;
}

/// Sliding median with edge replication, by sorting each padded window.
std::vector<double> median_filter_1d(const std::vector<double>& x, int width);

/// Frame i covering [i*hop, (i+1)*hop) is active iff its overlap with
/// [onset, offset) is at least hop/2.
std::vector<int> rasterize(double onset, double offset, double hop, int n_frames);

struct MicroEvent {
  std::string file;
  int cls;
  double onset;
  double offset;
};

/// PSDS (alpha_ct = 0) from the definition: per threshold, per class TPR and
/// eFPR via pairwise intersections, per-class ROC as the best TPR reachable at
/// or below each eFPR, mean minus alpha_st·std across classes, integrated over
/// [0, e_max] by sampling every constant piece.
double psds_reference(const std::vector<std::vector<MicroEvent>>& detections_per_threshold,
                      const std::vector<MicroEvent>& ground_truth, int n_classes, double total_hours,
                      double dtc, double gtc, double alpha_st, double e_max);

}  // namespace fdy::oracle
