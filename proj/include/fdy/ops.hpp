#pragma once

// Differentiable tensor operations used by the SED model. Each op computes
// its forward value eagerly and records a closure for the reverse sweep.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fdy/autodiff.hpp"
#include "fdy/rng.hpp"
#include "fdy/tensor.hpp"

namespace fdy {

namespace detail {

template <class Scalar>
void accumulate(Node<Scalar>& parent, const Tensor4<Scalar>& g) {
  if (parent.requires_grad) parent.grad.array() += g.array();
}

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

inline Shape4 scalar_shape() { return Shape4{1, 1, 1, 1}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return make_result<Scalar>(std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

template <class Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return make_result<Scalar>(std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->grad.array() -= self.grad.array();
  });
}

template <class Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return make_result<Scalar>(std::move(out), {a.node(), b.node()}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad.array() += self.grad.array() * pb.value.array();
    if (pb.requires_grad) pb.grad.array() += self.grad.array() * pa.value.array();
  });
}

template <class Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array() * factor;
  return make_result<Scalar>(std::move(out), {a.node()}, [factor](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad.array() += self.grad.array() * factor;
  });
}

template <class Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <class Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <class Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <class Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }

/// Elementwise product where every extent of `b` is either 1 or matches `a`.
template <class Scalar>
Var<Scalar> mul_broadcast(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape4 sa = a.shape();
  const Shape4 sb = b.shape();
  for (int ax = 0; ax < 4; ++ax)
    if (sb[ax] != 1 && sb[ax] != sa[ax])
      throw ShapeError("mul_broadcast: cannot broadcast " + sb.str() + " to " + sa.str());
  auto b_offset = [sb](Index i0, Index i1, Index i2, Index i3) {
    return (((sb.b == 1 ? 0 : i0) * sb.c + (sb.c == 1 ? 0 : i1)) * sb.t + (sb.t == 1 ? 0 : i2)) *
               sb.f + (sb.f == 1 ? 0 : i3);
  };
  Tensor4<Scalar> out(sa);
  const Tensor4<Scalar>& av = a.value();
  const Tensor4<Scalar>& bv = b.value();
  Index o = 0;
  for (Index i0 = 0; i0 < sa.b; ++i0)
    for (Index i1 = 0; i1 < sa.c; ++i1)
      for (Index i2 = 0; i2 < sa.t; ++i2)
        for (Index i3 = 0; i3 < sa.f; ++i3, ++o) out[o] = av[o] * bv[b_offset(i0, i1, i2, i3)];
  return make_result<Scalar>(std::move(out), {a.node(), b.node()}, [sa, b_offset](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    Index o = 0;
    for (Index i0 = 0; i0 < sa.b; ++i0)
      for (Index i1 = 0; i1 < sa.c; ++i1)
        for (Index i2 = 0; i2 < sa.t; ++i2)
          for (Index i3 = 0; i3 < sa.f; ++i3, ++o) {
            const Index ob = b_offset(i0, i1, i2, i3);
            if (pa.requires_grad) pa.grad[o] += self.grad[o] * pb.value[ob];
            if (pb.requires_grad) pb.grad[ob] += self.grad[o] * pa.value[o];
          }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor4<Scalar> out(detail::scalar_shape());
  out[0] = a.value().array().sum();
  return make_result<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->grad.array() += self.grad[0];
  });
}

template <class Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Sum of `a ⊙ weights` for a constant weight tensor.
template <class Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& a, const Tensor4<Scalar>& weights) {
  detail::require_same_shape(a.shape(), weights.shape(), "weighted_sum");
  Tensor4<Scalar> out(detail::scalar_shape());
  out[0] = (a.value().array() * weights.array()).sum();
  return make_result<Scalar>(std::move(out), {a.node()}, [weights](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->grad.array() += self.grad[0] * weights.array();
  });
}

/// Sums over one axis, keeping it with extent 1.
template <class Scalar>
Var<Scalar> sum_axis(const Var<Scalar>& a, int axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape4 shape = a.shape();
  shape[axis] = 1;
  Tensor4<Scalar> out(shape);
  const auto& in = a.value();
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < s.extent; ++k)
      for (Index i = 0; i < s.inner; ++i) out[o * s.inner + i] += in[(o * s.extent + k) * s.inner + i];
  return make_result<Scalar>(std::move(out), {a.node()}, [s](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index k = 0; k < s.extent; ++k)
        for (Index i = 0; i < s.inner; ++i) p.grad[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <class Scalar>
Var<Scalar> mean_axis(const Var<Scalar>& a, int axis) {
  return scale(sum_axis(a, axis), Scalar(1) / static_cast<Scalar>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <class Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array().max(Scalar(0));
  return make_result<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad)
      p.grad.array() += (p.value.array() > Scalar(0)).template cast<Scalar>() * self.grad.array();
  });
}

template <class Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor4<Scalar> out(a.shape());
  out.array() = Scalar(1) / (Scalar(1) + (-a.value().array()).exp());
  return make_result<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad)
      p.grad.array() += self.grad.array() * self.value.array() * (Scalar(1) - self.value.array());
  });
}

template <class Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array().tanh();
  return make_result<Scalar>(std::move(out), {a.node()}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad)
      p.grad.array() += self.grad.array() * (Scalar(1) - self.value.array().square());
  });
}

/// Temperature softmax along `axis`, stabilized by max subtraction.
template <class Scalar>
Var<Scalar> softmax(const Var<Scalar>& logits, int axis, Scalar temperature) {
  if (!(temperature > Scalar(0))) throw ConfigError("softmax temperature must be > 0");
  const AxisSplit s = split_axis(logits.shape(), axis);
  const auto& in = logits.value();
  Tensor4<Scalar> out(logits.shape());
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
      Scalar z = 0;
      for (Index k = 0; k < s.extent; ++k) {
        const Scalar e = std::exp((in[base + k * s.inner] - mx) / temperature);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (Index k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  return make_result<Scalar>(std::move(out), {logits.node()}, [s, temperature](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.extent * s.inner + i;
        Scalar dot = 0;
        for (Index k = 0; k < s.extent; ++k) dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        for (Index k = 0; k < s.extent; ++k) {
          const Index idx = base + k * s.inner;
          p.grad[idx] += self.value[idx] * (self.grad[idx] - dot) / temperature;
        }
      }
  });
}

/// Zeroes each element with probability `p` in train mode, rescaling survivors.
template <class Scalar>
Var<Scalar> dropout(const Var<Scalar>& a, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return a;
  Tensor4<Scalar> mask(a.shape());
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= p ? keep : Scalar(0);
  Tensor4<Scalar> out(a.shape());
  out.array() = a.value().array() * mask.array();
  return make_result<Scalar>(std::move(out), {a.node()}, [mask = std::move(mask)](Node<Scalar>& self) {
    auto& par = *self.parents[0];
    if (par.requires_grad) par.grad.array() += self.grad.array() * mask.array();
  });
}

// ---------------------------------------------------------------------------
// Layout ops

template <class Scalar>
Var<Scalar> slice(const Var<Scalar>& a, int axis, Index begin, Index count) {
  const AxisSplit s = split_axis(a.shape(), axis);
  if (begin < 0 || count < 0 || begin + count > s.extent)
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") out of range for extent " + std::to_string(s.extent));
  Shape4 shape = a.shape();
  shape[axis] = count;
  Tensor4<Scalar> out(shape);
  const auto& in = a.value();
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < count; ++k)
      std::copy_n(in.data() + (o * s.extent + begin + k) * s.inner, s.inner,
                  out.data() + (o * count + k) * s.inner);
  return make_result<Scalar>(std::move(out), {a.node()}, [s, begin, count](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index k = 0; k < count; ++k)
        for (Index i = 0; i < s.inner; ++i)
          p.grad[(o * s.extent + begin + k) * s.inner + i] += self.grad[(o * count + k) * s.inner + i];
  });
}

template <class Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape4 shape = parts.front().shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape4 probe = p.shape();
    probe[axis] = shape[axis];
    if (!(probe == shape))
      throw ShapeError("concat: " + p.shape().str() + " incompatible with " + shape.str() +
                       " along axis " + std::to_string(axis));
    total += p.shape()[axis];
  }
  shape[axis] = total;
  const AxisSplit s = split_axis(shape, axis);
  Tensor4<Scalar> out(shape);
  std::vector<Index> offsets;
  std::vector<std::shared_ptr<Node<Scalar>>> nodes;
  Index start = 0;
  for (const auto& p : parts) {
    const Index n = p.shape()[axis];
    for (Index o = 0; o < s.outer; ++o)
      std::copy_n(p.value().data() + o * n * s.inner, n * s.inner,
                  out.data() + (o * total + start) * s.inner);
    offsets.push_back(start);
    nodes.push_back(p.node());
    start += n;
  }
  return make_result<Scalar>(std::move(out), std::move(nodes), [s, total, offsets](Node<Scalar>& self) {
    for (std::size_t j = 0; j < self.parents.size(); ++j) {
      auto& p = *self.parents[j];
      if (!p.requires_grad) continue;
      const Index n = p.value.shape().size() / (s.outer * s.inner);
      for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < n * s.inner; ++i)
          p.grad[o * n * s.inner + i] += self.grad[(o * total + offsets[j]) * s.inner + i];
    }
  });
}

/// Output axis `a` takes input axis `perm[a]`.
template <class Scalar>
Var<Scalar> permute(const Var<Scalar>& a, std::array<int, 4> perm) {
  const Shape4 in = a.shape();
  Shape4 shape;
  for (int ax = 0; ax < 4; ++ax) shape[ax] = in[perm[ax]];
  std::array<Index, 4> in_stride{in.c * in.t * in.f, in.t * in.f, in.f, 1};
  std::array<Index, 4> stride;
  for (int ax = 0; ax < 4; ++ax) stride[ax] = in_stride[perm[ax]];
  std::vector<Index> map(static_cast<std::size_t>(shape.size()));
  Index o = 0;
  for (Index i0 = 0; i0 < shape.b; ++i0)
    for (Index i1 = 0; i1 < shape.c; ++i1)
      for (Index i2 = 0; i2 < shape.t; ++i2)
        for (Index i3 = 0; i3 < shape.f; ++i3)
          map[o++] = i0 * stride[0] + i1 * stride[1] + i2 * stride[2] + i3 * stride[3];
  Tensor4<Scalar> out(shape);
  for (Index i = 0; i < out.size(); ++i) out[i] = a.value()[map[i]];
  return make_result<Scalar>(std::move(out), {a.node()}, [map = std::move(map)](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < map.size(); ++i) p.grad[map[i]] += self.grad[static_cast<Index>(i)];
  });
}

/// Nearest-neighbour upsampling: every index along `axis` is repeated `factor` times.
template <class Scalar>
Var<Scalar> repeat_axis(const Var<Scalar>& a, int axis, Index factor) {
  if (factor == 1) return a;
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape4 shape = a.shape();
  shape[axis] *= factor;
  Tensor4<Scalar> out(shape);
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < s.extent * factor; ++k)
      std::copy_n(a.value().data() + (o * s.extent + k / factor) * s.inner, s.inner,
                  out.data() + (o * s.extent * factor + k) * s.inner);
  return make_result<Scalar>(std::move(out), {a.node()}, [s, factor](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (Index o = 0; o < s.outer; ++o)
      for (Index k = 0; k < s.extent * factor; ++k)
        for (Index i = 0; i < s.inner; ++i)
          p.grad[(o * s.extent + k / factor) * s.inner + i] +=
              self.grad[(o * s.extent * factor + k) * s.inner + i];
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  std::array<Index, 2> dilation{1, 1};  // (time, frequency)
  std::array<Index, 2> stride{1, 1};
  bool same = true;
  std::array<Index, 4> padding{0, 0, 0, 0};  // explicit: t_begin, t_end, f_begin, f_end
};

/// Resolved geometry of one convolution.
struct ConvGeometry {
  Index in_c, in_t, in_f;
  Index k_t, k_f;
  Index d_t, d_f;
  Index s_t, s_f;
  Index pad_t, pad_f;  // leading padding; trailing padding is implied by the output size
  Index out_t, out_f;

  Index rows() const { return in_c * k_t * k_f; }
  Index cols() const { return out_t * out_f; }
};

inline ConvGeometry conv_geometry(const Shape4& input, const Shape4& kernel, const Conv2dOptions& opt) {
  if (kernel.c != input.c)
    throw ShapeError("conv2d: kernel " + kernel.str() + " expects " + std::to_string(kernel.c) +
                     " input channels, input is " + input.str());
  if (opt.dilation[0] < 1 || opt.dilation[1] < 1 || opt.stride[0] < 1 || opt.stride[1] < 1)
    throw ConfigError("conv2d: dilation and stride must be >= 1");
  ConvGeometry g{};
  g.in_c = input.c;
  g.in_t = input.t;
  g.in_f = input.f;
  g.k_t = kernel.t;
  g.k_f = kernel.f;
  g.d_t = opt.dilation[0];
  g.d_f = opt.dilation[1];
  g.s_t = opt.stride[0];
  g.s_f = opt.stride[1];
  auto resolve = [](Index in, Index k, Index d, Index s, bool same, Index pb, Index pe, Index& pad,
                    Index& out) {
    const Index span = d * (k - 1) + 1;
    if (same) {
      out = (in + s - 1) / s;
      const Index total = std::max<Index>((out - 1) * s + span - in, 0);
      pad = total / 2;  // the odd cell goes to the end
    } else {
      pad = pb;
      const Index padded = in + pb + pe;
      out = padded >= span ? (padded - span) / s + 1 : 0;
    }
  };
  resolve(g.in_t, g.k_t, g.d_t, g.s_t, opt.same, opt.padding[0], opt.padding[1], g.pad_t, g.out_t);
  resolve(g.in_f, g.k_f, g.d_f, g.s_f, opt.same, opt.padding[2], opt.padding[3], g.pad_f, g.out_f);
  if (g.out_t <= 0 || g.out_f <= 0)
    throw ShapeError("conv2d: kernel " + kernel.str() + " with dilation (" + std::to_string(g.d_t) +
                     "," + std::to_string(g.d_f) + ") yields empty output for input " + input.str());
  return g;
}

namespace detail {

/// Unfolds `x` into a [rows, B*cols] matrix; column index is b*cols + t*out_f + f.
template <class Scalar>
typename Tensor4<Scalar>::RowMatrix im2col(const Tensor4<Scalar>& x, const ConvGeometry& g) {
  const Index batch = x.shape().b;
  const Index ncols = g.cols();
  typename Tensor4<Scalar>::RowMatrix cols(g.rows(), batch * ncols);
  for (Index ci = 0; ci < g.in_c; ++ci)
    for (Index i = 0; i < g.k_t; ++i)
      for (Index j = 0; j < g.k_f; ++j) {
        const Index r = (ci * g.k_t + i) * g.k_f + j;
        Scalar* row = cols.row(r).data();
        for (Index b = 0; b < batch; ++b) {
          const Scalar* plane = x.data() + (b * g.in_c + ci) * g.in_t * g.in_f;
          for (Index to = 0; to < g.out_t; ++to) {
            Scalar* dst = row + b * ncols + to * g.out_f;
            const Index ti = to * g.s_t - g.pad_t + i * g.d_t;
            if (ti < 0 || ti >= g.in_t) {
              std::fill_n(dst, g.out_f, Scalar(0));
              continue;
            }
            const Scalar* src = plane + ti * g.in_f;
            for (Index fo = 0; fo < g.out_f; ++fo) {
              const Index fi = fo * g.s_f - g.pad_f + j * g.d_f;
              dst[fo] = (fi >= 0 && fi < g.in_f) ? src[fi] : Scalar(0);
            }
          }
        }
      }
  return cols;
}

/// Adjoint of im2col: scatters column gradients back onto `dx`.
template <class Scalar>
void col2im(const typename Tensor4<Scalar>::RowMatrix& dcols, const ConvGeometry& g, Tensor4<Scalar>& dx) {
  const Index batch = dx.shape().b;
  const Index ncols = g.cols();
  for (Index ci = 0; ci < g.in_c; ++ci)
    for (Index i = 0; i < g.k_t; ++i)
      for (Index j = 0; j < g.k_f; ++j) {
        const Index r = (ci * g.k_t + i) * g.k_f + j;
        const Scalar* row = dcols.row(r).data();
        for (Index b = 0; b < batch; ++b) {
          Scalar* plane = dx.data() + (b * g.in_c + ci) * g.in_t * g.in_f;
          for (Index to = 0; to < g.out_t; ++to) {
            const Index ti = to * g.s_t - g.pad_t + i * g.d_t;
            if (ti < 0 || ti >= g.in_t) continue;
            const Scalar* src = row + b * ncols + to * g.out_f;
            Scalar* dst = plane + ti * g.in_f;
            for (Index fo = 0; fo < g.out_f; ++fo) {
              const Index fi = fo * g.s_f - g.pad_f + j * g.d_f;
              if (fi >= 0 && fi < g.in_f) dst[fi] += src[fo];
            }
          }
        }
      }
}

/// Copies a [C, B*cols] matrix into a [B, C, out_t, out_f] tensor at channel offset.
template <class Scalar>
void scatter_channels(const typename Tensor4<Scalar>::RowMatrix& y, Index channel_offset, Tensor4<Scalar>& out) {
  const Shape4 s = out.shape();
  const Index plane = s.t * s.f;
  for (Index c = 0; c < y.rows(); ++c)
    for (Index b = 0; b < s.b; ++b)
      std::copy_n(y.row(c).data() + b * plane, plane, out.data() + (b * s.c + channel_offset + c) * plane);
}

template <class Scalar>
typename Tensor4<Scalar>::RowMatrix gather_channels(const Tensor4<Scalar>& t, Index channel_offset, Index count) {
  const Shape4 s = t.shape();
  const Index plane = s.t * s.f;
  typename Tensor4<Scalar>::RowMatrix y(count, s.b * plane);
  for (Index c = 0; c < count; ++c)
    for (Index b = 0; b < s.b; ++b)
      std::copy_n(t.data() + (b * s.c + channel_offset + c) * plane, plane, y.row(c).data() + b * plane);
  return y;
}

}  // namespace detail

/// 2-D cross-correlation with dilation, stride and zero padding.
/// `kernel` is [C_out, C_in, k_T, k_F]; `bias` (optional) has C_out values.
template <class Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Var<Scalar>& bias,
                   const Conv2dOptions& opt = {}) {
  const Shape4 ks = kernel.shape();
  const ConvGeometry g = conv_geometry(input.shape(), ks, opt);
  const Index batch = input.shape().b;
  const Index c_out = ks.b;
  if (bias.defined() && bias.value().size() != c_out)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.value().size()) + " values for " +
                     std::to_string(c_out) + " output channels");
  const auto cols = detail::im2col(input.value(), g);
  const auto w = kernel.value().matrix(c_out, g.rows());
  typename Tensor4<Scalar>::RowMatrix y = w * cols;
  if (bias.defined()) y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().data(), c_out);
  Tensor4<Scalar> out(Shape4{batch, c_out, g.out_t, g.out_f});
  detail::scatter_channels<Scalar>(y, 0, out);

  std::vector<std::shared_ptr<Node<Scalar>>> parents{input.node(), kernel.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result<Scalar>(std::move(out), std::move(parents), [g, c_out](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const auto dy = detail::gather_channels(self.grad, 0, c_out);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& pb = *self.parents[2];
      pb.grad.array() += dy.rowwise().sum().array();
    }
    if (!px.requires_grad && !pw.requires_grad) return;
    const auto cols = detail::im2col(px.value, g);
    if (pw.requires_grad) pw.grad.matrix(c_out, g.rows()).noalias() += dy * cols.transpose();
    if (px.requires_grad) {
      const typename Tensor4<Scalar>::RowMatrix dcols = pw.value.matrix(c_out, g.rows()).transpose() * dy;
      detail::col2im<Scalar>(dcols, g, px.grad);
    }
  });
}

template <class Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Conv2dOptions& opt = {}) {
  return conv2d(input, kernel, Var<Scalar>(), opt);
}

/// Adds one value per channel (axis 1).
template <class Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  const Shape4 s = x.shape();
  if (bias.value().size() != s.c)
    throw ShapeError("add_channel_bias: " + std::to_string(bias.value().size()) + " values for " +
                     std::to_string(s.c) + " channels");
  const Index plane = s.t * s.f;
  Tensor4<Scalar> out = x.value();
  for (Index b = 0; b < s.b; ++b)
    for (Index c = 0; c < s.c; ++c) out.array().segment((b * s.c + c) * plane, plane) += bias.value()[c];
  return make_result<Scalar>(std::move(out), {x.node(), bias.node()}, [s, plane](Node<Scalar>& self) {
    detail::accumulate(*self.parents[0], self.grad);
    auto& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    for (Index b = 0; b < s.b; ++b)
      for (Index c = 0; c < s.c; ++c) pb.grad[c] += self.grad.array().segment((b * s.c + c) * plane, plane).sum();
  });
}

/// Non-overlapping mean pooling; extents must divide evenly.
template <class Scalar>
Var<Scalar> avg_pool2d(const Var<Scalar>& input, Index pool_t, Index pool_f) {
  const Shape4 s = input.shape();
  if (pool_t < 1 || pool_f < 1) throw ConfigError("avg_pool2d: window must be >= 1");
  if (s.t % pool_t != 0 || s.f % pool_f != 0)
    throw ShapeError("avg_pool2d: window (" + std::to_string(pool_t) + "," + std::to_string(pool_f) +
                     ") does not divide " + s.str());
  if (pool_t == 1 && pool_f == 1) return input;
  const Shape4 os{s.b, s.c, s.t / pool_t, s.f / pool_f};
  const Scalar norm = Scalar(1) / static_cast<Scalar>(pool_t * pool_f);
  Tensor4<Scalar> out(os);
  const auto& in = input.value();
  for (Index bc = 0; bc < s.b * s.c; ++bc)
    for (Index t = 0; t < s.t; ++t)
      for (Index f = 0; f < s.f; ++f)
        out[(bc * os.t + t / pool_t) * os.f + f / pool_f] += in[(bc * s.t + t) * s.f + f];
  out.array() *= norm;
  return make_result<Scalar>(std::move(out), {input.node()}, [s, os, pool_t, pool_f, norm](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (Index bc = 0; bc < s.b * s.c; ++bc)
      for (Index t = 0; t < s.t; ++t)
        for (Index f = 0; f < s.f; ++f)
          p.grad[(bc * s.t + t) * s.f + f] += norm * self.grad[(bc * os.t + t / pool_t) * os.f + f / pool_f];
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Running statistics of one batch-norm layer; mutated by train-mode forwards.
struct BatchNormState {
  Eigen::ArrayXd running_mean;
  Eigen::ArrayXd running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNormState(Index channels = 0)
      : running_mean(Eigen::ArrayXd::Zero(channels)), running_var(Eigen::ArrayXd::Ones(channels)) {}
};

/// Per-channel (axis 1) normalization over (B, T, F).
template <class Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormState& state, bool train) {
  const Shape4 s = input.shape();
  const Index channels = s.c;
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      state.running_mean.size() != channels)
    throw ShapeError("batch_norm: parameters sized for a different channel count than " + s.str());
  if (!(state.eps > 0.0)) throw ConfigError("batch_norm: eps must be > 0");
  const Index plane = s.t * s.f;
  const Index count = s.b * plane;
  const auto& in = input.value();

  Eigen::Array<Scalar, Eigen::Dynamic, 1> mu(channels), inv_std(channels);
  if (train) {
    for (Index c = 0; c < channels; ++c) {
      Scalar acc = 0;
      for (Index b = 0; b < s.b; ++b) acc += in.array().segment((b * channels + c) * plane, plane).sum();
      const Scalar m = acc / static_cast<Scalar>(count);
      Scalar sq = 0;
      for (Index b = 0; b < s.b; ++b)
        sq += (in.array().segment((b * channels + c) * plane, plane) - m).square().sum();
      const Scalar var = sq / static_cast<Scalar>(count);
      mu[c] = m;
      inv_std[c] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(state.eps));
      const double unbiased = count > 1 ? static_cast<double>(sq) / static_cast<double>(count - 1) : 0.0;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * static_cast<double>(m);
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (Index c = 0; c < channels; ++c) {
      mu[c] = static_cast<Scalar>(state.running_mean[c]);
      inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(state.running_var[c] + state.eps));
    }
  }

  Tensor4<Scalar> xhat(s);
  Tensor4<Scalar> out(s);
  for (Index b = 0; b < s.b; ++b)
    for (Index c = 0; c < channels; ++c) {
      const Index off = (b * channels + c) * plane;
      xhat.array().segment(off, plane) = (in.array().segment(off, plane) - mu[c]) * inv_std[c];
      out.array().segment(off, plane) = xhat.array().segment(off, plane) * gamma.value()[c] + beta.value()[c];
    }

  return make_result<Scalar>(
      std::move(out), {input.node(), gamma.node(), beta.node()},
      [s, plane, count, train, xhat = std::move(xhat), inv_std](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const Index channels = s.c;
        for (Index c = 0; c < channels; ++c) {
          Scalar dgamma = 0, dbeta = 0;
          for (Index b = 0; b < s.b; ++b) {
            const Index off = (b * channels + c) * plane;
            dgamma += (self.grad.array().segment(off, plane) * xhat.array().segment(off, plane)).sum();
            dbeta += self.grad.array().segment(off, plane).sum();
          }
          if (pg.requires_grad) pg.grad[c] += dgamma;
          if (pb.requires_grad) pb.grad[c] += dbeta;
          if (!px.requires_grad) continue;
          const Scalar g = pg.value[c];
          const Scalar n = static_cast<Scalar>(count);
          for (Index b = 0; b < s.b; ++b) {
            const Index off = (b * channels + c) * plane;
            if (train) {
              // dx = g*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
              px.grad.array().segment(off, plane) +=
                  g * inv_std[c] / n *
                  (n * self.grad.array().segment(off, plane) - dbeta - xhat.array().segment(off, plane) * dgamma);
            } else {
              px.grad.array().segment(off, plane) += g * inv_std[c] * self.grad.array().segment(off, plane);
            }
          }
        }
      });
}

/// Context gating: x ⊙ σ(W x + b) with W mixing channels at every (t, f).
/// `weight` is [C, C, 1, 1].
template <class Scalar>
Var<Scalar> context_gate(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  Conv2dOptions opt;
  opt.same = false;
  return mul(x, sigmoid(conv2d(x, weight, bias, opt)));
}

// ---------------------------------------------------------------------------
// Dense layers on the last axis

/// y = x W^T + b over the last axis. `weight` holds [out, in] values.
template <class Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const Shape4 s = x.shape();
  const Index in = s.f;
  const Index out_dim = weight.value().size() / in;
  if (out_dim * in != weight.value().size())
    throw ShapeError("linear: weight of " + std::to_string(weight.value().size()) +
                     " values incompatible with input width " + std::to_string(in));
  if (bias.defined() && bias.value().size() != out_dim) throw ShapeError("linear: bias size mismatch");
  const Index rows = s.size() / in;
  Shape4 os = s;
  os.f = out_dim;
  Tensor4<Scalar> out(os);
  auto w = weight.value().matrix(out_dim, in);
  out.matrix(rows, out_dim).noalias() = x.value().matrix(rows, in) * w.transpose();
  if (bias.defined())
    out.matrix(rows, out_dim).rowwise() +=
        Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.value().data(), out_dim);
  std::vector<std::shared_ptr<Node<Scalar>>> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make_result<Scalar>(std::move(out), std::move(parents), [rows, in, out_dim](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const auto dy = self.grad.matrix(rows, out_dim);
    if (px.requires_grad) px.grad.matrix(rows, in).noalias() += dy * pw.value.matrix(out_dim, in);
    if (pw.requires_grad) pw.grad.matrix(out_dim, in).noalias() += dy.transpose() * px.value.matrix(rows, in);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad)
      self.parents[2]->grad.matrix(1, out_dim) += dy.colwise().sum();
  });
}

/// One direction of a gated recurrent layer over the time axis of a
/// [B, 1, T, D] sequence. Gate order (reset, update, new):
///   r = σ(W_ir x + b_ir + W_hr h + b_hr)
///   z = σ(W_iz x + b_iz + W_hz h + b_hz)
///   n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
///   h' = (1 − z) ⊙ n + z ⊙ h
template <class Scalar>
Var<Scalar> gru(const Var<Scalar>& x, const Var<Scalar>& w_ih, const Var<Scalar>& w_hh,
                const Var<Scalar>& b_ih, const Var<Scalar>& b_hh, bool reverse) {
  using Mat = typename Tensor4<Scalar>::RowMatrix;
  using Stride = Eigen::OuterStride<>;
  const Shape4 s = x.shape();
  if (s.c != 1) throw ShapeError("gru expects [B,1,T,D], got " + s.str());
  const Index batch = s.b, steps = s.t, in = s.f;
  const Index hidden3 = w_hh.value().size();
  const Index hidden = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(hidden3) / 3.0)));
  if (3 * hidden * hidden != hidden3 || w_ih.value().size() != 3 * hidden * in ||
      b_ih.value().size() != 3 * hidden || b_hh.value().size() != 3 * hidden)
    throw ShapeError("gru: parameter sizes inconsistent with input width " + std::to_string(in));
  const Index h = hidden;

  const auto wih = w_ih.value().matrix(3 * h, in);
  const auto whh = w_hh.value().matrix(3 * h, h);
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bih(b_ih.value().data(), 3 * h);
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bhh(b_hh.value().data(), 3 * h);

  Mat gi = x.value().matrix(batch * steps, in) * wih.transpose();  // row = b*T + t
  gi.rowwise() += bih;

  // Per-step caches, each [steps][batch x h].
  std::vector<Mat> r_cache(steps), z_cache(steps), n_cache(steps), hn_cache(steps), hprev_cache(steps);
  Tensor4<Scalar> out(Shape4{batch, 1, steps, h});
  Mat hprev = Mat::Zero(batch, h);
  for (Index step = 0; step < steps; ++step) {
    const Index t = reverse ? steps - 1 - step : step;
    Eigen::Map<const Mat, 0, Stride> git(gi.data() + t * 3 * h, batch, 3 * h, Stride(steps * 3 * h));
    Mat gh = hprev * whh.transpose();
    gh.rowwise() += bhh;
    Mat r = (Scalar(1) / (Scalar(1) + (-(git.leftCols(h) + gh.leftCols(h))).array().exp())).matrix();
    Mat z = (Scalar(1) / (Scalar(1) + (-(git.middleCols(h, h) + gh.middleCols(h, h))).array().exp())).matrix();
    Mat hn = gh.rightCols(h);
    Mat n = (git.rightCols(h).array() + r.array() * hn.array()).tanh().matrix();
    Mat hnew = ((Scalar(1) - z.array()) * n.array() + z.array() * hprev.array()).matrix();
    Eigen::Map<Mat, 0, Stride>(out.data() + t * h, batch, h, Stride(steps * h)) = hnew;
    r_cache[t] = std::move(r);
    z_cache[t] = std::move(z);
    n_cache[t] = std::move(n);
    hn_cache[t] = std::move(hn);
    hprev_cache[t] = std::move(hprev);
    hprev = std::move(hnew);
  }

  return make_result<Scalar>(
      std::move(out), {x.node(), w_ih.node(), w_hh.node(), b_ih.node(), b_hh.node()},
      [=, r_cache = std::move(r_cache), z_cache = std::move(z_cache), n_cache = std::move(n_cache),
       hn_cache = std::move(hn_cache), hprev_cache = std::move(hprev_cache)](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pwih = *self.parents[1];
        auto& pwhh = *self.parents[2];
        auto& pbih = *self.parents[3];
        auto& pbhh = *self.parents[4];
        const auto whh_v = pwhh.value.matrix(3 * h, h);
        Mat dgi = Mat::Zero(batch * steps, 3 * h);
        Mat dwhh = Mat::Zero(3 * h, h);
        Mat dbhh = Mat::Zero(1, 3 * h);
        Mat dh_next = Mat::Zero(batch, h);
        for (Index step = steps - 1; step >= 0; --step) {
          const Index t = reverse ? steps - 1 - step : step;
          Mat dh = Eigen::Map<const Mat, 0, Stride>(self.grad.data() + t * h, batch, h, Stride(steps * h));
          dh += dh_next;
          const auto& r = r_cache[t];
          const auto& z = z_cache[t];
          const auto& n = n_cache[t];
          const auto& hn = hn_cache[t];
          const auto& hp = hprev_cache[t];
          const Mat dn_pre = (dh.array() * (Scalar(1) - z.array()) * (Scalar(1) - n.array().square())).matrix();
          const Mat dz_pre = (dh.array() * (hp.array() - n.array()) * z.array() * (Scalar(1) - z.array())).matrix();
          const Mat dr_pre = (dn_pre.array() * hn.array() * r.array() * (Scalar(1) - r.array())).matrix();
          Mat dgh(batch, 3 * h);
          dgh.leftCols(h) = dr_pre;
          dgh.middleCols(h, h) = dz_pre;
          dgh.rightCols(h) = (dn_pre.array() * r.array()).matrix();
          Eigen::Map<Mat, 0, Stride> dgit(dgi.data() + t * 3 * h, batch, 3 * h, Stride(steps * 3 * h));
          dgit.leftCols(h) = dr_pre;
          dgit.middleCols(h, h) = dz_pre;
          dgit.rightCols(h) = dn_pre;
          dwhh.noalias() += dgh.transpose() * hp;
          dbhh += dgh.colwise().sum();
          dh_next = dgh * whh_v + (dh.array() * z.array()).matrix();
        }
        if (pwhh.requires_grad) pwhh.grad.matrix(3 * h, h) += dwhh;
        if (pbhh.requires_grad) pbhh.grad.matrix(1, 3 * h) += dbhh;
        if (pbih.requires_grad) pbih.grad.matrix(1, 3 * h) += dgi.colwise().sum();
        if (pwih.requires_grad)
          pwih.grad.matrix(3 * h, in).noalias() += dgi.transpose() * px.value.matrix(batch * steps, in);
        if (px.requires_grad)
          px.grad.matrix(batch * steps, in).noalias() += dgi * pwih.value.matrix(3 * h, in);
      });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy of probabilities against constant targets.
template <class Scalar>
Var<Scalar> binary_cross_entropy(const Var<Scalar>& prob, const Tensor4<Scalar>& target) {
  detail::require_same_shape(prob.shape(), target.shape(), "binary_cross_entropy");
  const Scalar lo = static_cast<Scalar>(1e-7);
  const Scalar hi = Scalar(1) - lo;
  const Index n = prob.value().size();
  const auto p = prob.value().array().max(lo).min(hi);
  Tensor4<Scalar> out(detail::scalar_shape());
  out[0] = -(target.array() * p.log() + (Scalar(1) - target.array()) * (Scalar(1) - p).log()).sum() /
           static_cast<Scalar>(n);
  return make_result<Scalar>(std::move(out), {prob.node()}, [target, lo, hi, n](Node<Scalar>& self) {
    auto& pp = *self.parents[0];
    if (!pp.requires_grad) return;
    const Scalar g = self.grad[0] / static_cast<Scalar>(n);
    for (Index i = 0; i < n; ++i) {
      const Scalar v = pp.value[i];
      if (v < lo || v > hi) continue;
      pp.grad[i] += g * (v - target[i]) / (v * (Scalar(1) - v));
    }
  });
}

}  // namespace fdy
