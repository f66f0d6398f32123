#pragma once

// Frequency dynamic convolution and its partial / multi / dilated variants.
//
// A layer holds n dynamic branches and an optional static branch. Each dynamic
// branch owns K basis kernels and an attention head that produces, for every
// frequency bin, a convex combination of the kernels' responses. Outputs are
// concatenated on the channel axis as [branch 1, ..., branch n, static].

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fdy/layer_config.hpp"
#include "fdy/ops.hpp"
#include "fdy/params.hpp"

namespace fdy {

/// One dynamic branch's inputs to the fused convolution.
template <class Scalar>
struct DynamicBranchTerms {
  std::vector<Var<Scalar>> kernels;  // K tensors [C_branch, C_in, k_T, k_F]
  std::vector<int> dilations;        // frequency dilation per kernel
  Var<Scalar> attention;             // [B, K, 1, F]
  Var<Scalar> bias;                  // C_branch values, added once after the weighted sum
};

/// out[:, branch i] = Σ_k attn_ik(f) · conv(x; W_ik, dilation (1, d_ik)) + bias_i,
/// out[:, static]   = conv(x; W_s) + bias_s.
/// Stride 1, "same" zero padding. Kernels sharing a dilation share one unfold
/// and one matrix product.
template <class Scalar>
Var<Scalar> frequency_dynamic_conv(const Var<Scalar>& x, const std::vector<DynamicBranchTerms<Scalar>>& branches,
                                   const Var<Scalar>& static_kernel, const Var<Scalar>& static_bias) {
  using Mat = typename Tensor4<Scalar>::RowMatrix;
  const Shape4 xs = x.shape();
  Shape4 ks{};
  bool have_kernel = false;

  struct Member {
    std::size_t kernel_parent;
    Index channels;
    Index channel_offset;
    int branch;  // -1: static
    Index k;
    Index row;   // first row in the group's stacked weight
  };
  struct Group {
    int dilation;
    std::vector<Member> members;
    Index rows = 0;
    ConvGeometry geom{};
  };

  std::vector<std::shared_ptr<Node<Scalar>>> parents{x.node()};
  std::map<int, Group> groups;
  std::vector<std::size_t> attention_parent(branches.size());
  std::vector<std::size_t> bias_parent(branches.size());
  std::vector<Index> branch_offset(branches.size());
  Index offset = 0;

  for (std::size_t bi = 0; bi < branches.size(); ++bi) {
    const auto& br = branches[bi];
    if (br.kernels.empty() || br.kernels.size() != br.dilations.size())
      throw ShapeError("dynamic branch " + std::to_string(bi) + ": kernel/dilation count mismatch");
    const Index cb = br.kernels.front().shape().b;
    const Index n_k = static_cast<Index>(br.kernels.size());
    const Shape4 as = br.attention.shape();
    if (as.b != xs.b || as.c != n_k || as.t != 1 || as.f != xs.f)
      throw ShapeError("dynamic branch " + std::to_string(bi) + ": attention " + as.str() +
                       " does not match [B,K,1,F] for input " + xs.str());
    if (br.bias.value().size() != cb) throw ShapeError("dynamic branch bias size mismatch");
    branch_offset[bi] = offset;
    for (Index k = 0; k < n_k; ++k) {
      const auto& w = br.kernels[static_cast<std::size_t>(k)];
      if (!have_kernel) {
        ks = w.shape();
        have_kernel = true;
      }
      if (w.shape().b != cb || w.shape().c != ks.c || w.shape().t != ks.t || w.shape().f != ks.f)
        throw ShapeError("basis kernels of a layer must share one shape, got " + w.shape().str() + " vs " + ks.str());
      parents.push_back(w.node());
      auto& g = groups[br.dilations[static_cast<std::size_t>(k)]];
      g.dilation = br.dilations[static_cast<std::size_t>(k)];
      g.members.push_back(Member{parents.size() - 1, cb, offset, static_cast<int>(bi), k, g.rows});
      g.rows += cb;
    }
    parents.push_back(br.attention.node());
    attention_parent[bi] = parents.size() - 1;
    parents.push_back(br.bias.node());
    bias_parent[bi] = parents.size() - 1;
    offset += cb;
  }
  std::size_t static_bias_parent = 0;
  const Index static_offset = offset;
  if (static_kernel.defined()) {
    const Shape4 ss = static_kernel.shape();
    if (!have_kernel) {
      ks = ss;
      have_kernel = true;
    }
    if (ss.c != ks.c || ss.t != ks.t || ss.f != ks.f) throw ShapeError("static kernel shape mismatch");
    parents.push_back(static_kernel.node());
    auto& g = groups[1];
    g.dilation = 1;
    g.members.push_back(Member{parents.size() - 1, ss.b, offset, -1, 0, g.rows});
    g.rows += ss.b;
    offset += ss.b;
    if (!static_bias.defined() || static_bias.value().size() != ss.b) throw ShapeError("static bias size mismatch");
    parents.push_back(static_bias.node());
    static_bias_parent = parents.size() - 1;
  }
  if (!have_kernel) throw ConfigError("frequency_dynamic_conv: layer has no branches");
  const Index c_out = offset;

  Tensor4<Scalar> out(Shape4{xs.b, c_out, xs.t, xs.f});
  const Index plane = xs.t * xs.f;
  std::vector<Group> group_list;
  std::vector<Mat> responses;
  for (auto& [d, g] : groups) {
    Conv2dOptions opt;
    opt.dilation = {1, d};
    g.geom = conv_geometry(xs, ks, opt);
    if (g.geom.out_t != xs.t || g.geom.out_f != xs.f) throw ShapeError("frequency_dynamic_conv needs same-size output");
    const Index rows = g.rows;
    const Index r = g.geom.rows();
    Mat w(rows, r);
    for (const auto& m : g.members) w.middleRows(m.row, m.channels) = parents[m.kernel_parent]->value.matrix(m.channels, r);
    const Mat cols = detail::im2col(x.value(), g.geom);
    Mat y = w * cols;
    for (const auto& m : g.members) {
      for (Index c = 0; c < m.channels; ++c)
        for (Index b = 0; b < xs.b; ++b) {
          const Scalar* src = y.row(m.row + c).data() + b * plane;
          Scalar* dst = out.data() + (b * c_out + m.channel_offset + c) * plane;
          if (m.branch < 0) {
            std::copy_n(src, plane, dst);
          } else {
            const auto& attn = branches[static_cast<std::size_t>(m.branch)].attention.value();
            const Index n_k = attn.shape().c;
            const Scalar* a = attn.data() + (b * n_k + m.k) * xs.f;
            for (Index t = 0; t < xs.t; ++t)
              for (Index f = 0; f < xs.f; ++f) dst[t * xs.f + f] += a[f] * src[t * xs.f + f];
          }
        }
    }
    group_list.push_back(g);
    responses.push_back(std::move(y));
  }
  auto add_bias = [&](const Tensor4<Scalar>& bias, Index off) {
    for (Index b = 0; b < xs.b; ++b)
      for (Index c = 0; c < bias.size(); ++c) out.array().segment((b * c_out + off + c) * plane, plane) += bias[c];
  };
  for (std::size_t bi = 0; bi < branches.size(); ++bi) add_bias(branches[bi].bias.value(), branch_offset[bi]);
  if (static_kernel.defined()) add_bias(static_bias.value(), static_offset);

  const bool has_static = static_kernel.defined();
  return make_result<Scalar>(
      std::move(out), std::move(parents),
      [=, group_list = std::move(group_list), responses = std::move(responses)](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        const auto& dout = self.grad;
        auto bias_grad = [&](std::size_t parent, Index off) {
          auto& pb = *self.parents[parent];
          if (!pb.requires_grad) return;
          for (Index b = 0; b < xs.b; ++b)
            for (Index c = 0; c < pb.value.size(); ++c) pb.grad[c] += dout.array().segment((b * c_out + off + c) * plane, plane).sum();
        };
        for (std::size_t bi = 0; bi < bias_parent.size(); ++bi) bias_grad(bias_parent[bi], branch_offset[bi]);
        if (has_static) bias_grad(static_bias_parent, static_offset);

        for (std::size_t gi = 0; gi < group_list.size(); ++gi) {
          const auto& g = group_list[gi];
          const auto& y = responses[gi];
          const Index r = g.geom.rows();
          Mat dy(g.rows, xs.b * plane);
          bool kernels_need = false;
          for (const auto& m : g.members) {
            kernels_need = kernels_need || self.parents[m.kernel_parent]->requires_grad;
            for (Index c = 0; c < m.channels; ++c)
              for (Index b = 0; b < xs.b; ++b) {
                const Scalar* go = dout.data() + (b * c_out + m.channel_offset + c) * plane;
                Scalar* dst = dy.row(m.row + c).data() + b * plane;
                if (m.branch < 0) {
                  std::copy_n(go, plane, dst);
                  continue;
                }
                auto& pa = *self.parents[attention_parent[static_cast<std::size_t>(m.branch)]];
                const Index n_k = pa.value.shape().c;
                const Scalar* a = pa.value.data() + (b * n_k + m.k) * xs.f;
                const Scalar* yr = y.row(m.row + c).data() + b * plane;
                Scalar* da = pa.requires_grad ? pa.grad.data() + (b * n_k + m.k) * xs.f : nullptr;
                for (Index t = 0; t < xs.t; ++t)
                  for (Index f = 0; f < xs.f; ++f) {
                    const Index i = t * xs.f + f;
                    dst[i] = a[f] * go[i];
                    if (da) da[f] += yr[i] * go[i];
                  }
              }
          }
          if (!kernels_need && !px.requires_grad) continue;
          const Mat cols = detail::im2col(px.value, g.geom);
          if (kernels_need) {
            const Mat dw = dy * cols.transpose();
            for (const auto& m : g.members) {
              auto& pk = *self.parents[m.kernel_parent];
              if (pk.requires_grad) pk.grad.matrix(m.channels, r) += dw.middleRows(m.row, m.channels);
            }
          }
          if (px.requires_grad) {
            Mat w(g.rows, r);
            for (const auto& m : g.members) w.middleRows(m.row, m.channels) = self.parents[m.kernel_parent]->value.matrix(m.channels, r);
            const Mat dcols = w.transpose() * dy;
            detail::col2im<Scalar>(dcols, g.geom, px.grad);
          }
        }
      });
}

/// Parameters and forward pass of one frequency-attention head.
/// time-mean → 1-D freq conv (C_in→hidden, no bias) → batch norm → relu →
/// 1-D freq conv (hidden→K, bias) → temperature softmax over K.
template <class Scalar>
struct AttentionHead {
  Var<Scalar> conv1;
  Var<Scalar> norm_gamma;
  Var<Scalar> norm_beta;
  std::shared_ptr<BatchNormState> norm_state;
  Var<Scalar> conv2;
  Var<Scalar> conv2_bias;
  Scalar temperature = Scalar(31);

  static AttentionHead create(const AttentionHeadConfig& cfg, Index c_in, Index n_kernels,
                              ParameterStore<Scalar>& store, const std::string& prefix, Rng& rng) {
    AttentionHead head;
    const Index hidden = cfg.hidden(c_in);
    const Index kf1 = cfg.kernel_f, kf2 = cfg.logit_kernel_f;
    head.conv1 = store.add_uniform(prefix + ".conv1.weight", {hidden, c_in, kf1}, ParamRole::Attention,
                                   Shape4{hidden, c_in, 1, kf1}, fan_in_bound(c_in * kf1), rng);
    head.norm_gamma = store.add_constant(prefix + ".norm.gamma", {hidden}, ParamRole::Attention, Shape4{1, 1, 1, hidden}, Scalar(1));
    head.norm_beta = store.add_constant(prefix + ".norm.beta", {hidden}, ParamRole::Attention, Shape4{1, 1, 1, hidden}, Scalar(0));
    head.norm_state = store.add_norm_state(prefix + ".norm", hidden);
    head.conv2 = store.add_uniform(prefix + ".conv2.weight", {n_kernels, hidden, kf2}, ParamRole::Attention,
                                   Shape4{n_kernels, hidden, 1, kf2}, fan_in_bound(hidden * kf2), rng);
    head.conv2_bias = store.add_constant(prefix + ".conv2.bias", {n_kernels}, ParamRole::Attention, Shape4{1, 1, 1, n_kernels}, Scalar(0));
    head.temperature = static_cast<Scalar>(cfg.temperature);
    return head;
  }

  /// Attention over basis kernels, [B, K, 1, F]; sums to 1 over K at every (b, f).
  Var<Scalar> forward(const Var<Scalar>& x, bool train) const {
    const Var<Scalar> pooled = mean_axis(x, 2);
    Var<Scalar> h = conv2d(pooled, conv1);
    h = relu(batch_norm(h, norm_gamma, norm_beta, *norm_state, train));
    const Var<Scalar> logits = conv2d(h, conv2, conv2_bias);
    return softmax(logits, 1, temperature);
  }
};

template <class Scalar>
Var<Scalar> attention_weights(const Var<Scalar>& x, const AttentionHead<Scalar>& head, bool train) {
  return head.forward(x, train);
}

/// A single dynamic branch without static counterpart.
template <class Scalar>
Var<Scalar> fdy_branch_forward(const Var<Scalar>& x, const std::vector<Var<Scalar>>& kernels,
                               const std::vector<int>& dilations, const Var<Scalar>& bias,
                               const Var<Scalar>& attention) {
  return frequency_dynamic_conv<Scalar>(x, {DynamicBranchTerms<Scalar>{kernels, dilations, attention, bias}},
                                        Var<Scalar>(), Var<Scalar>());
}

template <class Scalar>
struct DynamicBranch {
  std::vector<Var<Scalar>> kernels;
  std::vector<int> dilations;
  Var<Scalar> bias;
  AttentionHead<Scalar> head;
};

/// Multi-dilated frequency dynamic convolution layer. Covers plain convolution
/// (no branches), FDY (one full-width branch), PFD, MFD, DFD and MDFD.
template <class Scalar>
class MDFDConv {
 public:
  MDFDConv() = default;

  /// `validated` must come from validate_config for this layer's input extent.
  MDFDConv(const ValidatedLayer& validated, ParameterStore<Scalar>& store, const std::string& prefix, Rng& rng)
      : config_(validated.config) {
    const auto& cfg = config_;
    const Index c_in = cfg.in_channels;
    const Index kt = cfg.kernel_t, kf = cfg.kernel_f;
    const double bound = fan_in_bound(c_in * kt * kf);
    for (std::size_t i = 0; i < cfg.branches.size(); ++i) {
      const std::string bp = prefix + ".branch" + std::to_string(i);
      const Index cb = cfg.branch_channels(i);
      DynamicBranch<Scalar> br;
      br.dilations = validated.dilations[i];
      for (std::size_t k = 0; k < br.dilations.size(); ++k)
        br.kernels.push_back(store.add_uniform(bp + ".kernel" + std::to_string(k), {cb, c_in, kt, kf},
                                               ParamRole::BasisKernel, Shape4{cb, c_in, kt, kf}, bound, rng));
      br.bias = store.add_constant(bp + ".bias", {cb}, ParamRole::ConvBias, Shape4{1, 1, 1, cb}, Scalar(0));
      br.head = AttentionHead<Scalar>::create(cfg.attention, c_in, static_cast<Index>(br.dilations.size()), store,
                                              bp + ".attention", rng);
      branches_.push_back(std::move(br));
    }
    const Index cs = cfg.static_channels();
    if (cs > 0) {
      static_kernel_ = store.add_uniform(prefix + ".static.weight", {cs, c_in, kt, kf}, ParamRole::StaticKernel,
                                         Shape4{cs, c_in, kt, kf}, bound, rng);
      static_bias_ = store.add_constant(prefix + ".static.bias", {cs}, ParamRole::ConvBias, Shape4{1, 1, 1, cs}, Scalar(0));
    }
  }

  Var<Scalar> forward(const Var<Scalar>& x, bool train) const {
    if (x.shape().c != config_.in_channels)
      throw ShapeError("MDFD layer expects " + std::to_string(config_.in_channels) + " channels, input is " +
                       x.shape().str());
    if (branches_.empty()) return conv2d(x, static_kernel_, static_bias_);
    std::vector<DynamicBranchTerms<Scalar>> terms;
    for (const auto& br : branches_)
      terms.push_back(DynamicBranchTerms<Scalar>{br.kernels, br.dilations, br.head.forward(x, train), br.bias});
    return frequency_dynamic_conv(x, terms, static_kernel_, static_bias_);
  }

  const MDFDLayerConfig& config() const { return config_; }
  const std::vector<DynamicBranch<Scalar>>& branches() const { return branches_; }
  const Var<Scalar>& static_kernel() const { return static_kernel_; }
  const Var<Scalar>& static_bias() const { return static_bias_; }

 private:
  MDFDLayerConfig config_;
  std::vector<DynamicBranch<Scalar>> branches_;
  Var<Scalar> static_kernel_;
  Var<Scalar> static_bias_;
};

template <class Scalar>
Var<Scalar> mdfd_forward(const MDFDConv<Scalar>& layer, const Var<Scalar>& x, bool train) {
  return layer.forward(x, train);
}

}  // namespace fdy
