#pragma once

// CRNN sound-event-detection model: an optional pre-convolution block, seven
// convolution blocks (plain or MDFD convolution, batch norm, context gate,
// dropout, average pooling), a bidirectional GRU stack, and strong/weak heads.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fdy/checkpoint.hpp"
#include "fdy/config.hpp"
#include "fdy/fdy_conv.hpp"

namespace fdy {

template <class Scalar>
struct ConvBlock {
  std::string name;
  MDFDConv<Scalar> conv;
  Var<Scalar> norm_gamma, norm_beta;
  std::shared_ptr<BatchNormState> norm_state;
  Var<Scalar> gate_weight, gate_bias;
  Index pool_t = 1, pool_f = 1;
  Index input_f = 0;
  double dropout = 0.0;
};

template <class Scalar>
struct GruDirection {
  Var<Scalar> w_ih, w_hh, b_ih, b_hh;
};

template <class Scalar>
struct ModelOutput {
  Var<Scalar> strong;  // [B, n_classes, T_out, 1]
  Var<Scalar> weak;    // [B, n_classes, 1, 1]
};

/// Per-layer trainable counts split by role, plus the grand total.
struct ParamTable {
  std::vector<std::string> layers;                         // in creation order
  std::map<std::string, std::map<std::string, Index>> by;  // layer -> role -> count
  Index total = 0;

  Index layer_total(const std::string& layer) const;
  Index role_total(const std::string& role) const;
  std::string format() const;
};

template <class Scalar>
class SEDModel {
 public:
  SEDModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    Rng rng(seed);
    const auto channels = config.channels();
    const Index n_layers = static_cast<Index>(channels.size());
    if (n_layers < 1) throw ConfigError("model needs at least one convolution layer");
    if (static_cast<Index>(config.pool_time.size()) != n_layers || static_cast<Index>(config.pool_freq.size()) != n_layers)
      throw ConfigError("pool_time and pool_freq need one entry per convolution layer (" + std::to_string(n_layers) + ")");
    const auto branches = config.branches();

    Index c_in = 1;
    Index f = config.n_mels;
    if (config.pre_conv) {
      pre_ = make_block("pre", c_in, config.pre_conv_channels, {}, f, 1, 1, 0.0, rng);
      c_in = config.pre_conv_channels;
    }
    for (Index i = 0; i < n_layers; ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      const bool dynamic = i > 0 || config.pre_conv;
      std::vector<BranchSpec> specs;
      if (dynamic)
        for (const auto& d : branches) specs.push_back(BranchSpec{config.proportion, d});
      if (f < 1) throw ConfigError(name + ": no frequency bins left at this layer");
      try {
        blocks_.push_back(make_block(name, c_in, channels[static_cast<std::size_t>(i)], specs, f,
                                     config.pool_time[static_cast<std::size_t>(i)],
                                     config.pool_freq[static_cast<std::size_t>(i)], config.cnn_dropout, rng));
      } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
      }
      c_in = channels[static_cast<std::size_t>(i)];
      if (f % blocks_.back().pool_f != 0)
        throw ConfigError(name + ": frequency extent " + std::to_string(f) + " not divisible by pool " +
                          std::to_string(blocks_.back().pool_f));
      f /= blocks_.back().pool_f;
    }
    if (blocks_.back().input_f != 2)
      throw ConfigError("conv" + std::to_string(n_layers) + ": input has " + std::to_string(blocks_.back().input_f) +
                        " frequency bins; the pooling schedule must leave exactly 2");

    const Index h = config.rnn_hidden;
    Index in = c_in;
    const double rb = 1.0 / std::sqrt(static_cast<double>(h));
    for (Index l = 0; l < config.rnn_layers; ++l) {
      std::array<GruDirection<Scalar>, 2> layer;
      for (int d = 0; d < 2; ++d) {
        const std::string p = "rnn.l" + std::to_string(l) + (d ? ".bwd" : ".fwd");
        auto& g = layer[static_cast<std::size_t>(d)];
        g.w_ih = store_.add_uniform(p + ".w_ih", {3 * h, in}, ParamRole::Recurrent, Shape4{1, 1, 3 * h, in}, rb, rng);
        g.w_hh = store_.add_uniform(p + ".w_hh", {3 * h, h}, ParamRole::Recurrent, Shape4{1, 1, 3 * h, h}, rb, rng);
        g.b_ih = store_.add_uniform(p + ".b_ih", {3 * h}, ParamRole::Recurrent, Shape4{1, 1, 1, 3 * h}, rb, rng);
        g.b_hh = store_.add_uniform(p + ".b_hh", {3 * h}, ParamRole::Recurrent, Shape4{1, 1, 1, 3 * h}, rb, rng);
      }
      rnn_.push_back(layer);
      in = 2 * h;
    }
    const Index n = config.n_classes;
    const double hb = 1.0 / std::sqrt(static_cast<double>(in));
    strong_w_ = store_.add_uniform("head.strong.weight", {n, in}, ParamRole::Head, Shape4{1, 1, n, in}, hb, rng);
    strong_b_ = store_.add_uniform("head.strong.bias", {n}, ParamRole::Head, Shape4{1, 1, 1, n}, hb, rng);
    att_w_ = store_.add_uniform("head.attention.weight", {n, in}, ParamRole::Head, Shape4{1, 1, n, in}, hb, rng);
    att_b_ = store_.add_uniform("head.attention.bias", {n}, ParamRole::Head, Shape4{1, 1, 1, n}, hb, rng);
  }

  SEDModel(const SEDModel&) = delete;
  SEDModel& operator=(const SEDModel&) = delete;
  SEDModel(SEDModel&&) = default;
  SEDModel& operator=(SEDModel&&) = default;

  /// `rng` drives dropout and is required in train mode.
  ModelOutput<Scalar> forward(const Var<Scalar>& features, bool train, Rng* rng = nullptr) const {
    const Shape4 s = features.shape();
    if (s.c != 1 || s.f != config_.n_mels)
      throw ShapeError("model expects features [B,1,T," + std::to_string(config_.n_mels) + "], got " + s.str());
    if (s.t % config_.time_pool_factor() != 0)
      throw ShapeError("frame count " + std::to_string(s.t) + " is not a multiple of the time pooling factor " +
                       std::to_string(config_.time_pool_factor()));
    if (train && !rng) throw ConfigError("train-mode forward needs a dropout rng");
    Rng dummy(0);
    Rng& r = rng ? *rng : dummy;

    Var<Scalar> h = features;
    if (pre_) h = block_forward(*pre_, h, train, r);
    for (const auto& b : blocks_) h = block_forward(b, h, train, r);
    h = permute(mean_axis(h, 3), {0, 3, 2, 1});  // [B, 1, T', C]
    h = dropout(h, config_.rnn_dropout, r, train);
    for (const auto& layer : rnn_) {
      const auto& fw = layer[0];
      const auto& bw = layer[1];
      h = concat<Scalar>({gru(h, fw.w_ih, fw.w_hh, fw.b_ih, fw.b_hh, false), gru(h, bw.w_ih, bw.w_hh, bw.b_ih, bw.b_hh, true)}, 3);
    }
    h = dropout(h, config_.rnn_dropout, r, train);
    const Var<Scalar> strong = sigmoid(linear(h, strong_w_, strong_b_));             // [B, 1, T', n]
    const Var<Scalar> att = softmax(linear(h, att_w_, att_b_), 2, Scalar(1));     // over time
    const Var<Scalar> weak = sum_axis(mul(strong, att), 2);                        // [B, 1, 1, n]
    ModelOutput<Scalar> out;
    out.strong = permute(strong, {0, 3, 2, 1});
    if (config_.upsample_strong && config_.time_pool_factor() > 1)
      out.strong = repeat_axis(out.strong, 2, config_.time_pool_factor());
    out.weak = permute(weak, {0, 3, 2, 1});
    return out;
  }

  /// Frames of strong output per input frame count.
  Index output_frames(Index input_frames) const {
    return config_.upsample_strong ? input_frames : input_frames / config_.time_pool_factor();
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<Scalar>& store() { return store_; }
  const ParameterStore<Scalar>& store() const { return store_; }
  const std::vector<ConvBlock<Scalar>>& blocks() const { return blocks_; }
  const std::optional<ConvBlock<Scalar>>& pre_block() const { return pre_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  Var<Scalar>& strong_weight() { return strong_w_; }
  Var<Scalar>& strong_bias() { return strong_b_; }

 private:
  ConvBlock<Scalar> make_block(const std::string& name, Index c_in, Index c_out, std::vector<BranchSpec> branches,
                               Index input_f, Index pool_t, Index pool_f, double drop, Rng& rng) {
    MDFDLayerConfig lc;
    lc.branches = std::move(branches);
    lc.in_channels = c_in;
    lc.out_channels = c_out;
    lc.attention.squeeze_ratio = config_.squeeze_ratio;
    lc.attention.kernel_f = config_.attention_kernel;
    lc.attention.logit_kernel_f = config_.attention_logit_kernel;
    lc.attention.temperature = config_.temperature;
    for (auto& b : lc.branches) b.dilation.n_kernels = config_.n_kernels;
    const ValidatedLayer v = validate_config(lc, input_f);
    for (const auto& w : v.warnings) warnings_.push_back(name + ": " + w);
    ConvBlock<Scalar> b;
    b.name = name;
    b.conv = MDFDConv<Scalar>(v, store_, name + ".conv", rng);
    b.norm_gamma = store_.add_constant(name + ".norm.gamma", {c_out}, ParamRole::Norm, Shape4{1, 1, 1, c_out}, Scalar(1));
    b.norm_beta = store_.add_constant(name + ".norm.beta", {c_out}, ParamRole::Norm, Shape4{1, 1, 1, c_out}, Scalar(0));
    b.norm_state = store_.add_norm_state(name + ".norm", c_out);
    const double gb = 1.0 / std::sqrt(static_cast<double>(c_out));
    b.gate_weight = store_.add_uniform(name + ".gate.weight", {c_out, c_out}, ParamRole::Gate, Shape4{c_out, c_out, 1, 1}, gb, rng);
    b.gate_bias = store_.add_uniform(name + ".gate.bias", {c_out}, ParamRole::Gate, Shape4{1, 1, 1, c_out}, gb, rng);
    b.pool_t = pool_t;
    b.pool_f = pool_f;
    b.input_f = input_f;
    b.dropout = drop;
    return b;
  }

  static Var<Scalar> block_forward(const ConvBlock<Scalar>& b, const Var<Scalar>& x, bool train, Rng& rng) {
    Var<Scalar> h = b.conv.forward(x, train);
    h = batch_norm(h, b.norm_gamma, b.norm_beta, *b.norm_state, train);
    h = context_gate(h, b.gate_weight, b.gate_bias);
    h = dropout(h, b.dropout, rng, train);
    if (b.pool_t > 1 || b.pool_f > 1) h = avg_pool2d(h, b.pool_t, b.pool_f);
    return h;
  }

  ModelConfig config_;
  ParameterStore<Scalar> store_;
  std::optional<ConvBlock<Scalar>> pre_;
  std::vector<ConvBlock<Scalar>> blocks_;
  std::vector<std::array<GruDirection<Scalar>, 2>> rnn_;
  Var<Scalar> strong_w_, strong_b_, att_w_, att_b_;
  std::vector<std::string> warnings_;
};

template <class Scalar>
SEDModel<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  return SEDModel<Scalar>(config, seed);
}

template <class Scalar>
ModelOutput<Scalar> model_forward(const SEDModel<Scalar>& model, const Var<Scalar>& features, bool train,
                                  Rng* rng = nullptr) {
  return model.forward(features, train, rng);
}

template <class Scalar>
ParamTable count_parameters(const ParameterStore<Scalar>& store) {
  ParamTable t;
  for (const auto& p : store.params()) {
    const std::string layer = p.name.substr(0, p.name.find('.'));
    if (!t.by.count(layer)) t.layers.push_back(layer);
    t.by[layer][role_name(p.role)] += p.size();
    t.total += p.size();
  }
  return t;
}

template <class Scalar>
ParamTable count_parameters(const SEDModel<Scalar>& model) {
  return count_parameters(model.store());
}

/// Parameters as float32 records (plus batch-norm running statistics).
template <class Scalar>
CheckpointData checkpoint_data(const SEDModel<Scalar>& model) {
  CheckpointData d;
  d.config_text = emit_model_config(model.config());
  for (const auto& p : model.store().params()) {
    TensorRecord r{p.name, {}, {}};
    for (Index v : p.dims) r.dims.push_back(static_cast<std::uint32_t>(v));
    const auto& t = p.var.value();
    r.values.resize(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
    d.tensors.push_back(std::move(r));
  }
  for (const auto& b : model.store().buffers()) {
    for (int which = 0; which < 2; ++which) {
      const Eigen::ArrayXd& a = which ? b.state->running_var : b.state->running_mean;
      TensorRecord r{b.name + (which ? ".running_var" : ".running_mean"), {static_cast<std::uint32_t>(a.size())}, {}};
      for (Index i = 0; i < a.size(); ++i) r.values.push_back(static_cast<float>(a[i]));
      d.tensors.push_back(std::move(r));
    }
  }
  return d;
}

template <class Scalar>
void save_checkpoint(const SEDModel<Scalar>& model, const std::string& path) {
  write_checkpoint_file(path, checkpoint_data(model));
}

/// Builds the model described by the embedded config and fills every tensor.
template <class Scalar>
SEDModel<Scalar> model_from_checkpoint(const CheckpointData& data) {
  SEDModel<Scalar> model(parse_model_config(data.config_text), 0);
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : data.tensors)
    if (!by_name.emplace(r.name, &r).second) throw FormatError("checkpoint repeats tensor " + r.name);
  std::size_t used = 0;
  auto take = [&](const std::string& name, const std::vector<Index>& dims) -> const TensorRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + name);
    std::vector<std::uint32_t> want;
    for (Index v : dims) want.push_back(static_cast<std::uint32_t>(v));
    if (it->second->dims != want) throw FormatError("checkpoint tensor " + name + " has a shape that disagrees with the config");
    ++used;
    return *it->second;
  };
  for (auto& p : model.store().params()) {
    const auto& r = take(p.name, p.dims);
    auto& t = p.var.mutable_value();
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(r.values[static_cast<std::size_t>(i)]);
  }
  for (auto& b : model.store().buffers()) {
    const Index c = b.state->running_mean.size();
    const auto& m = take(b.name + ".running_mean", {c});
    const auto& v = take(b.name + ".running_var", {c});
    for (Index i = 0; i < c; ++i) {
      b.state->running_mean[i] = m.values[static_cast<std::size_t>(i)];
      b.state->running_var[i] = v.values[static_cast<std::size_t>(i)];
    }
  }
  if (used != data.tensors.size()) {
    for (const auto& r : data.tensors) {
      bool known = model.store().find(r.name) != nullptr;
      for (const auto& b : model.store().buffers())
        known = known || r.name == b.name + ".running_mean" || r.name == b.name + ".running_var";
      if (!known) throw FormatError("checkpoint has unknown tensor " + r.name);
    }
  }
  return model;
}

template <class Scalar>
SEDModel<Scalar> load_checkpoint(const std::string& path) {
  return model_from_checkpoint<Scalar>(read_checkpoint_file(path));
}

/// Copies parameter values and running statistics between models of one config.
template <class To, class From>
void copy_parameters(const SEDModel<From>& from, SEDModel<To>& to) {
  const auto& src = from.store().params();
  auto& dst = to.store().params();
  if (src.size() != dst.size()) throw ShapeError("copy_parameters: models differ");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value().template cast<To>();
  for (std::size_t i = 0; i < from.store().buffers().size(); ++i) *to.store().buffers()[i].state = *from.store().buffers()[i].state;
}

}  // namespace fdy
