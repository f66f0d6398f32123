#pragma once

// Run configuration: plain structs plus a sectioned key=value text format.
//
//   [model]
//   width = 1/4
//   dynamic = (1)x2+(2,3)
//
// Each struct lists its fields once in `visit`; parsing, printing and
// overrides all go through that list. Unknown sections or keys are errors
// that cite the offending line.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fdy/layer_config.hpp"

namespace fdy {

struct ModelConfig {
  Index n_mels = 128;
  Index n_classes = 10;
  std::vector<Index> base_channels{32, 64, 128, 256, 256, 256, 256};
  Rational width{1, 1};
  bool pre_conv = false;
  Index pre_conv_channels = 16;
  std::string dynamic = "none";  // branch list, e.g. (1)x5+(2,3)
  Rational proportion{1, 8};     // per dynamic branch, of each dynamic layer's outputs
  int n_kernels = 4;
  double temperature = 31.0;
  int squeeze_ratio = 4;
  int attention_kernel = 3;
  int attention_logit_kernel = 1;
  std::vector<Index> pool_time{2, 2, 1, 1, 1, 1, 1};
  std::vector<Index> pool_freq{2, 2, 2, 2, 2, 2, 1};
  Index rnn_hidden = 256;
  Index rnn_layers = 2;
  double cnn_dropout = 0.5;
  double rnn_dropout = 0.5;
  bool upsample_strong = true;  // repeat strong frames back to the input rate

  std::vector<Index> channels() const;
  std::vector<DilationSpec> branches() const;
  Index time_pool_factor() const;
  bool operator==(const ModelConfig&) const = default;

  template <class V>
  void visit(V& v) {
    v("n_mels", n_mels);
    v("n_classes", n_classes);
    v("base_channels", base_channels);
    v("width", width);
    v("pre_conv", pre_conv);
    v("pre_conv_channels", pre_conv_channels);
    v("dynamic", dynamic);
    v("proportion", proportion);
    v("n_kernels", n_kernels);
    v("temperature", temperature);
    v("squeeze_ratio", squeeze_ratio);
    v("attention_kernel", attention_kernel);
    v("attention_logit_kernel", attention_logit_kernel);
    v("pool_time", pool_time);
    v("pool_freq", pool_freq);
    v("rnn_hidden", rnn_hidden);
    v("rnn_layers", rnn_layers);
    v("cnn_dropout", cnn_dropout);
    v("rnn_dropout", rnn_dropout);
    v("upsample_strong", upsample_strong);
  }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-3;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;  // global L2 norm, 0 disables
  double strong_weight = 1.0;
  double weak_weight = 0.5;
  std::uint64_t seed = 1;
  int validate_every = 1;
  std::string early_stop = "psds1";  // psds1 | f1 | loss
  bool frame_shift = true;
  Index max_shift = 8;
  bool mixup = true;
  double mixup_alpha = 0.2;
  double mixup_prob = 0.5;
  bool time_mask = true;
  Index max_mask_width = 10;
  bool filter_augment = true;
  int filter_bands_min = 2;
  int filter_bands_max = 5;
  double filter_gain_db = 6.0;
  bool operator==(const TrainConfig&) const = default;

  template <class V>
  void visit(V& v) {
    v("epochs", epochs);
    v("batch_size", batch_size);
    v("lr", lr);
    v("warmup_fraction", warmup_fraction);
    v("beta1", beta1);
    v("beta2", beta2);
    v("adam_eps", adam_eps);
    v("grad_clip", grad_clip);
    v("strong_weight", strong_weight);
    v("weak_weight", weak_weight);
    v("seed", seed);
    v("validate_every", validate_every);
    v("early_stop", early_stop);
    v("frame_shift", frame_shift);
    v("max_shift", max_shift);
    v("mixup", mixup);
    v("mixup_alpha", mixup_alpha);
    v("mixup_prob", mixup_prob);
    v("time_mask", time_mask);
    v("max_mask_width", max_mask_width);
    v("filter_augment", filter_augment);
    v("filter_bands_min", filter_bands_min);
    v("filter_bands_max", filter_bands_max);
    v("filter_gain_db", filter_gain_db);
  }
};

struct DataConfig {
  std::string dir = "data";
  Index n_clips = 640;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  std::uint64_t seed = 7;
  Index n_mels = 128;
  Index n_classes = 4;
  double hop = 0.064;
  double clip_duration = 10.0;
  int max_polyphony = 2;
  double noise_db = -30.0;     // mean background power
  double noise_std_db = 2.0;   // per-cell background jitter
  double snr_db_min = 6.0;     // event peak over background
  double snr_db_max = 15.0;
  double min_event = 0.5;      // seconds
  double max_event = 3.0;
  bool operator==(const DataConfig&) const = default;

  template <class V>
  void visit(V& v) {
    v("dir", dir);
    v("n_clips", n_clips);
    v("train_ratio", train_ratio);
    v("valid_ratio", valid_ratio);
    v("seed", seed);
    v("n_mels", n_mels);
    v("n_classes", n_classes);
    v("hop", hop);
    v("clip_duration", clip_duration);
    v("max_polyphony", max_polyphony);
    v("noise_db", noise_db);
    v("noise_std_db", noise_std_db);
    v("snr_db_min", snr_db_min);
    v("snr_db_max", snr_db_max);
    v("min_event", min_event);
    v("max_event", max_event);
  }
};

struct EvalConfig {
  double dtc = 0.7;
  double gtc = 0.7;
  double alpha_st = 1.0;
  double e_max = 100.0;
  int n_thresholds = 50;
  double f1_threshold = 0.5;
  bool operator==(const EvalConfig&) const = default;

  std::vector<double> thresholds() const;

  template <class V>
  void visit(V& v) {
    v("dtc", dtc);
    v("gtc", gtc);
    v("alpha_st", alpha_st);
    v("e_max", e_max);
    v("n_thresholds", n_thresholds);
    v("f1_threshold", f1_threshold);
  }
};

struct PostprocConfig {
  std::vector<Index> median_width{7};  // one value for all classes, or one per class
  bool operator==(const PostprocConfig&) const = default;

  template <class V>
  void visit(V& v) {
    v("median_width", median_width);
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  PostprocConfig postproc;
  bool operator==(const RunConfig&) const = default;
};

/// Parses a full run config; absent sections and keys keep their defaults.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);
/// Canonical text, every key of every section, doubles in shortest round-trip form.
std::string emit_run_config(const RunConfig& cfg);

ModelConfig parse_model_config(std::string_view text);
std::string emit_model_config(const ModelConfig& cfg);

DataConfig parse_data_config(std::string_view text);
std::string emit_data_config(const DataConfig& cfg);

/// Applies `section.key=value`.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace fdy
