#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fdy/config.hpp"
#include "fdy/model.hpp"
#include "fdy/postproc.hpp"
#include "fdy/synth.hpp"

namespace fdy {

using TrainModel = SEDModel<float>;

/// Adam with decoupled bias correction over every parameter of a store.
class Adam {
 public:
  Adam(const ParameterStore<float>& store, double beta1, double beta2, double eps);
  /// Applies one update from the gradients currently held by the parameters.
  void step(ParameterStore<float>& store, double lr);
  long long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

/// Learning rate at `step` of `total`: lr·exp(-5(1 - s/w)^2) during the first
/// `warmup_fraction` of steps, lr afterwards.
double learning_rate(const TrainConfig& cfg, long long step, long long total);

/// Global L2 norm of all gradients; rescales them to `max_norm` when larger (0 disables).
double clip_gradients(ParameterStore<float>& store, double max_norm);

/// L2 norm of parameter values grouped by layer prefix, formatted as `name=value` pairs.
std::string layer_norms(const ParameterStore<float>& store);

/// Training clip order for one epoch (Fisher-Yates from a seed derived from (seed, epoch)).
std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_indices, std::uint64_t seed, int epoch);

/// Seed of the per-step stream used for augmentation and dropout.
std::uint64_t step_seed(std::uint64_t seed, long long global_step);

/// Applies the enabled augmentations in a fixed order.
LabeledBatch augment_batch(const LabeledBatch& batch, const TrainConfig& cfg, Rng& rng);

struct StepLoss {
  Var<float> total;
  double strong = 0.0;
  double weak = 0.0;
};

/// Weighted strong-frame plus weak-clip binary cross-entropy in train mode.
StepLoss training_loss(const TrainModel& model, const LabeledBatch& batch, const TrainConfig& cfg, Rng& rng);

/// The batch fed at (epoch, index) before augmentation, plus the step stream seed.
struct PlannedStep {
  LabeledBatch batch;
  std::uint64_t seed = 0;
};
PlannedStep plan_step(const Dataset& data, const TrainConfig& cfg, int epoch, std::size_t batch_index,
                      long long global_step);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double strong_loss = 0.0;
  double weak_loss = 0.0;
  double first_batch_loss = 0.0;
  std::optional<double> valid_psds1;
  std::optional<double> valid_f1;
  double seconds = 0.0;  // wall time, kept out of the deterministic body
};

struct RunLog {
  RunConfig config;
  std::string started;  // timestamp, header only
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::optional<double> test_psds1;
  std::optional<double> test_f1;
  Index parameters = 0;
  double total_seconds = 0.0;

  /// `#` lines carry timestamps and wall times; every other line is deterministic.
  std::string text() const;
  /// Recovers the config and records from text().
  static RunLog parse(const std::string& text);
};

/// Strips `#` lines, leaving the part of a log that must repeat byte for byte.
std::string deterministic_part(const std::string& text);

struct EvalResult {
  PsdsReport report;
  double f1 = 0.0;
  EventList detections;  // at the F1 threshold
  std::vector<FramePosteriors> posteriors;
  std::vector<std::string> notes;
};

/// Eval-mode posteriors of every clip in `split`, before post-processing.
std::vector<FramePosteriors> predict(const TrainModel& model, const Dataset& data, Split split, Index batch_size = 16);

EvalResult evaluate(const TrainModel& model, const Dataset& data, Split split, const EvalConfig& eval,
                    const PostprocConfig& post);
EvalResult evaluate_posteriors(const std::vector<FramePosteriors>& posteriors, const Dataset& data, Split split,
                               const EvalConfig& eval, const PostprocConfig& post);

struct TrainResult {
  TrainModel model;  // best validation state
  RunLog log;
};

/// Trains `config.model` on the train split. When `out_dir` is non-empty it
/// receives initial.ckpt, best.ckpt and run.log.
TrainResult train(const RunConfig& config, const Dataset& data, const std::string& out_dir = "",
                  std::ostream* progress = nullptr);

struct MatrixEntry {
  std::string label;
  ModelConfig model;
};

struct MatrixRun {
  std::string label;
  std::uint64_t seed = 0;
  Index parameters = 0;
  std::optional<double> psds1;
  std::optional<double> f1;
  std::string status = "ok";
};

struct MatrixTable {
  std::vector<MatrixRun> runs;  // entry-major, seed-minor

  /// Per-run rows followed by per-entry median and best rows.
  std::string tsv() const;
};

/// Trains every (entry, seed) pair. Runs are independent; `jobs` > 1 runs them on threads.
MatrixTable run_matrix(const std::vector<MatrixEntry>& entries, const RunConfig& base,
                       const std::vector<std::uint64_t>& seeds, const Dataset& data, int jobs = 1);

double median(std::vector<double> v);

}  // namespace fdy
