#include "fdy/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "fdy/errors.hpp"

namespace fdy {

namespace fs = std::filesystem;

Adam::Adam(const ParameterStore<float>& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : store.params()) {
    m_.push_back(Eigen::ArrayXd::Zero(p.size()));
    v_.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
}

void Adam::step(ParameterStore<float>& store, double lr) {
  auto& params = store.params();
  if (params.size() != m_.size()) throw ShapeError("optimizer state does not match the parameter store");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& var = params[i].var;
    if (var.grad().size() != var.value().size()) continue;  // untouched this step
    const Eigen::ArrayXd g = var.grad().array().template cast<double>();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    const Eigen::ArrayXd update = lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
    var.mutable_value().array() -= update.cast<float>();
  }
}

double learning_rate(const TrainConfig& cfg, long long step, long long total) {
  const double warm = cfg.warmup_fraction * static_cast<double>(total);
  if (warm <= 0.0 || static_cast<double>(step) >= warm) return cfg.lr;
  const double phase = 1.0 - static_cast<double>(step) / warm;
  return cfg.lr * std::exp(-5.0 * phase * phase);
}

double clip_gradients(ParameterStore<float>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.params())
    if (p.var.grad().size() == p.size()) sq += p.var.grad().array().template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : store.params())
      if (p.var.grad().size() == p.size()) p.var.mutable_grad().array() *= s;
  }
  return norm;
}

std::string layer_norms(const ParameterStore<float>& store) {
  std::vector<std::string> order;
  std::map<std::string, double> sq;
  for (const auto& p : store.params()) {
    const std::string layer = p.name.substr(0, p.name.find('.'));
    if (!sq.count(layer)) order.push_back(layer);
    sq[layer] += p.var.value().array().template cast<double>().square().sum();
  }
  std::ostringstream os;
  for (const auto& l : order) os << (os.tellp() > 0 ? " " : "") << l << '=' << format_number(std::sqrt(sq[l]));
  return os.str();
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_indices, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order = train_indices;
  Rng rng(Rng::derive(seed ^ 0x5348554646ULL, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(i) - 1))]);
  return order;
}

std::uint64_t step_seed(std::uint64_t seed, long long global_step) {
  return Rng::derive(seed ^ 0x53544550ULL, static_cast<std::uint64_t>(global_step));
}

LabeledBatch augment_batch(const LabeledBatch& batch, const TrainConfig& cfg, Rng& rng) {
  LabeledBatch b = batch;
  if (cfg.frame_shift && cfg.max_shift > 0) b = frame_shift(b, cfg.max_shift, rng);
  if (cfg.mixup && rng.uniform() < cfg.mixup_prob) b = mixup(b, cfg.mixup_alpha, rng);
  if (cfg.time_mask && cfg.max_mask_width > 0) b = time_mask(b, cfg.max_mask_width, rng);
  if (cfg.filter_augment) b = filter_augment(b, cfg.filter_bands_min, cfg.filter_bands_max, cfg.filter_gain_db, rng);
  return b;
}

StepLoss training_loss(const TrainModel& model, const LabeledBatch& batch, const TrainConfig& cfg, Rng& rng) {
  const auto out = model.forward(Var<float>::constant(batch.features), true, &rng);
  Tensor4<float> strong_target = batch.strong;
  const Index out_t = out.strong.shape().t;
  if (out_t != batch.frames()) {
    // strong output at the pooled rate: a pooled frame is active when most of its input frames are
    const Index k = batch.frames() / out_t;
    strong_target = Tensor4<float>(out.strong.shape());
    for (Index b = 0; b < batch.batch(); ++b)
      for (Index c = 0; c < batch.strong.shape().c; ++c)
        for (Index t = 0; t < out_t; ++t) {
          float s = 0.0f;
          for (Index j = 0; j < k; ++j) s += batch.strong(b, c, t * k + j, 0);
          strong_target(b, c, t, 0) = s / static_cast<float>(k);
        }
  }
  const Var<float> ls = binary_cross_entropy(out.strong, strong_target);
  const Var<float> lw = binary_cross_entropy(out.weak, batch.weak);
  StepLoss r;
  r.strong = ls.value()[0];
  r.weak = lw.value()[0];
  r.total = add(scale(ls, static_cast<float>(cfg.strong_weight)), scale(lw, static_cast<float>(cfg.weak_weight)));
  return r;
}

PlannedStep plan_step(const Dataset& data, const TrainConfig& cfg, int epoch, std::size_t batch_index,
                      long long global_step) {
  const auto order = epoch_order(data.indices(Split::Train), cfg.seed, epoch);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t begin = batch_index * bs;
  if (begin >= order.size()) throw ConfigError("batch index past the end of the epoch");
  const std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                      order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + bs)));
  return PlannedStep{make_batch(data, pick), step_seed(cfg.seed, global_step)};
}

// ---------------------------------------------------------------------------
// Run log

namespace {

std::string now_text() {
  const std::time_t t = std::time(nullptr);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : "none"; }

std::optional<double> parse_opt(const std::string& s) {
  if (s == "none") return std::nullopt;
  return std::stod(s);
}

std::map<std::string, std::string> fields(const std::string& line) {
  std::map<std::string, std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (std::getline(is, tok, '\t')) {
    const auto eq = tok.find(" = ");
    if (eq == std::string::npos) throw FormatError("run log field '" + tok + "' is not key = value");
    out[tok.substr(0, eq)] = tok.substr(eq + 3);
  }
  return out;
}

}  // namespace

std::string RunLog::text() const {
  std::ostringstream os;
  os << "# training run log\n";
  os << "# started " << started << '\n';
  os << "parameters = " << parameters << '\n';
  os << "[config]\n" << emit_run_config(config) << "[epochs]\n";
  char wall[64];
  for (const auto& e : epochs) {
    os << "epoch = " << e.epoch << "\tloss = " << format_number(e.loss) << "\tstrong = " << format_number(e.strong_loss)
       << "\tweak = " << format_number(e.weak_loss) << "\tfirst_batch = " << format_number(e.first_batch_loss)
       << "\tvalid_psds1 = " << opt(e.valid_psds1) << "\tvalid_f1 = " << opt(e.valid_f1) << '\n';
    std::snprintf(wall, sizeof wall, "# epoch %d wall %.3f s\n", e.epoch, e.seconds);
    os << wall;
  }
  os << "[summary]\n";
  os << "best_epoch = " << best_epoch << '\n';
  os << "test_psds1 = " << opt(test_psds1) << '\n';
  os << "test_f1 = " << opt(test_f1) << '\n';
  std::snprintf(wall, sizeof wall, "# total wall %.3f s\n", total_seconds);
  os << wall;
  return os.str();
}

RunLog RunLog::parse(const std::string& text) {
  RunLog log;
  const auto c = text.find("[config]\n"), e = text.find("[epochs]\n"), s = text.find("[summary]\n");
  if (c == std::string::npos || e == std::string::npos || s == std::string::npos || !(c < e && e < s))
    throw FormatError("run log lacks its [config], [epochs] or [summary] block");
  std::istringstream head(text.substr(0, c));
  std::string line;
  while (std::getline(head, line)) {
    if (line.rfind("# started ", 0) == 0) log.started = line.substr(10);
    if (line.rfind("parameters = ", 0) == 0) log.parameters = std::stoll(line.substr(13));
  }
  log.config = parse_run_config(text.substr(c + 9, e - c - 9));
  std::istringstream body(text.substr(e + 9, s - e - 9));
  while (std::getline(body, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      int ep = 0;
      double sec = 0;
      if (std::sscanf(line.c_str(), "# epoch %d wall %lf", &ep, &sec) == 2 && !log.epochs.empty()) log.epochs.back().seconds = sec;
      continue;
    }
    auto f = fields(line);
    EpochRecord r;
    try {
      r.epoch = std::stoi(f.at("epoch"));
      r.loss = std::stod(f.at("loss"));
      r.strong_loss = std::stod(f.at("strong"));
      r.weak_loss = std::stod(f.at("weak"));
      r.first_batch_loss = std::stod(f.at("first_batch"));
      r.valid_psds1 = parse_opt(f.at("valid_psds1"));
      r.valid_f1 = parse_opt(f.at("valid_f1"));
    } catch (const std::exception&) {
      throw FormatError("malformed run log epoch line '" + line + "'");
    }
    log.epochs.push_back(r);
  }
  std::istringstream tail(text.substr(s + 10));
  while (std::getline(tail, line)) {
    if (line.rfind("best_epoch = ", 0) == 0) log.best_epoch = std::stoi(line.substr(13));
    if (line.rfind("test_psds1 = ", 0) == 0) log.test_psds1 = parse_opt(line.substr(13));
    if (line.rfind("test_f1 = ", 0) == 0) log.test_f1 = parse_opt(line.substr(10));
    double sec = 0;
    if (std::sscanf(line.c_str(), "# total wall %lf", &sec) == 1) log.total_seconds = sec;
  }
  return log;
}

std::string deterministic_part(const std::string& text) {
  std::istringstream is(text);
  std::ostringstream os;
  std::string line;
  while (std::getline(is, line))
    if (line.empty() || line[0] != '#') os << line << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<FramePosteriors> predict(const TrainModel& model, const Dataset& data, Split split, Index batch_size) {
  NoGradGuard guard;
  const auto idx = data.indices(split);
  std::vector<FramePosteriors> out;
  for (std::size_t begin = 0; begin < idx.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::vector<std::size_t> pick(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                        idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), begin + static_cast<std::size_t>(batch_size))));
    const LabeledBatch batch = make_batch(data, pick);
    const auto res = model.forward(Var<float>::constant(batch.features), false);
    const auto& s = res.strong.value();
    const double hop = data.manifest.hop * static_cast<double>(batch.frames()) / static_cast<double>(s.shape().t);
    for (Index b = 0; b < s.shape().b; ++b) {
      FramePosteriors p;
      p.clip = data.clips[pick[static_cast<std::size_t>(b)]].meta.id;
      p.hop = hop;
      p.p.resize(s.shape().c, s.shape().t);
      for (Index c = 0; c < s.shape().c; ++c)
        for (Index t = 0; t < s.shape().t; ++t) p.p(c, t) = s(b, c, t, 0);
      out.push_back(std::move(p));
    }
  }
  return out;
}

EvalResult evaluate_posteriors(const std::vector<FramePosteriors>& posteriors, const Dataset& data, Split split,
                               const EvalConfig& eval, const PostprocConfig& post) {
  const auto& names = data.manifest.class_names;
  const Index n_classes = static_cast<Index>(names.size());
  for (const auto& p : posteriors)
    if (p.n_classes() != n_classes)
      throw FormatError("class table mismatch: model predicts " + std::to_string(p.n_classes()) +
                        " classes but the dataset lists " + std::to_string(n_classes));
  const double hours = data.hours(split);
  if (!(hours > 0)) throw ConfigError(std::string("split ") + split_name(split) + " is empty");
  EvalResult r;
  r.posteriors.reserve(posteriors.size());
  for (const auto& p : posteriors) r.posteriors.push_back(median_filter(p, post.median_width));
  if (!posteriors.empty()) {
    const double hop = posteriors.front().hop;
    for (Index w : post.median_width) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "median filter of %lld frames at hop %g ms spans \xE2\x89\x88%.0f ms",
                    static_cast<long long>(w), hop * 1000.0, static_cast<double>(w) * hop * 1000.0);
      if (std::find(r.notes.begin(), r.notes.end(), buf) == r.notes.end()) r.notes.push_back(buf);
    }
  }
  const EventList gt = data.ground_truth(split);
  const PsdsParams params = PsdsParams::from(eval);
  std::vector<EventList> dets;
  for (double th : params.thresholds) dets.push_back(decode_events(r.posteriors, th));
  r.report = psds1_from_detections(dets, gt, static_cast<int>(n_classes), hours, params);
  r.detections = decode_events(r.posteriors, eval.f1_threshold);
  r.f1 = intersection_f1(intersection_counts(r.detections, gt, static_cast<int>(n_classes), eval.dtc, eval.gtc));
  return r;
}

EvalResult evaluate(const TrainModel& model, const Dataset& data, Split split, const EvalConfig& eval,
                    const PostprocConfig& post) {
  if (model.config().n_classes != static_cast<Index>(data.manifest.class_names.size()))
    throw FormatError("class table mismatch: model has " + std::to_string(model.config().n_classes) +
                      " classes but the dataset lists " + std::to_string(data.manifest.class_names.size()));
  return evaluate_posteriors(predict(model, data, split), data, split, eval, post);
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const RunConfig& config, const Dataset& data, const std::string& out_dir, std::ostream* progress) {
  const TrainConfig& tc = config.train;
  if (tc.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(tc.lr > 0)) throw ConfigError("learning rate must be positive");
  if (tc.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (tc.early_stop != "psds1" && tc.early_stop != "f1" && tc.early_stop != "loss")
    throw ConfigError("early_stop must be psds1, f1 or loss");
  if (config.model.n_mels != data.manifest.n_mels)
    throw ConfigError("model expects " + std::to_string(config.model.n_mels) + " mel bins, dataset has " +
                      std::to_string(data.manifest.n_mels));
  if (config.model.n_classes != static_cast<Index>(data.manifest.class_names.size()))
    throw FormatError("class table mismatch: model has " + std::to_string(config.model.n_classes) +
                      " classes but the dataset lists " + std::to_string(data.manifest.class_names.size()));
  const auto train_idx = data.indices(Split::Train);
  if (train_idx.empty()) throw ConfigError("the training split is empty");

  const auto t_start = std::chrono::steady_clock::now();
  TrainModel model(config.model, tc.seed);
  Adam adam(model.store(), tc.beta1, tc.beta2, tc.adam_eps);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    save_checkpoint(model, (fs::path(out_dir) / "initial.ckpt").string());
  }

  RunLog log;
  log.config = config;
  log.started = now_text();
  log.parameters = model.store().count();

  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  const std::size_t n_batches = (train_idx.size() + bs - 1) / bs;
  const long long total_steps = static_cast<long long>(n_batches) * tc.epochs;
  long long step = 0;
  std::optional<CheckpointData> best;
  double best_score = -1e300;
  const bool have_valid = !data.indices(Split::Valid).empty();

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < n_batches; ++b, ++step) {
      const PlannedStep planned = plan_step(data, tc, epoch, b, step);
      Rng rng(planned.seed);
      const LabeledBatch batch = augment_batch(planned.batch, tc, rng);
      const StepLoss loss = training_loss(model, batch, tc, rng);
      const double value = loss.total.value()[0];
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                           "; parameter norms: " + layer_norms(model.store()));
      reverse_sweep(loss.total);
      clip_gradients(model.store(), tc.grad_clip);
      adam.step(model.store(), learning_rate(tc, step, total_steps));
      if (b == 0) rec.first_batch_loss = value;
      rec.loss += value;
      rec.strong_loss += loss.strong;
      rec.weak_loss += loss.weak;
    }
    rec.loss /= static_cast<double>(n_batches);
    rec.strong_loss /= static_cast<double>(n_batches);
    rec.weak_loss /= static_cast<double>(n_batches);

    const bool validate = have_valid && tc.validate_every > 0 && (epoch % tc.validate_every == 0 || epoch == tc.epochs);
    double score = -rec.loss;
    if (validate) {
      const auto v = evaluate(model, data, Split::Valid, config.eval, config.postproc);
      rec.valid_psds1 = v.report.psds1;
      rec.valid_f1 = v.f1;
      if (tc.early_stop == "psds1") score = v.report.psds1;
      if (tc.early_stop == "f1") score = v.f1;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    if ((validate || !have_valid || tc.early_stop == "loss") && score > best_score) {
      best_score = score;
      best = checkpoint_data(model);
      log.best_epoch = epoch;
    }
    if (progress) {
      *progress << "epoch " << epoch << "/" << tc.epochs << " loss " << format_number(rec.loss) << " valid_psds1 "
                << opt(rec.valid_psds1) << " valid_f1 " << opt(rec.valid_f1) << '\n';
      progress->flush();
    }
    log.epochs.push_back(rec);
  }
  if (!best) {
    best = checkpoint_data(model);
    log.best_epoch = tc.epochs;
  }
  TrainModel best_model = model_from_checkpoint<float>(*best);
  if (!data.indices(Split::Test).empty()) {
    const auto t = evaluate(best_model, data, Split::Test, config.eval, config.postproc);
    log.test_psds1 = t.report.psds1;
    log.test_f1 = t.f1;
  }
  log.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!out_dir.empty()) {
    write_checkpoint_file((fs::path(out_dir) / "best.ckpt").string(), *best);
    std::ofstream(fs::path(out_dir) / "run.log", std::ios::trunc) << log.text();
  }
  return TrainResult{std::move(best_model), std::move(log)};
}

// ---------------------------------------------------------------------------
// Matrix

double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MatrixTable run_matrix(const std::vector<MatrixEntry>& entries, const RunConfig& base,
                       const std::vector<std::uint64_t>& seeds, const Dataset& data, int jobs) {
  if (entries.empty()) throw ConfigError("run matrix needs at least one model config");
  if (seeds.empty()) throw ConfigError("run matrix needs at least one seed");
  MatrixTable table;
  for (const auto& e : entries)
    for (std::uint64_t s : seeds) {
      MatrixRun r;
      r.label = e.label;
      r.seed = s;
      table.runs.push_back(r);
    }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < table.runs.size(); i = next++) {
      MatrixRun& r = table.runs[i];
      const auto& entry = entries[i / seeds.size()];
      try {
        r.parameters = TrainModel(entry.model, 0).store().count();
        RunConfig c = base;
        c.model = entry.model;
        c.train.seed = r.seed;
        const auto res = train(c, data);
        r.psds1 = res.log.test_psds1;
        r.f1 = res.log.test_f1;
      } catch (const std::exception& ex) {
        r.status = std::string("failed: ") + ex.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(table.runs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return table;
}

std::string MatrixTable::tsv() const {
  std::ostringstream os;
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  os << "label\tseed\tparams\tpsds1\tf1\tstatus\n";
  std::vector<std::string> labels;
  for (const auto& r : runs) {
    os << r.label << '\t' << r.seed << '\t' << r.parameters << '\t' << num(r.psds1) << '\t' << num(r.f1) << '\t'
       << r.status << '\n';
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);
  }
  os << "\nlabel\tparams\truns\tmedian_psds1\tbest_psds1\tmedian_f1\tbest_f1\n";
  for (const auto& l : labels) {
    std::vector<double> p, f;
    Index params = 0;
    for (const auto& r : runs)
      if (r.label == l) {
        params = r.parameters;
        if (r.psds1) p.push_back(*r.psds1);
        if (r.f1) f.push_back(*r.f1);
      }
    auto med = [&](const std::vector<double>& v) { return v.empty() ? std::optional<double>{} : std::optional<double>{median(v)}; };
    auto best = [&](const std::vector<double>& v) {
      return v.empty() ? std::optional<double>{} : std::optional<double>{*std::max_element(v.begin(), v.end())};
    };
    os << l << '\t' << params << '\t' << p.size() << '\t' << num(med(p)) << '\t' << num(best(p)) << '\t' << num(med(f))
       << '\t' << num(best(f)) << '\n';
  }
  return os.str();
}

}  // namespace fdy
