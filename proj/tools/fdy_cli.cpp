// Command-line front end: parameter counting, verification suites, synthetic
// data generation, training, evaluation and multi-seed comparison matrices.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fdy/errors.hpp"
#include "fdy/presets.hpp"
#include "fdy/train.hpp"
#include "suites.hpp"

namespace fs = std::filesystem;
using namespace fdy;

namespace {

constexpr int kUsageError = 2;
constexpr int kRunFailure = 1;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw FormatError(std::string(what) + " not found: " + path);
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    require_file(path, "config file");
    cfg = load_run_config(path);
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

void print_resolved(const RunConfig& cfg, std::ostream& os) {
  os << "# resolved config\n" << emit_run_config(cfg);
}

ModelConfig model_from(const std::string& spec) {
  if (fs::exists(spec)) return load_run_config(spec).model;
  return named_preset(spec);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      seeds.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + tok + "'");
    }
  }
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency dynamic convolution toolkit"};
  app.require_subcommand(1);

  // count-params
  auto* count = app.add_subcommand("count-params", "Print itemized parameter counts");
  std::string table, model_config, preset;
  count->add_option("--table", table, "Published table preset: I, II, III or IV");
  count->add_option("--model-config", model_config, "Config file whose [model] section is counted");
  count->add_option("--preset", preset, "Named model preset");

  // verify
  auto* verify = app.add_subcommand("verify", "Run invariant suites with fixed seeds");
  std::string suite = "all";
  verify->add_option("--suite", suite, "equivalence, gradcheck, psds, median or all");

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic dataset");
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  long long seed = -1;
  synth->add_option("--config", config_path, "Run config file ([data] section)");
  synth->add_option("--out", out_dir, "Output directory (overrides data.dir)");
  synth->add_option("--seed", seed, "Master seed (overrides data.seed)");
  synth->add_option("--set", overrides, "section.key=value override, repeatable");

  // train
  auto* trn = app.add_subcommand("train", "Train a model on a dataset manifest");
  std::string manifest, model_spec;
  trn->add_option("--config", config_path, "Run config file");
  trn->add_option("--data", manifest, "Dataset manifest")->required();
  trn->add_option("--out", out_dir, "Output directory for checkpoints and run log")->required();
  trn->add_option("--seed", seed, "Training seed (overrides train.seed)");
  trn->add_option("--model", model_spec, "Model preset name or config file (overrides [model])");
  trn->add_option("--set", overrides, "section.key=value override, repeatable");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  std::string checkpoint, split = "test";
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--data", manifest, "Dataset manifest")->required();
  ev->add_option("--split", split, "train, valid or test");
  ev->add_option("--config", config_path, "Run config file ([eval] and [postproc] sections)");
  ev->add_option("--out", out_dir, "Directory for report.txt and detections.tsv");
  ev->add_option("--set", overrides, "section.key=value override, repeatable");

  // matrix
  auto* mat = app.add_subcommand("matrix", "Train several models over several seeds");
  std::vector<std::string> models;
  std::string seeds_text = "1,2,3", out_file;
  int jobs = 1;
  mat->add_option("--config", config_path, "Run config file");
  mat->add_option("--data", manifest, "Dataset manifest")->required();
  mat->add_option("--models", models, "Preset names or config files")->required();
  mat->add_option("--seeds", seeds_text, "Comma-separated seeds");
  mat->add_option("--jobs", jobs, "Parallel runs");
  mat->add_option("--out", out_file, "TSV output path");
  mat->add_option("--set", overrides, "section.key=value override, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*count) {
      const int sources = !table.empty() + !model_config.empty() + !preset.empty();
      if (sources != 1) throw UsageError("count-params needs exactly one of --table, --model-config, --preset");
      if (!table.empty()) {
        std::cout << format_table(table, count_table(table));
      } else {
        ModelConfig m;
        if (!preset.empty()) {
          m = named_preset(preset);
        } else {
          require_file(model_config, "model config");
          m = load_run_config(model_config).model;
        }
        const SEDModel<float> model(m, 0);
        std::cout << "# model\n" << emit_model_config(m);
        for (const auto& w : model.warnings()) std::cout << "# warning: " << w << '\n';
        std::cout << count_parameters(model).format();
      }
      return 0;
    }

    if (*verify) {
      std::vector<verify::SuiteReport> reports;
      try {
        reports = verify::run_suites(suite);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      bool ok = true;
      for (const auto& r : reports) {
        std::cout << r.text();
        ok = ok && r.passed();
      }
      std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
      return ok ? 0 : kRunFailure;
    }

    if (*synth) {
      RunConfig cfg = resolve_config(config_path, overrides);
      if (!out_dir.empty()) cfg.data.dir = out_dir;
      if (seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(seed);
      print_resolved(cfg, std::cout);
      const auto m = generate_dataset(cfg.data);
      std::cout << "wrote " << m.clips.size() << " clips to " << cfg.data.dir << "/manifest.txt\n";
      const auto sizes = split_sizes(cfg.data.n_clips, cfg.data.train_ratio, cfg.data.valid_ratio);
      std::cout << "train " << sizes[0] << " valid " << sizes[1] << " test " << sizes[2] << '\n';
      return 0;
    }

    if (*trn) {
      RunConfig cfg = resolve_config(config_path, {});
      if (!model_spec.empty()) cfg.model = model_from(model_spec);
      for (const auto& o : overrides) apply_override(cfg, o);
      if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
      require_file(manifest, "dataset manifest");
      const Dataset data = read_dataset(manifest);
      print_resolved(cfg, std::cout);
      const auto res = train(cfg, data, out_dir, &std::cout);
      std::cout << "best epoch " << res.log.best_epoch << '\n';
      if (res.log.test_psds1) std::cout << "test psds1 " << format_number(*res.log.test_psds1) << '\n';
      if (res.log.test_f1) std::cout << "test intersection-f1 " << format_number(*res.log.test_f1) << '\n';
      std::cout << "wrote " << out_dir << "/best.ckpt and " << out_dir << "/run.log\n";
      return 0;
    }

    if (*ev) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      require_file(checkpoint, "checkpoint");
      require_file(manifest, "dataset manifest");
      Split which;
      try {
        which = parse_split(split);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const auto model = load_checkpoint<float>(checkpoint);
      const Dataset data = read_dataset(manifest);
      print_resolved(cfg, std::cout);
      const auto r = evaluate(model, data, which, cfg.eval, cfg.postproc);
      for (const auto& n : r.notes) std::cout << "note: " << n << '\n';
      for (const auto& w : r.report.warnings) std::cout << "warning: " << w << '\n';
      std::cout << r.report.key_values();
      std::cout << "intersection_f1 = " << format_number(r.f1) << '\n';
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/report.txt", r.report.text(data.manifest.class_names) + "intersection_f1 = " + format_number(r.f1) + '\n');
        write_events_tsv(out_dir + "/detections.tsv", r.detections, data.manifest.class_names);
        std::cout << "wrote " << out_dir << "/report.txt and " << out_dir << "/detections.tsv\n";
      }
      return 0;
    }

    if (*mat) {
      const RunConfig cfg = resolve_config(config_path, overrides);
      const auto seeds = parse_seeds(seeds_text);
      if (seeds.empty()) throw UsageError("--seeds lists no seeds");
      if (jobs < 1) throw UsageError("--jobs must be >= 1");
      require_file(manifest, "dataset manifest");
      std::vector<MatrixEntry> entries;
      for (const auto& m : models) entries.push_back({m, model_from(m)});
      const Dataset data = read_dataset(manifest);
      print_resolved(cfg, std::cout);
      const auto t = run_matrix(entries, cfg, seeds, data, jobs);
      std::cout << t.tsv();
      if (!out_file.empty()) write_text(out_file, t.tsv());
      bool any_ok = false;
      for (const auto& r : t.runs) any_ok = any_ok || r.status == "ok";
      return any_ok ? 0 : kRunFailure;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return 0;
}
