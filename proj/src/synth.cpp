#include "fdy/synth.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fdy/errors.hpp"

namespace fdy {

namespace fs = std::filesystem;

std::vector<EventPrototype> default_prototypes(int n_classes, Index n_mels, const DataConfig& data) {
  if (n_classes < 1 || n_classes > 10) throw ConfigError("synthetic data supports 1 to 10 classes");
  const Index F = n_mels;
  const Index w = std::max<Index>(2, F / 10);
  auto at = [&](double frac) { return std::min<Index>(F - 1, static_cast<Index>(std::lround(frac * static_cast<double>(F)))); };
  struct Row {
    const char* name;
    EnergyPattern pattern;
    double lo, hi;  // fractions of F; hi < 0 means lo + w
    double dmin, dmax;
  };
  const Row rows[] = {
      {"tone_low", EnergyPattern::TonalRidge, 0.15, -1, 0.6, 2.5},
      {"tone_high", EnergyPattern::TonalRidge, 0.60, -1, 0.6, 2.5},
      {"burst", EnergyPattern::BroadbandBurst, 0.05, 0.95, 0.3, 1.2},
      {"chirp", EnergyPattern::FrequencyRamp, 0.30, 0.80, 0.8, 2.0},
      {"tone_mid", EnergyPattern::TonalRidge, 0.38, -1, 0.5, 2.0},
      {"chirp_low", EnergyPattern::FrequencyRamp, 0.05, 0.40, 0.6, 1.6},
      {"tone_top", EnergyPattern::TonalRidge, 0.82, -1, 0.5, 2.0},
      {"burst_high", EnergyPattern::BroadbandBurst, 0.50, 0.98, 0.3, 1.0},
      {"tone_bass", EnergyPattern::TonalRidge, 0.02, -1, 1.0, 3.0},
      {"chirp_high", EnergyPattern::FrequencyRamp, 0.55, 0.95, 0.6, 1.6},
  };
  std::vector<EventPrototype> out;
  for (int c = 0; c < n_classes; ++c) {
    const Row& r = rows[c];
    EventPrototype p;
    p.cls = c;
    p.name = r.name;
    p.pattern = r.pattern;
    p.f_lo = at(r.lo);
    p.f_hi = r.hi < 0 ? std::min(F, p.f_lo + w) : std::max(p.f_lo + 1, at(r.hi));
    p.min_duration = std::max(r.dmin, data.min_event);
    p.max_duration = std::min(r.dmax, data.max_event);
    if (p.max_duration < p.min_duration) p.max_duration = p.min_duration;
    p.snr_db_min = data.snr_db_min;
    p.snr_db_max = data.snr_db_max;
    out.push_back(p);
  }
  return out;
}

Index ClipSpec::frames() const { return static_cast<Index>(std::floor(duration / hop + 1e-9)); }

ClipSpec clip_spec_from(const DataConfig& data) {
  ClipSpec s;
  s.n_mels = data.n_mels;
  s.hop = data.hop;
  s.duration = data.clip_duration;
  s.max_polyphony = data.max_polyphony;
  s.noise_db = data.noise_db;
  s.noise_std_db = data.noise_std_db;
  return s;
}

float power_to_feature(double power) { return static_cast<float>((10.0 * std::log10(power) + 30.0) / 20.0); }

std::vector<int> rasterize_event(double onset, double offset, double hop, Index n_frames) {
  std::vector<int> active(static_cast<std::size_t>(n_frames), 0);
  for (Index i = 0; i < n_frames; ++i) {
    const double a = static_cast<double>(i) * hop, b = a + hop;
    const double overlap = std::min(b, offset) - std::max(a, onset);
    if (overlap >= 0.5 * hop - 1e-12) active[static_cast<std::size_t>(i)] = 1;
  }
  return active;
}

Tensor4<float> rasterize_events(const EventList& events, int n_classes, double hop, Index n_frames) {
  Tensor4<float> out(Shape4{1, n_classes, n_frames, 1});
  for (const auto& e : events) {
    if (e.cls < 0 || e.cls >= n_classes) throw FormatError("event class out of range");
    const auto a = rasterize_event(e.onset, e.offset, hop, n_frames);
    for (Index t = 0; t < n_frames; ++t)
      if (a[static_cast<std::size_t>(t)]) out(0, e.cls, t, 0) = 1.0f;
  }
  return out;
}

namespace {

double round_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

void add_event(Tensor4<double>& power, const EventPrototype& p, const PlacedEvent& e, const ClipSpec& spec, Rng& rng) {
  const Index T = power.shape().t, F = power.shape().f;
  const auto active = rasterize_event(e.onset, e.offset, spec.hop, T);
  const double amp = std::pow(10.0, (spec.noise_db + e.snr_db) / 10.0);
  const double width = static_cast<double>(p.f_hi - p.f_lo);
  const double centre = 0.5 * static_cast<double>(p.f_lo + p.f_hi - 1);
  const double dur = e.offset - e.onset;
  for (Index t = 0; t < T; ++t) {
    if (!active[static_cast<std::size_t>(t)]) continue;
    const double rel = std::clamp(((static_cast<double>(t) + 0.5) * spec.hop - e.onset) / dur, 0.0, 1.0);
    for (Index f = p.f_lo; f < std::min(p.f_hi, F); ++f) {
      double shape = 0.0;
      switch (p.pattern) {
        case EnergyPattern::TonalRidge:
          shape = width > 1 ? 1.0 - 0.5 * std::abs(static_cast<double>(f) - centre) / (0.5 * (width - 1)) : 1.0;
          break;
        case EnergyPattern::BroadbandBurst:
          shape = (0.3 + 0.7 * rng.uniform()) * std::max(0.15, std::exp(-2.5 * rel));
          break;
        case EnergyPattern::FrequencyRamp: {
          const double line = static_cast<double>(p.f_lo) + rel * (width - 1);
          const double d = (static_cast<double>(f) - line) / 1.5;
          shape = std::exp(-d * d);
          break;
        }
      }
      power(0, 0, t, f) += amp * shape;
    }
  }
}

}  // namespace

ClipRecord generate_clip(const std::vector<EventPrototype>& prototypes, const ClipSpec& spec, std::uint64_t seed,
                         const std::string& id) {
  const Index T = spec.frames(), F = spec.n_mels;
  if (T < 1 || F < 1) throw ConfigError("clip needs at least one frame and one bin");
  Rng rng(seed);
  ClipRecord rec;
  rec.id = id;
  rec.seed = seed;
  Tensor4<double> power(Shape4{1, 1, T, F});
  for (Index i = 0; i < power.size(); ++i)
    power[i] = std::pow(10.0, (spec.noise_db + spec.noise_std_db * rng.normal()) / 10.0);

  if (!spec.forced.empty()) {
    rec.events = spec.forced;
  } else if (spec.max_polyphony > 0) {
    if (prototypes.empty()) throw ConfigError("events requested but no prototypes given");
    const int n = static_cast<int>(std::min<Index>(rng.uniform_int(1, spec.max_polyphony), static_cast<Index>(prototypes.size())));
    std::vector<int> pool;
    for (const auto& p : prototypes) pool.push_back(p.cls);
    for (int k = 0; k < n; ++k) {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<Index>(pool.size()) - 1));
      const int cls = pool[pick];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      const auto& p = prototypes[static_cast<std::size_t>(cls)];
      if (p.max_duration >= spec.duration)
        throw ConfigError("prototype " + p.name + " lasts up to " + format_number(p.max_duration) +
                          " s, which does not fit a " + format_number(spec.duration) + " s clip");
      const double dur = rng.uniform(p.min_duration, p.max_duration);
      const double onset = round_ms(rng.uniform(0.0, spec.duration - dur));
      const double offset = std::min(spec.duration, round_ms(onset + dur));
      rec.events.push_back(PlacedEvent{cls, onset, offset, rng.uniform(p.snr_db_min, p.snr_db_max)});
    }
  }
  for (const auto& e : rec.events) {
    if (e.cls < 0 || e.cls >= static_cast<int>(prototypes.size())) throw ConfigError("event class has no prototype");
    if (!(e.onset >= 0.0 && e.onset < e.offset && e.offset <= spec.duration))
      throw ConfigError("event [" + format_number(e.onset) + ", " + format_number(e.offset) + ") does not fit the clip");
    add_event(power, prototypes[static_cast<std::size_t>(e.cls)], e, spec, rng);
  }
  rec.features = Tensor4<float>(power.shape());
  for (Index i = 0; i < power.size(); ++i) rec.features[i] = power_to_feature(power[i]);
  return rec;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (train, valid, test)");
}

std::array<Index, 3> split_sizes(Index n_clips, double train_ratio, double valid_ratio) {
  if (train_ratio < 0 || valid_ratio < 0 || train_ratio + valid_ratio > 1.0 + 1e-12)
    throw ConfigError("split ratios must be non-negative and sum to at most 1");
  const Index train = std::min<Index>(n_clips, std::llround(train_ratio * static_cast<double>(n_clips)));
  const Index valid = std::min<Index>(n_clips - train, std::llround(valid_ratio * static_cast<double>(n_clips)));
  return {train, valid, n_clips - train - valid};
}

std::uint64_t fnv1a(const float* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int k = 0; k < 4; ++k) {
      h ^= (bits >> (8 * k)) & 0xFFu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string DatasetManifest::text() const {
  std::ostringstream os;
  os << "# synthetic spectrogram dataset\n";
  os << "version = " << version << '\n';
  os << "n_mels = " << n_mels << '\n';
  os << "hop = " << format_number(hop) << '\n';
  os << "clip_duration = " << format_number(clip_duration) << '\n';
  os << "master_seed = " << master_seed << '\n';
  os << "n_classes = " << class_names.size() << '\n';
  for (std::size_t c = 0; c < class_names.size(); ++c) os << "class." << c << " = " << class_names[c] << '\n';
  DataConfig echo = data;
  echo.dir = ".";
  os << emit_data_config(echo);
  os << "[clips]\n";
  os << "id\tsplit\tseed\toffset\tframes\tchecksum\n";
  char hex[32];
  for (const auto& c : clips) {
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(c.checksum));
    os << c.id << '\t' << split_name(c.split) << '\t' << c.seed << '\t' << c.offset << '\t' << c.frames << '\t' << hex << '\n';
  }
  return os.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  DatasetManifest m;
  const auto data_at = text.find("[data]\n");
  const auto clips_at = text.find("[clips]\n");
  if (clips_at == std::string::npos || data_at == std::string::npos || data_at > clips_at)
    throw FormatError("manifest lacks its [data] or [clips] block");
  std::istringstream head(text.substr(0, data_at));
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(head, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("manifest header line '" + line + "' is not key = value");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("manifest lacks " + k);
    return it->second;
  };
  try {
    m.version = std::stoi(get("version"));
    if (m.version != kManifestVersion)
      throw FormatError("manifest version " + std::to_string(m.version) + " is not supported (expected " +
                        std::to_string(kManifestVersion) + ")");
    m.n_mels = std::stol(get("n_mels"));
    m.hop = std::stod(get("hop"));
    m.clip_duration = std::stod(get("clip_duration"));
    m.master_seed = std::stoull(get("master_seed"));
    const int n = std::stoi(get("n_classes"));
    for (int c = 0; c < n; ++c) m.class_names.push_back(get("class." + std::to_string(c)));
  } catch (const std::logic_error&) {
    throw FormatError("manifest header has a malformed number");
  }
  m.data = parse_data_config(text.substr(data_at, clips_at - data_at));
  std::istringstream body(text.substr(clips_at + 8));
  std::getline(body, line);  // column header
  while (std::getline(body, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestClip c;
    std::string split, hex;
    if (!(row >> c.id >> split >> c.seed >> c.offset >> c.frames >> hex)) throw FormatError("malformed manifest clip row '" + line + "'");
    c.split = parse_split(split);
    c.checksum = std::stoull(hex, nullptr, 16);
    m.clips.push_back(c);
  }
  return m;
}

DatasetManifest generate_dataset(const DataConfig& data) {
  if (data.n_clips < 1) throw ConfigError("dataset needs at least one clip");
  const auto sizes = split_sizes(data.n_clips, data.train_ratio, data.valid_ratio);
  const auto protos = default_prototypes(static_cast<int>(data.n_classes), data.n_mels, data);
  const ClipSpec spec = clip_spec_from(data);
  fs::create_directories(data.dir);

  DatasetManifest m;
  m.n_mels = data.n_mels;
  m.hop = data.hop;
  m.clip_duration = data.clip_duration;
  m.master_seed = data.seed;
  m.data = data;
  for (const auto& p : protos) m.class_names.push_back(p.name);

  const std::string feat_path = (fs::path(data.dir) / "features.f32").string();
  std::ofstream feats(feat_path, std::ios::binary | std::ios::trunc);
  if (!feats) throw FormatError("cannot write " + feat_path);
  std::map<Split, EventList> truth;
  std::map<Split, std::map<std::string, double>> durations;
  std::uint64_t offset = 0;
  char id[32];
  for (Index i = 0; i < data.n_clips; ++i) {
    const Split split = i < sizes[0] ? Split::Train : (i < sizes[0] + sizes[1] ? Split::Valid : Split::Test);
    std::snprintf(id, sizeof id, "clip_%05lld", static_cast<long long>(i));
    const std::uint64_t seed = Rng::derive(data.seed, static_cast<std::uint64_t>(i));
    const ClipRecord rec = generate_clip(protos, spec, seed, id);
    const auto n = static_cast<std::size_t>(rec.features.size());
    std::string bytes(n * 4, '\0');
    for (std::size_t k = 0; k < n; ++k) {
      const auto bits = std::bit_cast<std::uint32_t>(rec.features.data()[k]);
      for (int b = 0; b < 4; ++b) bytes[4 * k + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
    feats.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    m.clips.push_back(ManifestClip{id, split, seed, offset, rec.features.shape().t, fnv1a(rec.features.data(), n)});
    offset += n;
    for (const auto& e : rec.events) truth[split].push_back(Event{id, e.cls, e.onset, e.offset});
    durations[split][id] = data.clip_duration;
  }
  feats.close();
  if (!feats) throw FormatError("write to " + feat_path + " failed");
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    write_events_tsv((fs::path(data.dir) / (std::string(split_name(s)) + ".tsv")).string(), truth[s], m.class_names);
    write_durations_tsv((fs::path(data.dir) / (std::string(split_name(s)) + "_durations.tsv")).string(), durations[s]);
  }
  std::ofstream man(fs::path(data.dir) / "manifest.txt", std::ios::trunc);
  man << m.text();
  if (!man) throw FormatError("cannot write manifest in " + data.dir);
  return m;
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (clips[i].meta.split == s) out.push_back(i);
  return out;
}

EventList Dataset::ground_truth(Split s) const {
  EventList out;
  for (std::size_t i : indices(s)) out.insert(out.end(), clips[i].events.begin(), clips[i].events.end());
  return out;
}

double Dataset::hours(Split s) const {
  return static_cast<double>(indices(s).size()) * manifest.clip_duration / 3600.0;
}

Dataset read_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest " + manifest_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Dataset d;
  d.manifest = DatasetManifest::parse(ss.str());
  d.dir = fs::path(manifest_path).parent_path().string();
  if (d.dir.empty()) d.dir = ".";
  if (d.manifest.clips.empty()) return d;

  const std::string feat_path = (fs::path(d.dir) / "features.f32").string();
  std::ifstream fin(feat_path, std::ios::binary);
  if (!fin) throw FormatError("cannot open " + feat_path);
  std::ostringstream fb;
  fb << fin.rdbuf();
  const std::string bytes = fb.str();

  std::map<std::string, EventList> events;
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    const auto path = fs::path(d.dir) / (std::string(split_name(s)) + ".tsv");
    if (!fs::exists(path)) continue;
    for (auto& e : read_events_tsv(path.string(), d.manifest.class_names)) events[e.file].push_back(e);
  }
  const Index F = d.manifest.n_mels;
  for (const auto& meta : d.manifest.clips) {
    DatasetClip c;
    c.meta = meta;
    const std::uint64_t n = static_cast<std::uint64_t>(meta.frames * F);
    if ((meta.offset + n) * 4 > bytes.size()) throw FormatError("features.f32 is shorter than the manifest says (clip " + meta.id + ")");
    c.features = Tensor4<float>(Shape4{1, 1, meta.frames, F});
    for (std::uint64_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * (meta.offset + k) + static_cast<std::size_t>(b)])) << (8 * b);
      c.features[static_cast<Index>(k)] = std::bit_cast<float>(bits);
    }
    if (fnv1a(c.features.data(), static_cast<std::size_t>(n)) != meta.checksum)
      throw FormatError("checksum mismatch for clip " + meta.id);
    c.events = events[meta.id];
    for (const auto& e : c.events)
      if (e.offset > d.manifest.clip_duration + 1e-9) throw FormatError("event beyond clip end in " + meta.id);
    c.strong = rasterize_events(c.events, static_cast<int>(d.manifest.class_names.size()), d.manifest.hop, meta.frames);
    d.clips.push_back(std::move(c));
  }
  return d;
}

LabeledBatch make_batch(const Dataset& data, const std::vector<std::size_t>& clip_indices) {
  if (clip_indices.empty()) throw ConfigError("empty batch");
  const auto& first = data.clips.at(clip_indices[0]);
  const Index B = static_cast<Index>(clip_indices.size());
  const Index T = first.features.shape().t, F = first.features.shape().f, C = first.strong.shape().c;
  LabeledBatch b;
  b.features = Tensor4<float>(Shape4{B, 1, T, F});
  b.strong = Tensor4<float>(Shape4{B, C, T, 1});
  b.weak = Tensor4<float>(Shape4{B, C, 1, 1});
  for (Index i = 0; i < B; ++i) {
    const auto& c = data.clips.at(clip_indices[static_cast<std::size_t>(i)]);
    if (c.features.shape().t != T) throw ShapeError("clips in one batch must share their frame count");
    b.features.array().segment(i * T * F, T * F) = c.features.array();
    b.strong.array().segment(i * C * T, C * T) = c.strong.array();
    for (Index k = 0; k < C; ++k) {
      float any = 0.0f;
      for (Index t = 0; t < T; ++t) any = std::max(any, c.strong(0, k, t, 0));
      for (const auto& e : c.events)
        if (e.cls == k) any = 1.0f;
      b.weak(i, k, 0, 0) = any;
    }
  }
  b.has_strong.assign(static_cast<std::size_t>(B), true);
  b.has_weak.assign(static_cast<std::size_t>(B), true);
  return b;
}

}  // namespace fdy
