#pragma once

// Synthetic log-power spectrogram clips with labeled events. Classes 0 and 1
// are frequency twins: identical envelopes and band shapes, disjoint bands.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fdy/augment.hpp"
#include "fdy/config.hpp"
#include "fdy/events.hpp"

namespace fdy {

enum class EnergyPattern { TonalRidge, BroadbandBurst, FrequencyRamp };

struct EventPrototype {
  int cls = 0;
  std::string name;
  Index f_lo = 0, f_hi = 1;  // [f_lo, f_hi) mel bins
  double min_duration = 0.5, max_duration = 3.0;
  EnergyPattern pattern = EnergyPattern::TonalRidge;
  double snr_db_min = 6.0, snr_db_max = 15.0;
};

inline constexpr std::array<int, 2> kTwinClasses{0, 1};

/// Default class table for `n_classes` in [1, 10] and `n_mels` bins.
std::vector<EventPrototype> default_prototypes(int n_classes, Index n_mels, const DataConfig& data = {});

struct PlacedEvent {
  int cls = 0;
  double onset = 0.0, offset = 0.0;
  double snr_db = 10.0;
};

struct ClipSpec {
  Index n_mels = 128;
  double hop = 0.064;
  double duration = 10.0;
  int max_polyphony = 2;  // events per clip are drawn from [1, max_polyphony]; 0 means noise only
  double noise_db = -30.0;
  double noise_std_db = 2.0;
  std::vector<PlacedEvent> forced;  // non-empty: place exactly these events

  Index frames() const;
};

ClipSpec clip_spec_from(const DataConfig& data);

struct ClipRecord {
  std::string id;
  Tensor4<float> features;  // [1, 1, T, F]
  std::vector<PlacedEvent> events;
  std::uint64_t seed = 0;
};

/// Feature value of a linear power: (10·log10(p) + 30) / 20, so a -30 dB floor maps to 0.
float power_to_feature(double power);

ClipRecord generate_clip(const std::vector<EventPrototype>& prototypes, const ClipSpec& spec, std::uint64_t seed,
                         const std::string& id = "clip");

enum class Split { Train, Valid, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestClip {
  std::string id;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::uint64_t offset = 0;  // float index into features.f32
  Index frames = 0;
  std::uint64_t checksum = 0;
};

struct DatasetManifest {
  int version = 1;
  Index n_mels = 128;
  double hop = 0.064;
  double clip_duration = 10.0;
  std::uint64_t master_seed = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestClip> clips;
  DataConfig data;  // generation parameters echoed for regeneration

  std::string text() const;
  static DatasetManifest parse(const std::string& text);
};

inline constexpr int kManifestVersion = 1;

/// Splits as rounded ratios (test gets the remainder).
std::array<Index, 3> split_sizes(Index n_clips, double train_ratio, double valid_ratio);

/// Writes manifest.txt, features.f32, {split}.tsv and {split}_durations.tsv into data.dir.
DatasetManifest generate_dataset(const DataConfig& data);

std::uint64_t fnv1a(const float* data, std::size_t n);

struct DatasetClip {
  ManifestClip meta;
  Tensor4<float> features;  // [1, 1, T, F]
  EventList events;
  Tensor4<float> strong;    // [1, n_classes, T, 1] half-frame rule
};

struct Dataset {
  DatasetManifest manifest;
  std::string dir;
  std::vector<DatasetClip> clips;

  std::vector<std::size_t> indices(Split s) const;
  EventList ground_truth(Split s) const;
  double hours(Split s) const;
};

/// Reads clips in manifest order, verifying version and per-clip checksums.
Dataset read_dataset(const std::string& manifest_path);

/// Frame i covering [i·hop, (i+1)·hop) is active iff it overlaps [onset, offset) by at least hop/2.
std::vector<int> rasterize_event(double onset, double offset, double hop, Index n_frames);
Tensor4<float> rasterize_events(const EventList& events, int n_classes, double hop, Index n_frames);

LabeledBatch make_batch(const Dataset& data, const std::vector<std::size_t>& clip_indices);

}  // namespace fdy
