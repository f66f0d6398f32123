#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace fdy {

/// One labeled time span in one clip.
struct Event {
  std::string file;
  int cls = 0;
  double onset = 0.0;
  double offset = 0.0;
  double confidence = std::nan("");  // detections only

  double duration() const { return offset - onset; }
  bool operator==(const Event& o) const {
    return file == o.file && cls == o.cls && onset == o.onset && offset == o.offset;
  }
};

using EventList = std::vector<Event>;

/// Rejects onset >= offset and negative onsets.
void validate_events(const EventList& events);

/// `filename<TAB>onset<TAB>offset<TAB>event_label[<TAB>confidence]` with a
/// header line. Labels map to class ids through `class_names`.
void write_events_tsv(const std::string& path, const EventList& events, const std::vector<std::string>& class_names);
std::string format_events_tsv(const EventList& events, const std::vector<std::string>& class_names);
EventList read_events_tsv(const std::string& path, const std::vector<std::string>& class_names);
EventList parse_events_tsv(const std::string& text, const std::vector<std::string>& class_names);

/// `filename<TAB>duration_seconds` with a header line.
void write_durations_tsv(const std::string& path, const std::map<std::string, double>& durations);
std::map<std::string, double> read_durations_tsv(const std::string& path);

/// Shortest round-trip decimal text for a double.
std::string format_number(double v);

}  // namespace fdy
