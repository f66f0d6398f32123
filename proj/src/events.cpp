#include "fdy/events.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fdy/errors.hpp"

namespace fdy {

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void validate_events(const EventList& events) {
  for (const auto& e : events) {
    if (!(e.onset < e.offset))
      throw FormatError("event in " + e.file + " has onset " + format_number(e.onset) + " >= offset " + format_number(e.offset));
    if (e.onset < 0.0) throw FormatError("event in " + e.file + " has a negative onset");
  }
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw FormatError("write to " + path + " failed");
}

}  // namespace

std::string format_events_tsv(const EventList& events, const std::vector<std::string>& class_names) {
  bool with_conf = false;
  for (const auto& e : events) with_conf = with_conf || !std::isnan(e.confidence);
  std::ostringstream os;
  os << "filename\tonset\toffset\tevent_label" << (with_conf ? "\tconfidence" : "") << '\n';
  for (const auto& e : events) {
    if (e.cls < 0 || e.cls >= static_cast<int>(class_names.size()))
      throw FormatError("event class " + std::to_string(e.cls) + " has no name");
    os << e.file << '\t' << format_number(e.onset) << '\t' << format_number(e.offset) << '\t'
       << class_names[static_cast<std::size_t>(e.cls)];
    if (with_conf) os << '\t' << format_number(std::isnan(e.confidence) ? 1.0 : e.confidence);
    os << '\n';
  }
  return os.str();
}

void write_events_tsv(const std::string& path, const EventList& events, const std::vector<std::string>& class_names) {
  spit(path, format_events_tsv(events, class_names));
}

EventList parse_events_tsv(const std::string& text, const std::vector<std::string>& class_names) {
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < class_names.size(); ++i) ids[class_names[i]] = static_cast<int>(i);
  EventList out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") continue;
    const auto cols = split_tabs(line);
    if (number == 1 && cols[0] == "filename") continue;
    const std::string where = "events line " + std::to_string(number);
    if (cols.size() != 4 && cols.size() != 5) throw FormatError(where + ": expected 4 or 5 tab-separated columns");
    auto it = ids.find(cols[3]);
    if (it == ids.end()) throw FormatError(where + ": unknown event label '" + cols[3] + "'");
    Event e{cols[0], it->second, to_double(cols[1], where), to_double(cols[2], where)};
    if (cols.size() == 5) e.confidence = to_double(cols[4], where);
    if (!(e.onset < e.offset) || e.onset < 0) throw FormatError(where + ": onset must be >= 0 and below offset");
    out.push_back(e);
  }
  return out;
}

EventList read_events_tsv(const std::string& path, const std::vector<std::string>& class_names) {
  try {
    return parse_events_tsv(slurp(path), class_names);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_durations_tsv(const std::string& path, const std::map<std::string, double>& durations) {
  std::ostringstream os;
  os << "filename\tduration\n";
  for (const auto& [f, d] : durations) os << f << '\t' << format_number(d) << '\n';
  spit(path, os.str());
}

std::map<std::string, double> read_durations_tsv(const std::string& path) {
  std::map<std::string, double> out;
  std::istringstream in(slurp(path));
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (number == 1 && cols[0] == "filename") continue;
    const std::string where = path + " line " + std::to_string(number);
    if (cols.size() != 2) throw FormatError(where + ": expected filename and duration");
    out[cols[0]] = to_double(cols[1], where);
  }
  return out;
}

}  // namespace fdy
