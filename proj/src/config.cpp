#include "fdy/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "fdy/errors.hpp"

namespace fdy {

std::vector<Index> ModelConfig::channels() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < base_channels.size(); ++i)
    out.push_back(width.of(base_channels[i], "layer " + std::to_string(i + 1) + " width"));
  return out;
}

std::vector<DilationSpec> ModelConfig::branches() const { return parse_branch_list(dynamic, n_kernels); }

Index ModelConfig::time_pool_factor() const {
  Index f = 1;
  for (Index p : pool_time) f *= p;
  return f;
}

std::vector<double> EvalConfig::thresholds() const {
  std::vector<double> out;
  for (int k = 0; k < n_thresholds; ++k) out.push_back((2.0 * k + 1.0) / (2.0 * n_thresholds));
  return out;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

template <class Int>
Int parse_integer(const std::string& text) {
  Int v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty())
    throw ConfigError("expected an integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& text) {
  double v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size() || text.empty())
    throw ConfigError("expected a number, got '" + text + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void parse_value(const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "on") out = true;
  else if (text == "false" || text == "0" || text == "off") out = false;
  else throw ConfigError("expected true/false, got '" + text + "'");
}
void parse_value(const std::string& text, int& out) { out = parse_integer<int>(text); }
void parse_value(const std::string& text, long& out) { out = parse_integer<long>(text); }
void parse_value(const std::string& text, long long& out) { out = parse_integer<long long>(text); }
void parse_value(const std::string& text, unsigned long& out) { out = parse_integer<unsigned long>(text); }
void parse_value(const std::string& text, unsigned long long& out) { out = parse_integer<unsigned long long>(text); }
void parse_value(const std::string& text, double& out) { out = parse_double(text); }
void parse_value(const std::string& text, std::string& out) { out = text; }
void parse_value(const std::string& text, Rational& out) { out = Rational::parse(text); }
template <class T>
void parse_value(const std::string& text, std::vector<T>& out) {
  out.clear();
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    T v{};
    parse_value(trim(std::string_view(text).substr(start, comma == std::string::npos ? std::string::npos : comma - start)), v);
    out.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

std::string emit_value(bool v) { return v ? "true" : "false"; }
std::string emit_value(double v) { return format_double(v); }
std::string emit_value(const std::string& v) { return v; }
std::string emit_value(const Rational& v) { return v.str(); }
template <class T>
  requires std::is_integral_v<T>
std::string emit_value(T v) {
  return std::to_string(v);
}
template <class T>
std::string emit_value(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + emit_value(v[i]);
  return out;
}

struct Setter {
  const std::string& key;
  const std::string& value;
  bool found = false;
  template <class T>
  void operator()(const char* name, T& field) {
    if (key != name) return;
    parse_value(value, field);
    found = true;
  }
};

struct Printer {
  std::ostringstream& os;
  template <class T>
  void operator()(const char* name, const T& field) {
    os << name << " = " << emit_value(field) << '\n';
  }
};

template <class S>
bool set_field(S& section, const std::string& key, const std::string& value) {
  Setter s{key, value};
  section.visit(s);
  return s.found;
}

template <class S>
void print_section(std::ostringstream& os, const char* name, const S& section) {
  os << '[' << name << "]\n";
  Printer p{os};
  const_cast<S&>(section).visit(p);
}

bool set_in(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  if (section == "model") return set_field(cfg.model, key, value);
  if (section == "train") return set_field(cfg.train, key, value);
  if (section == "data") return set_field(cfg.data, key, value);
  if (section == "eval") return set_field(cfg.eval, key, value);
  if (section == "postproc") return set_field(cfg.postproc, key, value);
  throw ConfigError("unknown config section [" + section + "]");
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    auto at = [&](const std::string& msg) { return ConfigError("config line " + std::to_string(number) + ": " + msg); };
    if (body.front() == '[') {
      if (body.back() != ']') throw at("malformed section header '" + body + "'");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      if (section != "model" && section != "train" && section != "data" && section != "eval" && section != "postproc")
        throw at("unknown section [" + section + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw at("expected key = value, got '" + body + "'");
    if (section.empty()) throw at("key outside of any section");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      if (!set_in(cfg, section, key, value)) throw at("unknown key '" + key + "' in [" + section + "]");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.rfind("config line", 0) == 0) throw;
      throw at(key + ": " + msg);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string emit_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  print_section(os, "model", cfg.model);
  os << '\n';
  print_section(os, "train", cfg.train);
  os << '\n';
  print_section(os, "data", cfg.data);
  os << '\n';
  print_section(os, "eval", cfg.eval);
  os << '\n';
  print_section(os, "postproc", cfg.postproc);
  return os.str();
}

ModelConfig parse_model_config(std::string_view text) {
  const RunConfig cfg = parse_run_config(text);
  return cfg.model;
}

std::string emit_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  print_section(os, "model", cfg);
  return os.str();
}

DataConfig parse_data_config(std::string_view text) { return parse_run_config(text).data; }

std::string emit_data_config(const DataConfig& cfg) {
  std::ostringstream os;
  print_section(os, "data", cfg);
  return os.str();
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const std::string a(assignment);
  const auto eq = a.find('=');
  const auto dot = a.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + a + "' is not of the form section.key=value");
  const std::string section = trim(std::string_view(a).substr(0, dot));
  const std::string key = trim(std::string_view(a).substr(dot + 1, eq - dot - 1));
  const std::string value = trim(std::string_view(a).substr(eq + 1));
  if (!set_in(cfg, section, key, value)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
}

}  // namespace fdy
