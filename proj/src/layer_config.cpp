#include "fdy/layer_config.hpp"

#include <cctype>
#include <charconv>
#include <numeric>
#include <sstream>

#include "fdy/errors.hpp"

namespace fdy {

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw ConfigError("rational with zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  num = g ? n / g : n;
  den = g ? d / g : d;
}

Index Rational::of(Index count, std::string_view what) const {
  if (!divides(count))
    throw ConfigError(std::string(what) + ": " + std::to_string(count) + " channels * " + str() +
                      " is not an integer");
  return count * num / den;
}

std::string Rational::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

namespace {

std::int64_t parse_int(std::string_view text, std::string_view context) {
  std::int64_t v = 0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("expected integer in " + std::string(context) + ", got '" + std::string(text) + "'");
  return v;
}

std::string strip(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

}  // namespace

Rational Rational::parse(std::string_view text) {
  const std::string s = strip(text);
  const auto slash = s.find('/');
  if (slash == std::string::npos) return {parse_int(s, "rational"), 1};
  return {parse_int(std::string_view(s).substr(0, slash), "rational"),
          parse_int(std::string_view(s).substr(slash + 1), "rational")};
}

std::vector<int> DilationSpec::expand() const {
  if (n_kernels < 1) throw ConfigError("a dynamic branch needs at least one basis kernel");
  if (dilated_sizes.size() > static_cast<std::size_t>(n_kernels))
    throw ConfigError("dilation spec lists " + std::to_string(dilated_sizes.size()) +
                      " dilated kernels but the branch has only " + std::to_string(n_kernels));
  std::vector<int> out(static_cast<std::size_t>(n_kernels), 1);
  const std::size_t first = out.size() - dilated_sizes.size();
  for (std::size_t i = 0; i < dilated_sizes.size(); ++i) {
    if (dilated_sizes[i] < 1) throw ConfigError("dilation sizes must be >= 1");
    out[first + i] = dilated_sizes[i];
  }
  return out;
}

std::vector<int> expand_dilation_spec(const DilationSpec& spec) { return spec.expand(); }

Index AttentionHeadConfig::hidden(Index c_in) const {
  return std::max<Index>(c_in / squeeze_ratio, min_hidden);
}

Rational MDFDLayerConfig::static_proportion() const {
  Rational dynamic{0, 1};
  for (const auto& b : branches) dynamic = dynamic + b.proportion;
  return Rational{1, 1} - dynamic;
}

Index MDFDLayerConfig::branch_channels(std::size_t i) const {
  return branches.at(i).proportion.of(out_channels, "branch " + std::to_string(i));
}

Index MDFDLayerConfig::static_channels() const {
  Index used = 0;
  for (std::size_t i = 0; i < branches.size(); ++i) used += branch_channels(i);
  return out_channels - used;
}

ValidatedLayer validate_config(const MDFDLayerConfig& config, Index input_f) {
  if (config.in_channels < 1 || config.out_channels < 1)
    throw ConfigError("layer channel counts must be positive");
  if (config.kernel_t < 1 || config.kernel_f < 1) throw ConfigError("kernel extents must be positive");
  if (!(config.attention.temperature > 0.0)) throw ConfigError("attention temperature must be > 0");
  if (config.attention.squeeze_ratio < 1) throw ConfigError("attention squeeze ratio must be >= 1");
  ValidatedLayer out{config, {}, {}};
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    const auto& br = config.branches[i];
    if (!(Rational{0, 1} < br.proportion) || !(br.proportion <= Rational{1, 1}))
      throw ConfigError("branch " + std::to_string(i) + ": proportion " + br.proportion.str() +
                        " outside (0, 1]");
    if (config.branch_channels(i) < 1)
      throw ConfigError("branch " + std::to_string(i) + " has no output channels");
  }
  const Rational rest = config.static_proportion();
  if (rest < Rational{0, 1})
    throw ConfigError("branch proportions sum to more than 1 (static share " + rest.str() + ")");
  rest.of(config.out_channels, "static branch");

  const Index half_span = (config.kernel_f - 1) / 2;
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    std::vector<int> dil = config.branches[i].dilation.expand();
    bool changed = false;
    for (int& d : dil)
      if (d > 1 && half_span * d >= input_f) {
        d = 1;
        changed = true;
      }
    if (changed) {
      out.warnings.push_back("branch " + std::to_string(i) + ": input has " + std::to_string(input_f) +
                             " frequency bins, dilations forced to 1");
      auto& spec = out.config.branches[i].dilation.dilated_sizes;
      std::vector<int> kept;
      for (int d : dil)
        if (d > 1) kept.push_back(d);
      spec = kept;
    }
    out.dilations.push_back(std::move(dil));
  }
  return out;
}

LayerParamCount layer_param_count(const MDFDLayerConfig& config) {
  LayerParamCount n;
  const Index window = static_cast<Index>(config.kernel_t) * config.kernel_f;
  const Index c_in = config.in_channels;
  const Index c_static = config.static_channels();
  n.static_weights = c_in * c_static * window;
  n.biases = config.out_channels;
  n.total = n.static_weights + n.biases;
  for (std::size_t i = 0; i < config.branches.size(); ++i) {
    const Index k = config.branches[i].dilation.n_kernels;
    const Index kernels = k * c_in * config.branch_channels(i) * window;
    const Index hidden = config.attention.hidden(c_in);
    const Index attention = c_in * hidden * config.attention.kernel_f + 2 * hidden +
                            hidden * k * config.attention.logit_kernel_f + k;
    n.branch_kernel_weights.push_back(kernels);
    n.branch_attention.push_back(attention);
    n.total += kernels + attention;
  }
  return n;
}

std::vector<DilationSpec> parse_branch_list(std::string_view text, int n_kernels) {
  const std::string s = strip(text);
  std::vector<DilationSpec> out;
  if (s.empty() || s == "none") return out;
  auto fail = [&](std::size_t pos, const std::string& msg) -> ConfigError {
    return ConfigError("dilation spec '" + std::string(text) + "' at offset " + std::to_string(pos) + ": " + msg);
  };
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (s[pos] != '(') throw fail(pos, "expected '('");
    const std::size_t close = s.find(')', pos);
    if (close == std::string::npos) throw fail(pos, "unterminated '('");
    DilationSpec spec;
    spec.n_kernels = n_kernels;
    std::string_view inner(s.data() + pos + 1, close - pos - 1);
    if (inner.empty()) throw fail(pos, "empty branch");
    std::vector<int> sizes;
    std::size_t start = 0;
    while (start <= inner.size()) {
      const std::size_t comma = inner.find(',', start);
      const auto token = inner.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      const auto v = parse_int(token, "dilation spec");
      if (v < 1) throw fail(pos, "dilation sizes must be >= 1");
      sizes.push_back(static_cast<int>(v));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!(sizes.size() == 1 && sizes[0] == 1)) {
      for (int d : sizes)
        if (d < 2) throw fail(pos, "'1' is only valid as the lone entry '(1)'");
      spec.dilated_sizes = sizes;
    }
    spec.expand();  // size check
    pos = close + 1;
    std::int64_t repeat = 1;
    if (pos < s.size() && (s[pos] == 'x' || s[pos] == 'X' || s[pos] == '*')) {
      std::size_t end = pos + 1;
      while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
      repeat = parse_int(std::string_view(s).substr(pos + 1, end - pos - 1), "repeat count");
      if (repeat < 1) throw fail(pos, "repeat count must be >= 1");
      pos = end;
    }
    for (std::int64_t r = 0; r < repeat; ++r) out.push_back(spec);
    if (pos < s.size()) {
      if (s[pos] != '+') throw fail(pos, "expected '+'");
      ++pos;
      if (pos == s.size()) throw fail(pos, "trailing '+'");
    }
  }
  return out;
}

std::string format_branch_list(const std::vector<DilationSpec>& branches) {
  if (branches.empty()) return "none";
  std::ostringstream os;
  for (std::size_t i = 0; i < branches.size();) {
    std::size_t j = i + 1;
    while (j < branches.size() && branches[j] == branches[i]) ++j;
    if (i) os << '+';
    os << '(';
    if (branches[i].dilated_sizes.empty()) {
      os << '1';
    } else {
      for (std::size_t k = 0; k < branches[i].dilated_sizes.size(); ++k)
        os << (k ? "," : "") << branches[i].dilated_sizes[k];
    }
    os << ')';
    if (j - i > 1) os << 'x' << (j - i);
    i = j;
  }
  return os.str();
}

}  // namespace fdy
