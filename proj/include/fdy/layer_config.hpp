#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fdy/tensor.hpp"

namespace fdy {

/// Exact fraction num/den with den > 0, kept in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d);

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
  Rational operator+(const Rational& o) const { return {num * o.den + o.num * den, den * o.den}; }
  Rational operator-(const Rational& o) const { return {num * o.den - o.num * den, den * o.den}; }
  Rational operator*(const Rational& o) const { return {num * o.num, den * o.den}; }
  bool operator<(const Rational& o) const { return num * o.den < o.num * den; }
  bool operator<=(const Rational& o) const { return num * o.den <= o.num * den; }

  /// `count * this` when it is an integer; throws ConfigError otherwise.
  Index of(Index count, std::string_view what) const;
  bool divides(Index count) const { return (count * num) % den == 0; }

  std::string str() const;
  static Rational parse(std::string_view text);
};

/// Frequency dilations of one branch's basis kernels. The first
/// `n_kernels - dilated_sizes.size()` kernels are undilated; the remainder take
/// `dilated_sizes` in order, so (2,3) with four kernels means [1,1,2,3].
struct DilationSpec {
  std::vector<int> dilated_sizes;
  int n_kernels = 4;

  std::vector<int> expand() const;
  bool operator==(const DilationSpec&) const = default;
};

std::vector<int> expand_dilation_spec(const DilationSpec& spec);

struct BranchSpec {
  Rational proportion{1, 8};
  DilationSpec dilation;

  bool operator==(const BranchSpec&) const = default;
};

struct AttentionHeadConfig {
  int squeeze_ratio = 4;
  int min_hidden = 4;
  int kernel_f = 3;        // first 1-D frequency conv
  int logit_kernel_f = 1;  // second conv producing one logit per basis kernel
  double temperature = 31.0;

  Index hidden(Index c_in) const;
  bool operator==(const AttentionHeadConfig&) const = default;
};

struct MDFDLayerConfig {
  std::vector<BranchSpec> branches;
  Index in_channels = 1;
  Index out_channels = 1;
  int kernel_t = 3;
  int kernel_f = 3;
  AttentionHeadConfig attention;

  Rational static_proportion() const;
  Index branch_channels(std::size_t i) const;
  Index static_channels() const;
  bool operator==(const MDFDLayerConfig&) const = default;
};

/// Result of validating a layer against the frequency extent it will see.
struct ValidatedLayer {
  MDFDLayerConfig config;
  std::vector<std::vector<int>> dilations;  // expanded per branch, after overrides
  std::vector<std::string> warnings;
};

/// Checks channel splits and drops frequency dilations whose off-centre taps
/// can never reach a real bin, i.e. ((k_F - 1) / 2) * d >= input_f. With a
/// 3-wide kernel this only triggers at the final CNN layer (two input bins).
ValidatedLayer validate_config(const MDFDLayerConfig& config, Index input_f);

struct LayerParamCount {
  Index static_weights = 0;
  std::vector<Index> branch_kernel_weights;
  std::vector<Index> branch_attention;
  Index biases = 0;
  Index total = 0;
};

/// Closed-form trainable-parameter count for one convolution layer.
LayerParamCount layer_param_count(const MDFDLayerConfig& config);

/// Parses `(1)x5+(2,3)+(2,2,3)+(2,3,3)`. "none" or "" means no dynamic branch.
std::vector<DilationSpec> parse_branch_list(std::string_view text, int n_kernels = 4);

/// Canonical form: consecutive identical branches collapse into `xN`.
std::string format_branch_list(const std::vector<DilationSpec>& branches);

}  // namespace fdy
