#pragma once

#include <string>
#include <vector>

#include "fdy/config.hpp"

namespace fdy {

/// One row of a published parameter table with its reference value in
/// millions (negative when the table does not list one).
struct TablePreset {
  std::string table;
  std::string label;
  ModelConfig model;
  double published_params_m = -1.0;
};

/// Rows of table "I", "II", "III" or "IV"; throws listing the valid names.
std::vector<TablePreset> table_presets(const std::string& table);
const std::vector<std::string>& preset_tables();

/// Named single-model presets: crnn, fdy, pfd-1/8, mfd-1/8x5, mdfd-desk, ...
ModelConfig named_preset(const std::string& name);
std::vector<std::string> named_presets();

struct PresetCount {
  TablePreset preset;
  Index computed = 0;
};
std::vector<PresetCount> count_table(const std::string& table);
std::string format_table(const std::string& table, const std::vector<PresetCount>& rows);

}  // namespace fdy
