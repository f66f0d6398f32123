#include "fdy/presets.hpp"

#include <cstdio>
#include <sstream>

#include "fdy/errors.hpp"
#include "fdy/model.hpp"

namespace fdy {

namespace {

ModelConfig base() { return ModelConfig{}; }

ModelConfig dynamic(const std::string& spec, Rational proportion) {
  ModelConfig m = base();
  m.dynamic = spec;
  m.proportion = proportion;
  return m;
}

ModelConfig widened(Rational width, const std::string& spec, Rational proportion) {
  ModelConfig m = dynamic(spec, proportion);
  m.width = width;
  m.pre_conv = true;
  return m;
}

TablePreset row(const std::string& table, const std::string& label, ModelConfig m, double published) {
  return TablePreset{table, label, std::move(m), published};
}

}  // namespace

const std::vector<std::string>& preset_tables() {
  static const std::vector<std::string> names{"I", "II", "III", "IV"};
  return names;
}

std::vector<TablePreset> table_presets(const std::string& table) {
  std::vector<TablePreset> rows;
  if (table == "I") {
    rows.push_back(row(table, "CRNN", base(), 4.428));
    rows.push_back(row(table, "PFD-CRNN (1/32)", dynamic("(1)", {1, 32}), 4.794));
    rows.push_back(row(table, "PFD-CRNN (1/16)", dynamic("(1)", {1, 16}), 4.996));
    const double published[] = {5.401, 6.209, 7.018, 7.827, 8.635, 9.444, 10.253};
    for (int n = 1; n <= 7; ++n)
      rows.push_back(row(table, "PFD-CRNN (" + std::to_string(n) + "/8)", dynamic("(1)", {n, 8}), published[n - 1]));
    rows.push_back(row(table, "FDY-CRNN", dynamic("(1)", {1, 1}), 11.061));
  } else if (table == "II") {
    rows.push_back(row(table, "FDY-CRNN x1", dynamic("(1)", {1, 1}), 11.061));
    rows.push_back(row(table, "PFD-CRNN (1/8) x1", dynamic("(1)", {1, 8}), 5.401));
    rows.push_back(row(table, "MFD-CRNN (1/32) x4", dynamic("(1)x4", {1, 32}), 5.896));
    rows.push_back(row(table, "MFD-CRNN (1/16) x2", dynamic("(1)x2", {1, 16}), 5.566));
    const double published[] = {6.374, 7.348, 8.322, 9.296, 10.270, 11.243, 12.217};
    for (int n = 2; n <= 8; ++n)
      rows.push_back(row(table, "MFD-CRNN (1/8) x" + std::to_string(n), dynamic("(1)x" + std::to_string(n), {1, 8}),
                         published[n - 2]));
  } else if (table == "III") {
    rows.push_back(row(table, "FDY-CRNN (1)", dynamic("(1)", {1, 1}), 11.061));
    rows.push_back(row(table, "PFD-CRNN (1)", dynamic("(1)", {1, 8}), 5.401));
    rows.push_back(row(table, "MFD-CRNN (1)x5", dynamic("(1)x5", {1, 8}), 9.296));
    for (const char* spec :
         {"(1)x4+(2)", "(1)x4+(3)", "(1)x4+(2,2)", "(1)x4+(2,3)", "(1)x4+(3,3)", "(1)x4+(2,2,3)", "(1)x4+(2,3,3)",
          "(1)x3+(2,3)x2", "(1)x3+(2,2,3)x2", "(1)x3+(2,3,3)x2", "(1)x3+(2,3)+(2,3,3)", "(1)x2+(2,3)x3",
          "(1)x2+(2,2,3)x3", "(1)x2+(2,3,3)x3", "(1)x2+(2,3)+(2,2,3)+(2,3,3)"})
      rows.push_back(row(table, std::string("MDFD-CRNN ") + spec, dynamic(spec, {1, 8}), -1.0));
  } else if (table == "IV") {
    rows.push_back(row(table, "FDY-CRNN 8/8 (1)", dynamic("(1)", {1, 1}), 11.061));
    rows.push_back(row(table, "DFD-CRNN 8/8 (2,3)", dynamic("(2,3)", {1, 1}), 11.061));
    rows.push_back(row(table, "PFD-CRNN 8/8 (1)", dynamic("(1)", {1, 8}), 5.401));
    rows.push_back(row(table, "MFD-CRNN 8/8 (1)x5", dynamic("(1)x5", {1, 8}), 9.296));
    rows.push_back(row(table, "MDFD-CRNN 8/8 (1)x2+(2,3)+(2,2,3)+(2,3,3)", dynamic("(1)x2+(2,3)+(2,2,3)+(2,3,3)", {1, 8}), 9.296));
    rows.push_back(row(table, "FDY-CRNN 11/8 (1)", widened({11, 8}, "(1)", {1, 1}), 19.317));
    rows.push_back(row(table, "MDFD-CRNN 11/8 (1)x8", widened({11, 8}, "(1)x8", {1, 11}), 18.157));
    rows.push_back(row(table, "MDFD-CRNN 11/8 (1)x3+(2)+(3)+(2,3)+(2,2,3)+(2,3,3)",
                       widened({11, 8}, "(1)x3+(2)+(3)+(2,3)+(2,2,3)+(2,3,3)", {1, 11}), 18.157));
    rows.push_back(row(table, "MDFD-CRNN 11/8 (1)x5+(2,3)+(2,2,3)+(2,3,3)",
                       widened({11, 8}, "(1)x5+(2,3)+(2,2,3)+(2,3,3)", {1, 11}), 18.157));
    rows.push_back(row(table, "MDFD-CRNN 11/8 (1)x6+(2,3)+(2,2,3)+(2,3,3)",
                       widened({11, 8}, "(1)x6+(2,3)+(2,2,3)+(2,3,3)", {1, 11}), 19.582));
    rows.push_back(row(table, "MDFD-CRNN 13/8 (1)x5+(2,2)+(3,3)+(2,3)+(2,2,3)+(2,3,3)",
                       widened({13, 8}, "(1)x5+(2,2)+(3,3)+(2,3)+(2,2,3)+(2,3,3)", {1, 13}), 26.191));
    rows.push_back(row(table, "MDFD-CRNN 14/8 (1)x5+(2,2)+(3,3)+(2,2,3,3)+(2,3)+(2,2,3)+(2,3,3)",
                       widened({14, 8}, "(1)x5+(2,2)+(3,3)+(2,2,3,3)+(2,3)+(2,2,3)+(2,3,3)", {1, 14}), 30.894));
  } else {
    throw ConfigError("unknown table preset '" + table + "'; valid presets: I, II, III, IV");
  }
  return rows;
}

std::vector<std::string> named_presets() {
  return {"crnn", "fdy", "dfd", "pfd-1/8", "mfd-1/8x5", "mdfd-1/8", "desk-crnn", "desk-mdfd"};
}

ModelConfig named_preset(const std::string& name) {
  if (name == "crnn") return base();
  if (name == "fdy") return dynamic("(1)", {1, 1});
  if (name == "dfd") return dynamic("(2,3)", {1, 1});
  if (name == "pfd-1/8") return dynamic("(1)", {1, 8});
  if (name == "mfd-1/8x5") return dynamic("(1)x5", {1, 8});
  if (name == "mdfd-1/8") return dynamic("(1)x2+(2,3)+(2,2,3)+(2,3,3)", {1, 8});
  if (name == "desk-crnn" || name == "desk-mdfd") {
    ModelConfig m = name == "desk-crnn" ? base() : dynamic("(1)x2+(2,3)", {1, 8});
    m.width = {1, 4};
    m.n_classes = 4;
    m.rnn_hidden = 64;
    m.cnn_dropout = 0.2;
    m.rnn_dropout = 0.2;
    return m;
  }
  std::string valid;
  for (const auto& n : named_presets()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown model preset '" + name + "'; valid presets: " + valid);
}

std::vector<PresetCount> count_table(const std::string& table) {
  std::vector<PresetCount> out;
  for (auto& p : table_presets(table)) {
    const SEDModel<float> model(p.model, 0);
    out.push_back(PresetCount{p, count_parameters(model).total});
  }
  return out;
}

std::string format_table(const std::string& table, const std::vector<PresetCount>& rows) {
  std::ostringstream os;
  os << "# parameter table " << table << "\n";
  os << "model\tcomputed_params\tcomputed_M\tpublished_M\trel_diff\n";
  char buf[64];
  for (const auto& r : rows) {
    const double m = static_cast<double>(r.computed) / 1e6;
    os << r.preset.label << '\t' << r.computed << '\t';
    std::snprintf(buf, sizeof buf, "%.3f", m);
    os << buf << '\t';
    if (r.preset.published_params_m > 0) {
      std::snprintf(buf, sizeof buf, "%.3f (published)\t%+.4f%%", r.preset.published_params_m,
                    100.0 * (m - r.preset.published_params_m) / r.preset.published_params_m);
      os << buf << '\n';
    } else {
      os << "-\t-\n";
    }
  }
  return os.str();
}

}  // namespace fdy
