#include "fdy/model.hpp"

#include <iomanip>
#include <sstream>

namespace fdy {

Index ParamTable::layer_total(const std::string& layer) const {
  Index n = 0;
  auto it = by.find(layer);
  if (it != by.end())
    for (const auto& [role, c] : it->second) n += c;
  return n;
}

Index ParamTable::role_total(const std::string& role) const {
  Index n = 0;
  for (const auto& [layer, roles] : by) {
    auto it = roles.find(role);
    if (it != roles.end()) n += it->second;
  }
  return n;
}

std::string ParamTable::format() const {
  static const char* roles[] = {"static", "dynamic", "attention", "bias", "norm", "gate", "rnn", "head"};
  std::ostringstream os;
  os << std::left << std::setw(8) << "layer";
  for (const char* r : roles) os << std::right << std::setw(11) << r;
  os << std::setw(12) << "total" << '\n';
  for (const auto& layer : layers) {
    os << std::left << std::setw(8) << layer;
    const auto& m = by.at(layer);
    for (const char* r : roles) {
      auto it = m.find(r);
      os << std::right << std::setw(11) << (it == m.end() ? 0 : it->second);
    }
    os << std::setw(12) << layer_total(layer) << '\n';
  }
  os << std::left << std::setw(8) << "all";
  for (const char* r : roles) os << std::right << std::setw(11) << role_total(r);
  os << std::setw(12) << total << '\n';
  return os.str();
}

}  // namespace fdy
