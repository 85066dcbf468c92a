#include "mdeh/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdeh {

namespace {
std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

KvConfig KvConfig::from_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key at line " + std::to_string(lineno));
    cfg.values_[section.empty() ? key : section + "." + key] = val;
  }
  return cfg;
}

void KvConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: override must be key=value: " + assignment);
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvConfig::get_str(const std::string& key, const std::string& def) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

double KvConfig::get_double(const std::string& key, double def) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  size_t pos = 0;
  const double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::invalid_argument("config: key " + key + " is not a number: " + it->second);
  return v;
}

int KvConfig::get_int(const std::string& key, int def) {
  const double v = get_double(key, static_cast<double>(def));
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw std::invalid_argument("config: key " + key + " is not an integer");
  return i;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t def) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  return std::stoull(it->second);
}

bool KvConfig::get_bool(const std::string& key, bool def) {
  consumed_[key] = true;
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key " + key + " is not a boolean: " + v);
}

void KvConfig::check_all_consumed() const {
  std::string bad;
  for (const auto& [k, v] : values_)
    if (!consumed_.count(k)) bad += (bad.empty() ? "" : ", ") + k;
  if (!bad.empty()) throw std::invalid_argument("config: unknown keys: " + bad);
}

std::string KvConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
  return os.str();
}

}  // namespace mdeh
