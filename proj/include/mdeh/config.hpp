#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mdeh {

/// Flat key=value configuration with [section] headers; keys are stored as
/// "section.key". CLI --set overrides replace file values. Every key must be
/// consumed by a getter; leftovers are reported by name.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig from_file(const std::string& path);
  static KvConfig from_text(const std::string& text);

  /// "section.key=value" (or "key=value" for the top level).
  void set_override(const std::string& assignment);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& def);
  double get_double(const std::string& key, double def);
  int get_int(const std::string& key, int def);
  std::uint64_t get_u64(const std::string& key, std::uint64_t def);
  bool get_bool(const std::string& key, bool def);

  /// Throws std::invalid_argument naming every key no getter consumed.
  void check_all_consumed() const;

  /// Canonical serialized form (sorted keys) for the immutable run copy.
  std::string resolved_text() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
};

/// Exit codes of the CLI surface.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

}  // namespace mdeh
