#pragma once

// Flat "key = value" run-config files. '#' starts a comment; blank lines are
// skipped. Callers validate keys and value types against their own flag
// tables, reporting the stored line number on rejection.

#include <string>
#include <vector>

namespace dtfit {

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<ConfigEntry> parse_config_text(const std::string& text,
                                           const std::string& origin);
std::vector<ConfigEntry> load_config(const std::string& path);

}  // namespace dtfit
