#include "dtfit/config.hpp"

#include <fstream>
#include <sstream>

#include "dtfit/common.hpp"

namespace dtfit {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text,
                                           const std::string& origin) {
  std::vector<ConfigEntry> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    DTFIT_CHECK(eq != std::string::npos, ParamError, origin, ":", lineno,
                ": expected 'key = value', got '", line, "'");
    ConfigEntry e;
    e.key = trim(line.substr(0, eq));
    e.value = trim(line.substr(eq + 1));
    e.line = lineno;
    DTFIT_CHECK(!e.key.empty(), ParamError, origin, ":", lineno,
                ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> load_config(const std::string& path) {
  std::ifstream is(path);
  DTFIT_CHECK(is.good(), IoError, "config: cannot open ", path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

}  // namespace dtfit
