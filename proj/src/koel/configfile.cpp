#include "koel/configfile.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "koel/common.hpp"

namespace koel {

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void ConfigFile::parse_line(const std::string& line, const std::string& where, int lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') return;
    const size_t eq = t.find('=');
    check(eq != std::string::npos, where, ":", lineno, ": expected key=value, got '", t, "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    check(!key.empty(), where, ":", lineno, ": empty key");
    kv_[key] = val;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open config ", path);
    ConfigFile cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) cfg.parse_line(line, path, ++lineno);
    return cfg;
}

ConfigFile ConfigFile::from_string(const std::string& text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) cfg.parse_line(line, "<string>", ++lineno);
    return cfg;
}

void ConfigFile::apply_override(const std::string& keyval) {
    parse_line(keyval, "<override>", 1);
    check(!trim(keyval).empty() && trim(keyval)[0] != '#', "override '", keyval,
          "' parses as a comment");
}

std::string ConfigFile::get_str(const std::string& key, const std::string& defv) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? defv : it->second;
}

int ConfigFile::get_int(const std::string& key, int defv) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return defv;
    char* end = nullptr;
    const long v = std::strtol(it->second.c_str(), &end, 10);
    check(end && *end == '\0' && !it->second.empty(), "config key ", key, ": '", it->second,
          "' is not an integer");
    return static_cast<int>(v);
}

double ConfigFile::get_double(const std::string& key, double defv) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return defv;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    check(end && *end == '\0' && !it->second.empty(), "config key ", key, ": '", it->second,
          "' is not a number");
    return v;
}

bool ConfigFile::get_bool(const std::string& key, bool defv) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return defv;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config key ", key, ": '", v, "' is not a boolean");
}

}  // namespace koel
