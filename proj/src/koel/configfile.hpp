#pragma once

// Flat key=value configuration files.  Lines starting with '#' (after
// leading whitespace) and blank lines are ignored; values keep internal
// whitespace.  CLI overrides use the same "key=value" syntax.

#include <map>
#include <string>

namespace koel {

class ConfigFile {
  public:
    ConfigFile() = default;
    static ConfigFile load(const std::string& path);
    static ConfigFile from_string(const std::string& text);

    void apply_override(const std::string& keyval);  // "key=value"

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    std::string get_str(const std::string& key, const std::string& defv) const;
    int get_int(const std::string& key, int defv) const;
    double get_double(const std::string& key, double defv) const;
    bool get_bool(const std::string& key, bool defv) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    void parse_line(const std::string& line, const std::string& where, int lineno);
    std::map<std::string, std::string> kv_;
};

}  // namespace koel
