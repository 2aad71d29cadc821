#pragma once

#include <map>
#include <string>
#include <vector>

#include "leansplat/common.hpp"

namespace leansplat {

// Flat key=value text config. '#' starts a comment; blank lines are skipped.
// Unknown keys fail fast with the list of valid keys.
class Config {
public:
    static Config load(const std::string& path, const std::vector<std::string>& allowed_keys);
    static Config parse(const std::string& text, const std::vector<std::string>& allowed_keys,
                        const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace leansplat
