#include "leansplat/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace leansplat {

namespace {
std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::load(const std::string& path, const std::vector<std::string>& allowed_keys) {
    std::ifstream f(path);
    LS_CHECK_DATA(f.good(), "cannot open config file '", path, "'");
    std::ostringstream text;
    text << f.rdbuf();
    return parse(text.str(), allowed_keys, path);
}

Config Config::parse(const std::string& text, const std::vector<std::string>& allowed_keys,
                     const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        LS_CHECK_DATA(eq != std::string::npos, origin, ":", lineno, ": expected key=value, got '",
                      line, "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (std::find(allowed_keys.begin(), allowed_keys.end(), key) == allowed_keys.end()) {
            std::string valid;
            for (const auto& k : allowed_keys) valid += (valid.empty() ? "" : ", ") + k;
            throw DataError(detail::format_msg(origin, ":", lineno, ": unknown config key '", key,
                                               "'; valid keys: ", valid));
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t used = 0;
        const double v = std::stod(it->second, &used);
        LS_CHECK_DATA(used == it->second.size(), "config key '", key, "': trailing junk in '",
                      it->second, "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw DataError("config key '" + key + "': '" + it->second + "' is not a number");
    }
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        size_t used = 0;
        const int64_t v = std::stoll(it->second, &used);
        LS_CHECK_DATA(used == it->second.size(), "config key '", key, "': trailing junk in '",
                      it->second, "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw DataError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw DataError("config key '" + key + "': expected true/false, got '" + it->second + "'");
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

}  // namespace leansplat
