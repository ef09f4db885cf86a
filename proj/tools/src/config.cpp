#include "config.hpp"

#include <charconv>
#include <fstream>

#include <fmt/format.h>

#include "civet/errors.hpp"

namespace civet::cli {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw usage_error(fmt::format("cannot open config file '{}'", path));
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw usage_error(
                fmt::format("{}:{}: expected 'key = value', got '{}'", path, lineno, body));
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw usage_error(fmt::format("{}:{}: empty key", path, lineno));
        }
        cfg.kv_[key] = value;
    }
    return cfg;
}

void Config::set_pair(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw usage_error(fmt::format("override '{}' is not of the form key=value", spec));
    }
    set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    const std::string value = it == kv_.end() ? fallback : it->second;
    resolved_[key] = value;
    return value;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) {
        resolved_[key] = fmt::format("{}", fallback);
        return fallback;
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing characters");
        resolved_[key] = it->second;
        return v;
    } catch (const std::exception&) {
        throw usage_error(fmt::format("key '{}': '{}' is not a number", key, it->second));
    }
}

long Config::get_long(const std::string& key, long fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) {
        resolved_[key] = fmt::format("{}", fallback);
        return fallback;
    }
    long v = 0;
    const char* begin = it->second.data();
    const char* end = begin + it->second.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{} || res.ptr != end) {
        throw usage_error(fmt::format("key '{}': '{}' is not an integer", key, it->second));
    }
    resolved_[key] = it->second;
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) {
        resolved_[key] = fallback ? "true" : "false";
        return fallback;
    }
    const std::string& v = it->second;
    bool value = false;
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        value = true;
    } else if (v == "false" || v == "0" || v == "no" || v == "off") {
        value = false;
    } else {
        throw usage_error(fmt::format("key '{}': '{}' is not a boolean", key, v));
    }
    resolved_[key] = value ? "true" : "false";
    return value;
}

std::optional<std::string> Config::maybe_string(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    resolved_[key] = it->second;
    return it->second;
}

std::optional<double> Config::maybe_double(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return get_double(key, 0.0);
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return {};
    resolved_[key] = it->second;
    std::vector<std::string> out;
    std::string token;
    for (char c : it->second) {
        if (c == ',') {
            const std::string t = trim(token);
            if (!t.empty()) out.push_back(t);
            token.clear();
        } else {
            token += c;
        }
    }
    const std::string t = trim(token);
    if (!t.empty()) out.push_back(t);
    return out;
}

void Config::reject_unknown() const {
    std::string unknown;
    for (const auto& [key, value] : kv_) {
        (void)value;
        if (resolved_.count(key) == 0) {
            if (!unknown.empty()) unknown += ", ";
            unknown += key;
        }
    }
    if (!unknown.empty()) {
        throw usage_error(fmt::format("unknown configuration keys: {}", unknown));
    }
}

} // namespace civet::cli
