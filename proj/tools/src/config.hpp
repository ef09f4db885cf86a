// config.hpp: flat key=value run configuration for the command-line tool.
//
// A config file holds one `key = value` pair per line ('#' starts a comment).
// Command-line overrides are layered on top and win. Typed getters record
// every key a command consumes together with its effective value, which gives
// two things: unknown-key rejection (anything present but never consumed is a
// typo) and a full provenance echo for the output files.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace civet::cli {

class Config {
public:
    Config() = default;

    // Parses a config file. Throws usage_error on unparseable lines.
    static Config from_file(const std::string& path);

    // Sets one key, overriding any file value. `spec` is "key=value".
    void set_pair(const std::string& spec);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;

    // Typed getters. Each records the effective value under the key, so the
    // echo shows defaults as well as explicit settings.
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::optional<std::string> maybe_string(const std::string& key) const;
    std::optional<double> maybe_double(const std::string& key) const;
    // Comma-separated list; empty when the key is absent.
    std::vector<std::string> get_list(const std::string& key) const;

    // Throws usage_error naming any key that was set but never consumed.
    void reject_unknown() const;

    // Effective values of every consumed key, for the provenance echo.
    const std::map<std::string, std::string>& resolved() const { return resolved_; }

private:
    std::map<std::string, std::string> kv_;
    mutable std::map<std::string, std::string> resolved_;
};

} // namespace civet::cli
