#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsp/errors.hpp"

namespace fsp {

// Plain-text key=value configuration with [section] headers. A key inside
// [rig] is addressed as "rig.key". '#' starts a comment, whitespace around
// keys and values is trimmed, duplicate keys and malformed lines are errors.
//
// Readers mark every key they consume; call require_all_consumed() after all
// readers ran so that a misspelled or unsupported key is a hard error rather
// than a silently ignored setting.
class Config {
public:
    Config() = default;

    static Config parse_string(const std::string& text);
    static Config parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const;

    // Typed getters; the required forms throw ConfigError when the key is
    // missing, the defaulted forms fall back. Bad syntax for the requested
    // type is always an error.
    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    int get_int(const std::string& key);
    int get_int(const std::string& key, int fallback);
    long long get_i64(const std::string& key);
    long long get_i64(const std::string& key, long long fallback);
    bool get_bool(const std::string& key);
    bool get_bool(const std::string& key, bool fallback);
    // Comma-separated list of reals ("0.1, 2, -3e-2").
    std::vector<double> get_doubles(const std::string& key);
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);

    // Keys matching "prefix." — used to enumerate indexed sections. Does not
    // mark anything consumed.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    std::vector<std::string> unconsumed() const;
    void require_all_consumed() const;  // ConfigError naming the unknown keys

    // Programmatic construction / canonical serialization (sorted by key,
    // sections grouped) for config echoes.
    void set(const std::string& key, const std::string& value);
    std::string to_text() const;

private:
    std::string raw(const std::string& key);

    std::map<std::string, std::string> values_;
    std::map<std::string, bool> consumed_;
};

}  // namespace fsp
