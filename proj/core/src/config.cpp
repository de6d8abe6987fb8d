#include "fsp/config.hpp"

#include <algorithm>
#include <charconv>
#include <climits>
#include <sstream>

#include "fsp/fsio.hpp"

namespace fsp {
namespace {

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& text) {
    const char* first = text.data();
    const char* last = first + text.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw ConfigError("config: key '" + key + "' is not a real number: '" + text + "'");
    return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
    const char* first = text.data();
    const char* last = first + text.size();
    long long v = 0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw ConfigError("config: key '" + key + "' is not an integer: '" + text + "'");
    return v;
}

}  // namespace

Config Config::parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(line_no));
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError("config: empty section name at line " + std::to_string(line_no));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value at line " + std::to_string(line_no) +
                              ": '" + t + "'");
        std::string key = trim(std::string_view(t).substr(0, eq));
        std::string value = trim(std::string_view(t).substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: empty key at line " + std::to_string(line_no));
        if (!section.empty()) key = section + "." + key;
        if (!cfg.values_.emplace(key, value).second)
            throw ConfigError("config: duplicate key '" + key + "' at line " +
                              std::to_string(line_no));
    }
    return cfg;
}

Config Config::parse_file(const std::filesystem::path& path) {
    try {
        return parse_string(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::raw(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    consumed_[key] = true;
    return it->second;
}

std::string Config::get_string(const std::string& key) { return raw(key); }
std::string Config::get_string(const std::string& key, const std::string& fallback) {
    return has(key) ? raw(key) : fallback;
}

double Config::get_double(const std::string& key) { return parse_double(key, raw(key)); }
double Config::get_double(const std::string& key, double fallback) {
    return has(key) ? get_double(key) : fallback;
}

int Config::get_int(const std::string& key) {
    long long v = parse_integer(key, raw(key));
    if (v < INT_MIN || v > INT_MAX) throw ConfigError("config: key '" + key + "' out of int range");
    return int(v);
}
int Config::get_int(const std::string& key, int fallback) {
    return has(key) ? get_int(key) : fallback;
}

long long Config::get_i64(const std::string& key) { return parse_integer(key, raw(key)); }
long long Config::get_i64(const std::string& key, long long fallback) {
    return has(key) ? get_i64(key) : fallback;
}

bool Config::get_bool(const std::string& key) {
    std::string v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: '" + v + "'");
}
bool Config::get_bool(const std::string& key, bool fallback) {
    return has(key) ? get_bool(key) : fallback;
}

std::vector<double> Config::get_doubles(const std::string& key) {
    std::string text = raw(key);
    std::vector<double> out;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        std::string item = trim(std::string_view(text).substr(
            pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (item.empty())
            throw ConfigError("config: key '" + key + "' has an empty list element");
        out.push_back(parse_double(key, item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}
std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) {
    return has(key) ? get_doubles(key) : fallback;
}

std::vector<std::string> Config::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
        if (key.rfind(prefix, 0) == 0) out.push_back(key);
    return out;
}

std::vector<std::string> Config::unconsumed() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
        if (!consumed_.count(key)) out.push_back(key);
    return out;
}

void Config::require_all_consumed() const {
    std::vector<std::string> extra = unconsumed();
    if (extra.empty()) return;
    std::string msg = "config: unknown key(s):";
    for (const std::string& k : extra) msg += " '" + k + "'";
    throw ConfigError(msg);
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::string Config::to_text() const {
    // std::map keeps keys sorted; emit bare keys first, then one header per
    // section in order.
    std::ostringstream out;
    std::string section;
    for (const auto& [key, value] : values_) {
        size_t dot = key.find('.');
        if (dot == std::string::npos) {
            out << key << " = " << value << '\n';
        }
    }
    for (const auto& [key, value] : values_) {
        size_t dot = key.find('.');
        if (dot == std::string::npos) continue;
        std::string sec = key.substr(0, dot);
        if (sec != section) {
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
    return out.str();
}

}  // namespace fsp
