#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sam2b/core.hpp"

namespace sam2b {

// Plain-text key-value blocks: one "key = value" per line, '#' comments.
// std::map keeps keys sorted, so dumps are deterministic byte-for-byte.
using KvMap = std::map<std::string, std::string>;

namespace kv {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline KvMap parse(const std::string& text) {
    KvMap out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              t + "'");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

inline std::string dump(const KvMap& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string fmt(std::uint64_t x) { return std::to_string(x); }
inline std::string fmt(bool x) { return x ? "true" : "false"; }

inline double to_double(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + s + "' is not a number");
    }
}

inline std::uint64_t to_u64(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + s + "' is not an unsigned integer");
    }
}

inline bool to_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key '" + key + "': '" + s + "' is not a boolean");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !parts.empty()) parts.push_back(trim(cur));
    return parts;
}

/// Tracks which keys were consumed so callers can reject unknown ones.
class Reader {
public:
    explicit Reader(KvMap m) : map_(std::move(m)) {}

    bool has(const std::string& key) const { return map_.contains(key); }

    std::string get_str(const std::string& key, const std::string& def) {
        mark(key);
        const auto it = map_.find(key);
        return it == map_.end() ? def : it->second;
    }
    double get_double(const std::string& key, double def) {
        mark(key);
        const auto it = map_.find(key);
        return it == map_.end() ? def : to_double(it->second, key);
    }
    std::size_t get_size(const std::string& key, std::size_t def) {
        mark(key);
        const auto it = map_.find(key);
        return it == map_.end() ? def : static_cast<std::size_t>(to_u64(it->second, key));
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
        mark(key);
        const auto it = map_.find(key);
        return it == map_.end() ? def : to_u64(it->second, key);
    }
    bool get_bool(const std::string& key, bool def) {
        mark(key);
        const auto it = map_.find(key);
        return it == map_.end() ? def : to_bool(it->second, key);
    }

    void reject_unknown() const {
        for (const auto& [k, v] : map_)
            if (!consumed_.contains(k)) throw ConfigError("unknown key '" + k + "'");
    }

    const KvMap& map() const { return map_; }

private:
    void mark(const std::string& key) { consumed_[key] = true; }
    KvMap map_;
    std::map<std::string, bool> consumed_;
};

}  // namespace kv
}  // namespace sam2b
