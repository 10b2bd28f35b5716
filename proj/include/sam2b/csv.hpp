#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "sam2b/core.hpp"

namespace sam2b::csv {

/// Shortest round-trip decimal representation ('.' decimal point, RFC-4180
/// friendly, deterministic).
inline std::string num(double x) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string num(std::uint64_t x) { return std::to_string(x); }

inline std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

class Writer {
public:
    void row(const std::vector<std::string>& fields) {
        std::string line;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) line += ',';
            line += escape(fields[i]);
        }
        line += '\n';
        text_ += line;
    }

    const std::string& text() const { return text_; }

    void write(const std::filesystem::path& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write '" + path.string() + "'");
        f << text_;
        if (!f) throw IoError("short write to '" + path.string() + "'");
    }

private:
    std::string text_;
};

}  // namespace sam2b::csv
