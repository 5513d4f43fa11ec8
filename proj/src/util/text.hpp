#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace dk::util {

// Fixed-precision float formatting via snprintf. iostreams formatting depends
// on locale and stream state; CSV and table output must be byte-stable.
inline std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string fmt_sig(double v, int sig) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", sig, v);
    return buf;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
    return s.substr(b, e - b);
}

// Renders an aligned text table: first row is the header.
inline std::string render_table(const std::vector<std::vector<std::string>>& rows) {
    if (rows.empty()) return "";
    std::vector<std::size_t> widths;
    for (const auto& row : rows) {
        if (widths.size() < row.size()) widths.resize(row.size(), 0);
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    std::string out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            out += pad_right(rows[r][c], widths[c]);
            if (c + 1 < rows[r].size()) out += "  ";
        }
        out += '\n';
        if (r == 0) {
            for (std::size_t c = 0; c < widths.size(); ++c) {
                out += std::string(widths[c], '-');
                if (c + 1 < widths.size()) out += "  ";
            }
            out += '\n';
        }
    }
    return out;
}

}  // namespace dk::util
