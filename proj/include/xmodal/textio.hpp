#pragma once

// Line-oriented text helpers shared by the dataset, checkpoint and config
// formats. Doubles are written with 17 significant digits, which round-trips
// every finite binary64 value.

#include <charconv>
#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal::textio {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    if (ec != std::errc{}) throw FormatError("cannot format double");
    return {buf, ptr};
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

/// Reads whitespace-tokenized lines and produces FormatErrors that name the
/// source and line number.
class LineReader {
public:
    LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    /// Next non-empty line, tokenized. Throws FormatError at end of input.
    std::vector<std::string_view> next(std::string_view expecting) {
        while (std::getline(in_, line_)) {
            ++line_no_;
            auto toks = split_ws(line_);
            if (!toks.empty()) return toks;
        }
        fail("unexpected end of file, expected " + std::string(expecting));
    }

    bool at_end() {
        while (true) {
            const int c = in_.peek();
            if (c == std::char_traits<char>::eof()) return true;
            if (c == '\n' || c == ' ' || c == '\t' || c == '\r') {
                if (c == '\n') ++line_no_;
                in_.get();
                continue;
            }
            return false;
        }
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(source_ + ":" + std::to_string(line_no_) + ": " + what);
    }

    double to_double(std::string_view tok, std::string_view field) const {
        double v = 0.0;
        if (!parse_double(tok, v)) fail("bad number '" + std::string(tok) + "' for " + std::string(field));
        return v;
    }

    template <class Int = long long>
    Int to_int(std::string_view tok, std::string_view field) const {
        Int v{};
        if (!parse_int(tok, v)) fail("bad integer '" + std::string(tok) + "' for " + std::string(field));
        return v;
    }

    /// Expects a line "<key> <values...>" with exactly `count` values
    /// (count < 0: at least one).
    std::vector<std::string_view> keyed(std::string_view key, int count = 1) {
        auto toks = next(key);
        if (toks[0] != key) fail("expected '" + std::string(key) + "', got '" + std::string(toks[0]) + "'");
        toks.erase(toks.begin());
        if (count >= 0 && static_cast<int>(toks.size()) != count) {
            fail("'" + std::string(key) + "' expects " + std::to_string(count) + " value(s), got " +
                 std::to_string(toks.size()));
        }
        if (count < 0 && toks.empty()) fail("'" + std::string(key) + "' needs values");
        return toks;
    }

    int line_no() const { return line_no_; }

private:
    std::istream& in_;
    std::string source_;
    std::string line_;
    int line_no_ = 0;
};

}  // namespace xmodal::textio
