#include "evolab/text.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>

#include <fmt/format.h>

namespace evolab::text {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals_prefix(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) {
        return false;
    }
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (lower(s[i]) != lower(prefix[i])) {
            return false;
        }
    }
    return true;
}

// Returns the marker matched on this line and the remainder after "MARKER:".
bool match_marker(std::string_view line, std::span<const std::string_view> markers, std::string& marker,
                  std::string& rest) {
    std::size_t pos = 0;
    while (pos < line.size() && (is_space(line[pos]) || line[pos] == '#' || line[pos] == '*' || line[pos] == '-' ||
                                 line[pos] == '>')) {
        ++pos;
    }
    const std::string_view tail = line.substr(pos);
    for (const auto m : markers) {
        if (!iequals_prefix(tail, m)) {
            continue;
        }
        std::size_t after = m.size();
        while (after < tail.size() && tail[after] == '*') {
            ++after;
        }
        if (after >= tail.size() || tail[after] != ':') {
            continue;
        }
        ++after;
        while (after < tail.size() && tail[after] == '*') {
            ++after;
        }
        marker = std::string(m);
        rest = trim(tail.substr(after));
        return true;
    }
    return false;
}

}  // namespace

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) {
        ++b;
    }
    while (e > b && is_space(s[e - 1])) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

std::string normalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(lower(c));
    }
    return out;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string short_hash(std::string_view s, int hex_chars) {
    auto full = fmt::format("{:016x}", fnv1a64(s));
    return full.substr(0, static_cast<std::size_t>(std::clamp(hex_chars, 1, 16)));
}

std::string first_words(std::string_view s, std::size_t n) {
    std::string out;
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < s.size() && count < n) {
        while (i < s.size() && is_space(s[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < s.size() && !is_space(s[i])) {
            ++i;
        }
        if (i > start) {
            if (!out.empty()) {
                out.push_back(' ');
            }
            out.append(s.substr(start, i - start));
            ++count;
        }
    }
    return out;
}

std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < s.size()) {
                lines.emplace_back(s.substr(start));
            }
            break;
        }
        std::string_view line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.emplace_back(line);
        start = nl + 1;
    }
    return lines;
}

std::string last_lines(std::string_view s, std::size_t n) {
    auto lines = split_lines(s);
    const std::size_t from = lines.size() > n ? lines.size() - n : 0;
    std::string out;
    for (std::size_t i = from; i < lines.size(); ++i) {
        out += lines[i];
        if (i + 1 < lines.size()) {
            out.push_back('\n');
        }
    }
    return out;
}

std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
            current.push_back(lower(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

std::string utc_timestamp() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto secs = time_point_cast<seconds>(now);
    const auto micros = duration_cast<microseconds>(now - secs).count();
    const std::time_t t = system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                       tm.tm_hour, tm.tm_min, tm.tm_sec, micros);
}

std::vector<Section> parse_sections(std::string_view text, std::span<const std::string_view> markers) {
    std::vector<Section> sections;
    std::string body;
    bool open = false;
    auto close = [&] {
        if (open) {
            sections.back().body = trim(body);
        }
        body.clear();
    };
    for (const auto& line : split_lines(text)) {
        std::string marker;
        std::string rest;
        if (match_marker(line, markers, marker, rest)) {
            close();
            sections.push_back(Section{marker, {}});
            open = true;
            body = rest;
            continue;
        }
        if (open) {
            if (!body.empty()) {
                body.push_back('\n');
            }
            body += line;
        }
    }
    close();
    return sections;
}

std::string first_section(const std::vector<Section>& sections, std::string_view marker) {
    for (const auto& s : sections) {
        if (s.marker == marker) {
            return s.body;
        }
    }
    return {};
}

}  // namespace evolab::text
