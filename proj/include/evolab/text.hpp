#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evolab::text {

std::string trim(std::string_view s);

/// Lowercase, collapse runs of whitespace to one space, trim.
std::string normalize(std::string_view s);

/// Stable 64-bit FNV-1a; unlike std::hash it is identical across platforms and runs.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// First `hex_chars` hex digits of fnv1a64(s).
std::string short_hash(std::string_view s, int hex_chars = 12);

std::string first_words(std::string_view s, std::size_t n);
std::string last_lines(std::string_view s, std::size_t n);
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> word_tokens(std::string_view s);

/// UTC ISO-8601 with microseconds, e.g. 2026-10-17T09:30:00.123456Z.
std::string utc_timestamp();

/// One `MARKER: body` section. The body runs until the next recognised marker line.
struct Section {
    std::string marker;
    std::string body;
};

/// Splits model output into marked sections, in order of appearance. Marker lines may carry
/// markdown decoration (`**METHOD:**`, `## METHOD:`, `- METHOD:`); matching is case-insensitive.
/// Text before the first marker is dropped.
std::vector<Section> parse_sections(std::string_view text, std::span<const std::string_view> markers);

/// Body of the first section with this marker, or empty.
std::string first_section(const std::vector<Section>& sections, std::string_view marker);

}  // namespace evolab::text
