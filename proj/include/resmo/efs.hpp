#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace resmo {

inline constexpr std::size_t kEmotionCount = 7;

struct PatientCard
{
    std::string patient_id;
    std::string display_name;
    int age = 0;
    std::string notes;

    friend bool operator==(const PatientCard&, const PatientCard&) = default;
};

/// Percent per emotion, anger..neutral; sums to 100.
using Percentages = std::array<int, kEmotionCount>;

struct EmotionFrame
{
    std::int64_t dt_ms = 0;
    Percentages probs{};

    friend bool operator==(const EmotionFrame&, const EmotionFrame&) = default;
};

struct ActivityNote
{
    std::int64_t dt_ms = 0;
    std::string text;

    friend bool operator==(const ActivityNote&, const ActivityNote&) = default;
};

struct TimeRange
{
    std::int64_t from_ms = 0;
    std::int64_t to_ms = 0;

    bool contains(std::int64_t t) const { return from_ms <= t && t <= to_ms; }
    friend bool operator==(const TimeRange&, const TimeRange&) = default;
};

/// A session (or a filtered slice of one) with its patient card.
struct EfsDocument
{
    std::string session_id;
    std::int64_t t0_ms = 0;
    std::optional<TimeRange> range;
    PatientCard card;
    std::vector<EmotionFrame> frames;
    std::vector<ActivityNote> activities;

    friend bool operator==(const EfsDocument&, const EfsDocument&) = default;
};

/// floor(100 p) plus the residue handed out by largest remainder (ties to
/// the lower index). Throws ArgumentError on negative or non-finite input
/// or a sum far from 1.
Percentages quantize_probs(std::span<const double, kEmotionCount> p);
Percentages quantize_probs(std::span<const float, kEmotionCount> p);

/// Escapes `\`, `|`, LF and CR.
std::string efs_escape(std::string_view s);
std::string efs_unescape(std::string_view s, std::size_t line = 0);

/// Session ids and patient ids: 1-64 chars of [A-Za-z0-9_.-].
bool valid_identifier(std::string_view id);

/// Throws ValidationError when a field breaks an invariant.
void validate_card(const PatientCard& c);
void validate_frame(const EmotionFrame& f);

std::string encode_header(const std::string& session_id, std::int64_t t0_ms, const std::optional<TimeRange>& range);
std::string encode_card(const PatientCard& c);
std::string encode_frame(const EmotionFrame& f);
std::string encode_activity(const ActivityNote& a);

/// Header, P-line, then F and A lines merged by dt (frames first on ties).
/// Every line ends with LF.
std::string encode_session(const EfsDocument& doc);

/// Throws DecodeError naming the 1-based line on any malformed input.
EfsDocument decode_session(std::string_view text);

/// Single-line decoders; `line` is used in error messages. The text must
/// not contain the trailing LF.
PatientCard decode_card(std::string_view text, std::size_t line);
EmotionFrame decode_frame(std::string_view text, std::size_t line);
ActivityNote decode_activity(std::string_view text, std::size_t line);

/// Body of F-lines (blank lines allowed). Requires non-decreasing dt.
std::vector<EmotionFrame> decode_frame_lines(std::string_view body);
std::vector<ActivityNote> decode_activity_lines(std::string_view body);

/// Copy of `doc` keeping only entries with dt in `range`, with the range
/// recorded in the header.
EfsDocument filter_range(const EfsDocument& doc, TimeRange range);

} // namespace resmo
