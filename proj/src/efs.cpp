#include "resmo/efs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "resmo/errors.hpp"

namespace resmo {

namespace {

template <typename T>
Percentages quantize(std::span<const T, kEmotionCount> p)
{
    double sum = 0.0;
    for (const T v : p) {
        if (!std::isfinite(static_cast<double>(v)) || v < 0)
            throw ArgumentError("quantize_probs: probabilities must be finite and non-negative");
        sum += static_cast<double>(v);
    }
    if (std::abs(sum - 1.0) > 1e-3)
        throw ArgumentError("quantize_probs: probabilities sum to " + std::to_string(sum));
    Percentages out{};
    std::array<double, kEmotionCount> rem{};
    int assigned = 0;
    for (std::size_t i = 0; i < kEmotionCount; ++i) {
        const double scaled = 100.0 * static_cast<double>(p[i]) / sum;
        out[i] = static_cast<int>(std::floor(scaled));
        rem[i] = scaled - out[i];
        assigned += out[i];
    }
    std::array<std::size_t, kEmotionCount> order;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (int k = 0; k < 100 - assigned; ++k)
        ++out[order[static_cast<std::size_t>(k) % kEmotionCount]];
    return out;
}

bool parse_int(std::string_view s, std::int64_t& out)
{
    if (s.empty() || s[0] == '+' || (s.size() > 1 && s[0] == '0'))
        return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::int64_t parse_ms(std::string_view s, std::size_t line, const char* what)
{
    std::int64_t v = 0;
    if (!parse_int(s, v) || v < 0)
        throw DecodeError(line, std::string("bad ") + what + " '" + std::string(s) + "'");
    return v;
}

// splits on '|' not preceded by an escaping backslash
std::vector<std::string_view> split_fields(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\') {
            ++i;
        } else if (s[i] == '|') {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    out.push_back(s.substr(start));
    return out;
}

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

} // namespace

Percentages quantize_probs(std::span<const double, kEmotionCount> p) { return quantize(p); }
Percentages quantize_probs(std::span<const float, kEmotionCount> p) { return quantize(p); }

std::string efs_escape(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '|': out += "\\|"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out += c;
        }
    }
    return out;
}

std::string efs_unescape(std::string_view s, std::size_t line)
{
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '|' || c == '\r')
            throw DecodeError(line, "unescaped control character in text");
        if (c != '\\') {
            out += c;
            continue;
        }
        if (++i == s.size())
            throw DecodeError(line, "dangling escape");
        switch (s[i]) {
        case '\\': out += '\\'; break;
        case '|': out += '|'; break;
        case 'n': out += '\n'; break;
        case 'r': out += '\r'; break;
        default: throw DecodeError(line, std::string("unknown escape \\") + s[i]);
        }
    }
    return out;
}

bool valid_identifier(std::string_view id)
{
    if (id.empty() || id.size() > 64)
        return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
               c == '.';
    });
}

void validate_card(const PatientCard& c)
{
    if (!valid_identifier(c.patient_id))
        throw ValidationError("patient id '" + c.patient_id + "' must be 1-64 chars of [A-Za-z0-9_.-]");
    if (c.display_name.empty())
        throw ValidationError("patient " + c.patient_id + " has an empty display name");
    if (c.age < 0 || c.age > 150)
        throw ValidationError("patient " + c.patient_id + " age " + std::to_string(c.age) + " is out of range");
}

void validate_frame(const EmotionFrame& f)
{
    if (f.dt_ms < 0)
        throw ValidationError("frame dt " + std::to_string(f.dt_ms) + " is negative");
    int sum = 0;
    for (const int v : f.probs) {
        if (v < 0 || v > 100)
            throw ValidationError("frame percentage " + std::to_string(v) + " is outside 0..100");
        sum += v;
    }
    if (sum != 100)
        throw ValidationError("frame percentages sum to " + std::to_string(sum) + ", expected 100");
}

std::string encode_header(const std::string& session_id, std::int64_t t0_ms, const std::optional<TimeRange>& range)
{
    std::string s = "EFS1 " + session_id + ' ' + std::to_string(t0_ms);
    if (range)
        s += ' ' + std::to_string(range->from_ms) + ' ' + std::to_string(range->to_ms);
    return s + '\n';
}

std::string encode_card(const PatientCard& c)
{
    return "P|" + efs_escape(c.patient_id) + '|' + efs_escape(c.display_name) + '|' + std::to_string(c.age) + '|' +
           efs_escape(c.notes) + '\n';
}

std::string encode_frame(const EmotionFrame& f)
{
    std::string s = "F|" + std::to_string(f.dt_ms) + '|';
    for (std::size_t i = 0; i < kEmotionCount; ++i) {
        if (i)
            s += ',';
        s += std::to_string(f.probs[i]);
    }
    return s + '\n';
}

std::string encode_activity(const ActivityNote& a)
{
    return "A|" + std::to_string(a.dt_ms) + '|' + efs_escape(a.text) + '\n';
}

std::string encode_session(const EfsDocument& doc)
{
    std::string out = encode_header(doc.session_id, doc.t0_ms, doc.range) + encode_card(doc.card);
    std::size_t f = 0, a = 0;
    while (f < doc.frames.size() || a < doc.activities.size()) {
        if (a == doc.activities.size() ||
            (f < doc.frames.size() && doc.frames[f].dt_ms <= doc.activities[a].dt_ms))
            out += encode_frame(doc.frames[f++]);
        else
            out += encode_activity(doc.activities[a++]);
    }
    return out;
}

PatientCard decode_card(std::string_view text, std::size_t line)
{
    const auto f = split_fields(text);
    if (f.size() != 5 || f[0] != "P")
        throw DecodeError(line, "patient line needs 5 fields P|id|name|age|notes");
    PatientCard c;
    c.patient_id = efs_unescape(f[1], line);
    c.display_name = efs_unescape(f[2], line);
    std::int64_t age = 0;
    if (!parse_int(f[3], age) || age < 0 || age > 150)
        throw DecodeError(line, "bad age '" + std::string(f[3]) + "'");
    c.age = static_cast<int>(age);
    c.notes = efs_unescape(f[4], line);
    try {
        validate_card(c);
    } catch (const ValidationError& e) {
        throw DecodeError(line, e.what());
    }
    return c;
}

EmotionFrame decode_frame(std::string_view text, std::size_t line)
{
    const auto f = split_fields(text);
    if (f.size() != 3 || f[0] != "F")
        throw DecodeError(line, "frame line needs 3 fields F|dt|p0,...,p6");
    EmotionFrame fr;
    fr.dt_ms = parse_ms(f[1], line, "frame dt");
    std::string_view rest = f[2];
    for (std::size_t i = 0; i < kEmotionCount; ++i) {
        const auto comma = rest.find(',');
        const bool last = i + 1 == kEmotionCount;
        if (last != (comma == std::string_view::npos))
            throw DecodeError(line, "frame needs exactly 7 comma-separated percentages");
        const auto tok = rest.substr(0, comma);
        std::int64_t v = 0;
        if (!parse_int(tok, v) || v < 0 || v > 100)
            throw DecodeError(line, "bad percentage '" + std::string(tok) + "'");
        fr.probs[i] = static_cast<int>(v);
        if (!last)
            rest.remove_prefix(comma + 1);
    }
    const int sum = std::accumulate(fr.probs.begin(), fr.probs.end(), 0);
    if (sum != 100)
        throw DecodeError(line, "percentages sum to " + std::to_string(sum) + ", expected 100");
    return fr;
}

ActivityNote decode_activity(std::string_view text, std::size_t line)
{
    const auto f = split_fields(text);
    if (f.size() != 3 || f[0] != "A")
        throw DecodeError(line, "activity line needs 3 fields A|dt|text");
    ActivityNote a;
    a.dt_ms = parse_ms(f[1], line, "activity dt");
    a.text = efs_unescape(f[2], line);
    if (a.text.empty())
        throw DecodeError(line, "empty activity text");
    return a;
}

EfsDocument decode_session(std::string_view text)
{
    if (text.empty())
        throw DecodeError(1, "empty document");
    if (text.back() != '\n')
        throw DecodeError(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) + 1,
                          "missing final line feed");
    const auto lines = split_lines(text);

    EfsDocument doc;
    {
        const std::string_view h = lines[0];
        std::vector<std::string_view> tok;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= h.size(); ++i)
            if (i == h.size() || h[i] == ' ') {
                tok.push_back(h.substr(start, i - start));
                start = i + 1;
            }
        if (tok.empty() || tok[0] != "EFS1")
            throw DecodeError(1, "header must start with EFS1");
        if (tok.size() != 3 && tok.size() != 5)
            throw DecodeError(1, "header needs session id, t0 and an optional from/to pair");
        if (!valid_identifier(tok[1]))
            throw DecodeError(1, "bad session id '" + std::string(tok[1]) + "'");
        doc.session_id = std::string(tok[1]);
        doc.t0_ms = parse_ms(tok[2], 1, "t0");
        if (tok.size() == 5) {
            TimeRange r{parse_ms(tok[3], 1, "from"), parse_ms(tok[4], 1, "to")};
            if (r.from_ms > r.to_ms)
                throw DecodeError(1, "range start after range end");
            doc.range = r;
        }
    }
    if (lines.size() < 2)
        throw DecodeError(2, "missing patient line");
    doc.card = decode_card(lines[1], 2);

    for (std::size_t i = 2; i < lines.size(); ++i) {
        const std::size_t ln = i + 1;
        const std::string_view l = lines[i];
        if (l.rfind("F|", 0) == 0) {
            auto f = decode_frame(l, ln);
            if (!doc.frames.empty() && f.dt_ms < doc.frames.back().dt_ms)
                throw DecodeError(ln, "frame dt goes backwards");
            if (doc.range && !doc.range->contains(f.dt_ms))
                throw DecodeError(ln, "frame outside the header range");
            doc.frames.push_back(f);
        } else if (l.rfind("A|", 0) == 0) {
            auto a = decode_activity(l, ln);
            if (!doc.activities.empty() && a.dt_ms < doc.activities.back().dt_ms)
                throw DecodeError(ln, "activity dt goes backwards");
            if (doc.range && !doc.range->contains(a.dt_ms))
                throw DecodeError(ln, "activity outside the header range");
            doc.activities.push_back(std::move(a));
        } else if (l.rfind("P|", 0) == 0) {
            throw DecodeError(ln, "second patient line");
        } else {
            throw DecodeError(ln, "unknown line type");
        }
    }
    return doc;
}

std::vector<EmotionFrame> decode_frame_lines(std::string_view body)
{
    std::vector<EmotionFrame> out;
    const auto lines = split_lines(body);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view l = lines[i];
        if (!l.empty() && l.back() == '\r')
            l.remove_suffix(1);
        if (l.empty())
            continue;
        auto f = decode_frame(l, i + 1);
        if (!out.empty() && f.dt_ms < out.back().dt_ms)
            throw DecodeError(i + 1, "frame " + std::to_string(out.size()) + " is out of order");
        out.push_back(f);
    }
    return out;
}

std::vector<ActivityNote> decode_activity_lines(std::string_view body)
{
    std::vector<ActivityNote> out;
    const auto lines = split_lines(body);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string_view l = lines[i];
        if (!l.empty() && l.back() == '\r')
            l.remove_suffix(1);
        if (l.empty())
            continue;
        auto a = decode_activity(l, i + 1);
        if (!out.empty() && a.dt_ms < out.back().dt_ms)
            throw DecodeError(i + 1, "activity " + std::to_string(out.size()) + " is out of order");
        out.push_back(std::move(a));
    }
    return out;
}

EfsDocument filter_range(const EfsDocument& doc, TimeRange range)
{
    if (range.from_ms > range.to_ms)
        throw ArgumentError("range start " + std::to_string(range.from_ms) + " is after its end " +
                            std::to_string(range.to_ms));
    EfsDocument out;
    out.session_id = doc.session_id;
    out.t0_ms = doc.t0_ms;
    out.range = range;
    out.card = doc.card;
    for (const auto& f : doc.frames)
        if (range.contains(f.dt_ms))
            out.frames.push_back(f);
    for (const auto& a : doc.activities)
        if (range.contains(a.dt_ms))
            out.activities.push_back(a);
    return out;
}

} // namespace resmo
