#include "resmo/expert_eval.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "resmo/errors.hpp"

namespace resmo {

namespace {

template <std::size_t N>
void check_answers(const std::array<int, N>& a, const char* what)
{
    for (std::size_t i = 0; i < N; ++i)
        if (a[i] < 1 || a[i] > 5)
            throw ValidationError(std::string(what) + " answer " + std::to_string(i + 1) + " is " +
                                  std::to_string(a[i]) + ", expected 1..5");
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(const std::string& s, T& out)
{
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::string fmt(const char* f, double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace

int sus_odd_points(const SusResponse& r)
{
    check_answers(r, "usability");
    return r[0] + r[2] + r[4] + r[6] + r[8] - 5;
}

int sus_even_points(const SusResponse& r)
{
    check_answers(r, "usability");
    return 25 - (r[1] + r[3] + r[5] + r[7] + r[9]);
}

double sus_score(const SusResponse& r) { return (sus_odd_points(r) + sus_even_points(r)) * 2.5; }

double avg_utility(const UtilityResponse& r)
{
    check_answers(r, "utility");
    return std::accumulate(r.begin(), r.end(), 0.0) / 4.0;
}

std::vector<double> expert_weights(const std::vector<ExpertProfile>& profiles)
{
    if (profiles.empty())
        throw ArgumentError("expert_weights: no experts");
    double ye = 0.0, pt = 0.0;
    for (const auto& p : profiles) {
        if (p.years_experience < 0 || p.patients_treated < 0)
            throw ArgumentError("expert_weights: negative experience for " + p.id);
        ye += p.years_experience;
        pt += static_cast<double>(p.patients_treated);
    }
    if (ye <= 0 || pt <= 0)
        throw ArgumentError("expert_weights: total years and total patients must be positive");
    std::vector<double> w;
    for (const auto& p : profiles)
        w.push_back((p.years_experience / ye + static_cast<double>(p.patients_treated) / pt) / 2.0);
    return w;
}

UsabilityBand usability_band(double score)
{
    if (score >= 80.3)
        return UsabilityBand::Excellent;
    if (score > 68.0)
        return UsabilityBand::Good;
    if (score == 68.0)
        return UsabilityBand::Okay;
    if (score > 51.0)
        return UsabilityBand::Poor;
    return UsabilityBand::Awful;
}

const char* band_name(UsabilityBand b)
{
    switch (b) {
    case UsabilityBand::Excellent: return "Excellent";
    case UsabilityBand::Good: return "Good";
    case UsabilityBand::Okay: return "Okay";
    case UsabilityBand::Poor: return "Poor";
    case UsabilityBand::Awful: return "Awful";
    }
    return "?";
}

EvalReport weighted_totals(const std::vector<double>& sus_scores, const std::vector<double>& utility_avgs,
                           const std::vector<double>& weights)
{
    if (sus_scores.empty())
        throw ArgumentError("weighted_totals: no experts");
    if (sus_scores.size() != weights.size() || utility_avgs.size() != weights.size())
        throw ArgumentError("weighted_totals: " + std::to_string(sus_scores.size()) + " usability scores, " +
                            std::to_string(utility_avgs.size()) + " utility scores, " +
                            std::to_string(weights.size()) + " weights");
    EvalReport rep;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        ExpertResult e;
        e.id = "E" + std::to_string(i + 1);
        e.sus = sus_scores[i];
        e.avg_utility = utility_avgs[i];
        e.weight = weights[i];
        e.weighted_sus = weights[i] * sus_scores[i];
        e.weighted_utility = weights[i] * utility_avgs[i];
        rep.weighted_usability += e.weighted_sus;
        rep.weighted_utility += e.weighted_utility;
        rep.experts.push_back(e);
    }
    rep.band = usability_band(rep.weighted_usability);
    return rep;
}

EvalReport evaluate_experts(const std::vector<ExpertResponse>& responses)
{
    std::vector<ExpertProfile> profiles;
    std::vector<double> sus, util;
    for (const auto& r : responses) {
        profiles.push_back(r.profile);
        sus.push_back(sus_score(r.sus));
        util.push_back(avg_utility(r.utility));
    }
    auto rep = weighted_totals(sus, util, expert_weights(profiles));
    for (std::size_t i = 0; i < responses.size(); ++i) {
        rep.experts[i].id = responses[i].profile.id;
        rep.experts[i].odd_points = sus_odd_points(responses[i].sus);
        rep.experts[i].even_points = sus_even_points(responses[i].sus);
    }
    rep.responses = responses;
    return rep;
}

std::string EvalReport::format_table() const
{
    std::ostringstream os;
    char buf[64];
    const auto row = [&](const std::string& label, const auto& cell) {
        std::snprintf(buf, sizeof buf, "%-20s", label.c_str());
        os << buf;
        for (std::size_t i = 0; i < experts.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%8s", cell(i).c_str());
            os << buf;
        }
        os << '\n';
    };
    row("Question", [&](std::size_t i) { return experts[i].id; });
    if (responses.size() == experts.size()) {
        for (int q = 0; q < 10; ++q)
            row("  usability " + std::to_string(q + 1), [&](std::size_t i) { return std::to_string(responses[i].sus[q]); });
        for (int q = 0; q < 4; ++q)
            row("  utility " + std::to_string(q + 11),
                [&](std::size_t i) { return std::to_string(responses[i].utility[q]); });
        row("Total odd", [&](std::size_t i) { return std::to_string(experts[i].odd_points); });
        row("Total even", [&](std::size_t i) { return std::to_string(experts[i].even_points); });
    }
    row("SUS score", [&](std::size_t i) { return fmt("%g", experts[i].sus); });
    row("Weight", [&](std::size_t i) { return fmt("%.2f", experts[i].weight); });
    row("W usability", [&](std::size_t i) { return fmt("%.2f", experts[i].weighted_sus); });
    row("AVG utility", [&](std::size_t i) { return fmt("%g", experts[i].avg_utility); });
    row("W utility", [&](std::size_t i) { return fmt("%.2f", experts[i].weighted_utility); });
    os << "Total W usability   " << fmt("%.1f", weighted_usability) << " (" << band_name(band) << ")\n";
    os << "Total W utility     " << fmt("%.2f", weighted_utility) << '\n';
    return os.str();
}

std::string EvalReport::format_csv() const
{
    std::ostringstream os;
    os << "expert,ye,pt,weight,sus,w_sus,avg_utility,w_utility\n";
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const auto& e = experts[i];
        std::string ye, pt;
        if (responses.size() == experts.size()) {
            ye = fmt("%g", responses[i].profile.years_experience);
            pt = std::to_string(responses[i].profile.patients_treated);
        }
        os << e.id << ',' << ye << ',' << pt << ',' << fmt("%.6f", e.weight) << ',' << fmt("%g", e.sus) << ','
           << fmt("%.4f", e.weighted_sus) << ',' << fmt("%g", e.avg_utility) << ','
           << fmt("%.4f", e.weighted_utility) << '\n';
    }
    os << "total,,,1," << ',' << fmt("%.4f", weighted_usability) << ",," << fmt("%.4f", weighted_utility) << '\n';
    return os.str();
}

std::vector<ExpertResponse> parse_expert_csv(const std::string& text)
{
    std::vector<ExpertResponse> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool first_row = true;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        std::vector<std::string> f;
        std::stringstream ss(t);
        std::string cell;
        while (std::getline(ss, cell, ','))
            f.push_back(trim(cell));
        if (t.back() == ',')
            f.emplace_back();
        ExpertResponse r;
        const bool numeric = f.size() > 1 && parse_number(f[1], r.profile.years_experience);
        if (first_row && !numeric) {
            first_row = false;
            continue;
        }
        first_row = false;
        if (f.size() != 17)
            throw DecodeError(lineno, "expected 17 fields (id, YE, PT, 14 answers), got " + std::to_string(f.size()));
        if (f[0].empty())
            throw DecodeError(lineno, "empty expert id");
        r.profile.id = f[0];
        if (!numeric)
            throw DecodeError(lineno, "bad years of experience '" + f[1] + "'");
        if (!parse_number(f[2], r.profile.patients_treated))
            throw DecodeError(lineno, "bad patient count '" + f[2] + "'");
        for (std::size_t i = 0; i < 14; ++i) {
            int v = 0;
            if (!parse_number(f[3 + i], v))
                throw DecodeError(lineno, "bad answer '" + f[3 + i] + "' in field " + std::to_string(4 + i));
            (i < 10 ? r.sus[i] : r.utility[i - 10]) = v;
        }
        try {
            check_answers(r.sus, "usability");
            check_answers(r.utility, "utility");
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(r);
    }
    if (out.empty())
        throw ArgumentError("expert table has no rows");
    return out;
}

std::vector<ExpertResponse> load_expert_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_expert_csv(ss.str());
}

} // namespace resmo
