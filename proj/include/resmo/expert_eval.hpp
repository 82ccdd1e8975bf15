#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace resmo {

/// Likert answers to the ten usability items, in questionnaire order.
using SusResponse = std::array<int, 10>;
/// Likert answers to the four utility items.
using UtilityResponse = std::array<int, 4>;

struct ExpertProfile
{
    std::string id;
    double years_experience = 0.0;
    long patients_treated = 0;
};

struct ExpertResponse
{
    ExpertProfile profile;
    SusResponse sus{};
    UtilityResponse utility{};
};

/// Odd-item points minus 5.
int sus_odd_points(const SusResponse& r);
/// 25 minus the even-item sum.
int sus_even_points(const SusResponse& r);
/// (odd + even) * 2.5. Throws ValidationError for answers outside [1, 5].
double sus_score(const SusResponse& r);
double avg_utility(const UtilityResponse& r);

/// W_i = (YE_i / sum YE + PT_i / sum PT) / 2. Throws ArgumentError when
/// either total is not positive or a value is negative.
std::vector<double> expert_weights(const std::vector<ExpertProfile>& profiles);

enum class UsabilityBand { Excellent, Good, Okay, Poor, Awful };

/// [80.3, inf) Excellent, (68, 80.3) Good, 68 Okay, (51, 68) Poor, <= 51 Awful.
UsabilityBand usability_band(double score);
const char* band_name(UsabilityBand b);

struct ExpertResult
{
    std::string id;
    int odd_points = 0;
    int even_points = 0;
    double sus = 0.0;
    double avg_utility = 0.0;
    double weight = 0.0;
    double weighted_sus = 0.0;
    double weighted_utility = 0.0;
};

struct EvalReport
{
    std::vector<ExpertResult> experts;
    std::vector<ExpertResponse> responses;
    double weighted_usability = 0.0;
    double weighted_utility = 0.0;
    UsabilityBand band = UsabilityBand::Awful;

    /// Question-by-expert table followed by the score rows.
    std::string format_table() const;
    /// `expert,ye,pt,weight,sus,w_sus,avg_utility,w_utility` plus a `total` row.
    std::string format_csv() const;
};

/// Throws ArgumentError when lengths differ or the list is empty.
EvalReport weighted_totals(const std::vector<double>& sus_scores, const std::vector<double>& utility_avgs,
                           const std::vector<double>& weights);

/// Full evaluation of a cohort.
EvalReport evaluate_experts(const std::vector<ExpertResponse>& responses);

/// One expert per row: id, YE, PT, 10 usability answers, 4 utility answers.
/// A header row and `#` comments are skipped. Throws DecodeError with the
/// line number on malformed rows and ValidationError on bad answers.
std::vector<ExpertResponse> parse_expert_csv(const std::string& text);
std::vector<ExpertResponse> load_expert_csv(const std::filesystem::path& path);

} // namespace resmo
