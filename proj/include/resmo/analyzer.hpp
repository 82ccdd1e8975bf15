#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "resmo/graph.hpp"

namespace resmo {

/// How multiply-adds are counted.
///   PerWeight      two operations per non-bias weight, plus 2c per batchnorm
///   PerActivation  one multiply-add per kernel tap per output position
enum class MultAddConvention { PerWeight, PerActivation };

std::string_view to_string(MultAddConvention c);
/// Accepts "per_weight" / "per-weight" / "weight" and the activation forms.
MultAddConvention parse_convention(std::string_view text);

struct LayerCost
{
    std::string name;
    LayerKind kind = LayerKind::Input;
    Index np = 0;         ///< stored scalars (batchnorm counts 4c)
    Index learnable = 0;  ///< scalars trained by gradient descent (batchnorm counts 2c)
    Index biases = 0;
    Index multadds_per_weight = 0;
    Index multadds_per_activation = 0;
};

struct Count
{
    std::vector<std::pair<std::string, Index>> per_layer;
    Index total = 0;
};

LayerCost layer_cost(const ModelGraph& g, std::size_t i);
Count count_params(const ModelGraph& g);
Count count_learnable_params(const ModelGraph& g);
Count count_multadds(const ModelGraph& g, MultAddConvention convention);

struct Measured
{
    std::optional<double> accuracy;  ///< fraction in [0, 1]
    std::optional<double> rte_s;
    std::optional<double> mmu_mb;
};

struct EfficiencyReport
{
    std::string model;
    std::vector<LayerCost> layers;
    Index total_np = 0;
    Index total_learnable = 0;
    Index total_biases = 0;
    Index total_bn_np = 0;
    Index multadds_per_weight = 0;
    Index multadds_per_activation = 0;
    Measured measured;

    Index multadds(MultAddConvention c) const
    {
        return c == MultAddConvention::PerWeight ? multadds_per_weight : multadds_per_activation;
    }
};

EfficiencyReport analyze(const ModelGraph& g, Measured measured = {});

/// Model comparison table, one row per report in the given order. Missing
/// measured values print as an em dash.
std::string render_table(const std::vector<EfficiencyReport>& rows,
                         MultAddConvention convention = MultAddConvention::PerWeight);
/// Columns: model,np,multadds_per_weight,multadds_per_activation,accuracy,rte_s,mmu_mb
std::string render_csv(const std::vector<EfficiencyReport>& rows);
/// Per-layer breakdown with both subtotals.
std::string render_layers(const EfficiencyReport& report);

/// 1234567 -> "1,234,567".
std::string group_thousands(Index v);

} // namespace resmo
