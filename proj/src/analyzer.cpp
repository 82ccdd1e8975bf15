#include "resmo/analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

namespace resmo {

namespace {

constexpr const char* kMissing = "—";

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// code points, so the em dash lines up
std::size_t display_width(const std::string& s)
{
    std::size_t n = 0;
    for (unsigned char ch : s)
        n += (ch & 0xC0) != 0x80;
    return n;
}

std::string pad(const std::string& s, std::size_t width, bool left)
{
    const std::size_t cps = display_width(s);
    if (cps >= width)
        return s;
    const std::string fill(width - cps, ' ');
    return left ? s + fill : fill + s;
}

} // namespace

std::string_view to_string(MultAddConvention c)
{
    return c == MultAddConvention::PerWeight ? "per_weight" : "per_activation";
}

MultAddConvention parse_convention(std::string_view text)
{
    std::string t(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) {
        return ch == '-' ? '_' : static_cast<char>(std::tolower(ch));
    });
    if (t == "per_weight" || t == "weight")
        return MultAddConvention::PerWeight;
    if (t == "per_activation" || t == "activation")
        return MultAddConvention::PerActivation;
    throw ConfigError("unknown mult-add convention '" + std::string(text) + "' (use per_weight or per_activation)");
}

std::string group_thousands(Index v)
{
    std::string digits = std::to_string(v < 0 ? -v : v);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i && (digits.size() - i) % 3 == 0)
            out += ',';
        out += digits[i];
    }
    return v < 0 ? "-" + out : out;
}

LayerCost layer_cost(const ModelGraph& g, std::size_t i)
{
    const LayerSpec& s = g.layer(i);
    const Shape in = g.input_shape_of(i);
    const Shape out = g.output_shape(i);
    LayerCost c;
    c.name = s.name;
    c.kind = s.kind;
    switch (s.kind) {
    case LayerKind::Conv:
    case LayerKind::Pointwise: {
        const Index taps = Index{s.k} * s.k * in[2] * out[2];
        c.biases = out[2];
        c.np = c.learnable = taps + c.biases;
        c.multadds_per_weight = 2 * taps;
        c.multadds_per_activation = taps * out[0] * out[1];
        break;
    }
    case LayerKind::Depthwise: {
        const Index taps = Index{s.k} * s.k * in[2];
        c.biases = in[2];
        c.np = c.learnable = taps + c.biases;
        c.multadds_per_weight = 2 * taps;
        c.multadds_per_activation = taps * out[0] * out[1];
        break;
    }
    case LayerKind::Dense: {
        const Index taps = in[0] * out[0];
        c.biases = out[0];
        c.np = c.learnable = taps + c.biases;
        c.multadds_per_weight = 2 * taps;
        c.multadds_per_activation = taps;
        break;
    }
    case LayerKind::BatchNorm: {
        const Index ch = in[in.rank() - 1];
        c.np = 4 * ch;
        c.learnable = 2 * ch;
        c.multadds_per_weight = 2 * ch;
        break;
    }
    default:
        break;
    }
    return c;
}

namespace {

template <typename F>
Count collect(const ModelGraph& g, F pick)
{
    Count out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerCost c = layer_cost(g, i);
        const Index v = pick(c);
        out.per_layer.emplace_back(c.name, v);
        out.total += v;
    }
    return out;
}

} // namespace

Count count_params(const ModelGraph& g)
{
    return collect(g, [](const LayerCost& c) { return c.np; });
}

Count count_learnable_params(const ModelGraph& g)
{
    return collect(g, [](const LayerCost& c) { return c.learnable; });
}

Count count_multadds(const ModelGraph& g, MultAddConvention convention)
{
    switch (convention) {
    case MultAddConvention::PerWeight:
        return collect(g, [](const LayerCost& c) { return c.multadds_per_weight; });
    case MultAddConvention::PerActivation:
        return collect(g, [](const LayerCost& c) { return c.multadds_per_activation; });
    }
    throw ConfigError("unknown mult-add convention");
}

EfficiencyReport analyze(const ModelGraph& g, Measured measured)
{
    EfficiencyReport r;
    r.model = g.name();
    r.measured = measured;
    for (std::size_t i = 0; i < g.size(); ++i) {
        LayerCost c = layer_cost(g, i);
        r.total_np += c.np;
        r.total_learnable += c.learnable;
        r.total_biases += c.biases;
        if (c.kind == LayerKind::BatchNorm)
            r.total_bn_np += c.np;
        r.multadds_per_weight += c.multadds_per_weight;
        r.multadds_per_activation += c.multadds_per_activation;
        r.layers.push_back(std::move(c));
    }
    return r;
}

std::string render_table(const std::vector<EfficiencyReport>& rows, MultAddConvention convention)
{
    const std::vector<std::string> head{"Model", "NP", "Mult-Add Ops.", "Accuracy", "RTE", "MMU"};
    std::vector<std::vector<std::string>> cells{head};
    for (const auto& r : rows) {
        const auto& m = r.measured;
        cells.push_back({r.model, group_thousands(r.total_np), group_thousands(r.multadds(convention)),
                         m.accuracy ? fixed(*m.accuracy, 2) : kMissing,
                         m.rte_s ? fixed(*m.rte_s, 2) + " sec." : kMissing,
                         m.mmu_mb ? fixed(*m.mmu_mb, 2) + " MB" : kMissing});
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c)
            width[c] = std::max(width[c], display_width(row[c]));
    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c)
                out << "  ";
            out << pad(cells[r][c], width[c], c == 0);
        }
        out << '\n';
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : width)
                total += w;
            out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    if (convention != MultAddConvention::PerWeight)
        out << "(mult-adds counted " << to_string(convention) << ")\n";
    return out.str();
}

std::string render_csv(const std::vector<EfficiencyReport>& rows)
{
    std::ostringstream out;
    out << "model,np,multadds_per_weight,multadds_per_activation,accuracy,rte_s,mmu_mb\n";
    for (const auto& r : rows) {
        const auto& m = r.measured;
        std::string model = r.model;
        if (model.find_first_of(",\"\n") != std::string::npos) {
            std::string quoted = "\"";
            for (char ch : model)
                quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            model = quoted + "\"";
        }
        out << model << ',' << r.total_np << ',' << r.multadds_per_weight << ',' << r.multadds_per_activation << ','
            << (m.accuracy ? fixed(*m.accuracy, 4) : "") << ',' << (m.rte_s ? fixed(*m.rte_s, 6) : "") << ','
            << (m.mmu_mb ? fixed(*m.mmu_mb, 2) : "") << '\n';
    }
    return out.str();
}

std::string render_layers(const EfficiencyReport& r)
{
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-10s %12s %12s %14s %16s\n", "layer", "kind", "np", "learnable",
                  "madd/weight", "madd/activation");
    out << line;
    for (const auto& c : r.layers) {
        if (c.np == 0 && c.multadds_per_activation == 0)
            continue;
        std::snprintf(line, sizeof line, "%-28s %-10s %12lld %12lld %14lld %16lld\n", c.name.c_str(),
                      std::string(to_string(c.kind)).c_str(), static_cast<long long>(c.np),
                      static_cast<long long>(c.learnable), static_cast<long long>(c.multadds_per_weight),
                      static_cast<long long>(c.multadds_per_activation));
        out << line;
    }
    std::snprintf(line, sizeof line, "%-28s %-10s %12lld %12lld %14lld %16lld\n", "total", "",
                  static_cast<long long>(r.total_np), static_cast<long long>(r.total_learnable),
                  static_cast<long long>(r.multadds_per_weight), static_cast<long long>(r.multadds_per_activation));
    out << line;
    out << "np: " << group_thousands(r.total_np) << " stored (" << group_thousands(r.total_learnable)
        << " learnable, " << group_thousands(r.total_np - r.total_learnable) << " batchnorm running statistics)\n";
    return out.str();
}

} // namespace resmo
