#include "resmo/graph.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace resmo {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 14> kKindNames{{
    {LayerKind::Input, "input"},
    {LayerKind::Conv, "conv"},
    {LayerKind::Depthwise, "depthwise"},
    {LayerKind::Pointwise, "pointwise"},
    {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::Relu, "relu"},
    {LayerKind::AvgPool, "avgpool"},
    {LayerKind::MaxPool, "maxpool"},
    {LayerKind::Dense, "dense"},
    {LayerKind::Dropout, "dropout"},
    {LayerKind::Softmax, "softmax"},
    {LayerKind::Concat, "concat"},
    {LayerKind::Add, "add"},
    {LayerKind::Flatten, "flatten"},
}};

std::string where(const LayerSpec& s)
{
    return "layer '" + s.name + "' (" + std::string(to_string(s.kind)) + ")";
}

void check_name(const std::string& name)
{
    if (name.empty())
        throw GraphError("layer name must not be empty");
    for (char ch : name)
        if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',' || ch == '=' || ch == '#')
            throw GraphError("invalid character in layer name '" + name + "'");
    if (name == "<-")
        throw GraphError("'<-' is not a valid layer name");
}

Shape spatial(const LayerSpec& s, const Shape& in, const char* what)
{
    if (in.rank() != 3)
        throw GraphError(where(s) + ": " + what + " needs an HxWxC feature map, got " + in.str());
    return in;
}

Index window(const LayerSpec& s, Index size, const char* axis)
{
    if (s.k < 1 || s.stride < 1 || s.padding < 0)
        throw GraphError(where(s) + ": k and stride must be >= 1 and padding >= 0");
    if (size + 2 * s.padding < s.k)
        throw GraphError(where(s) + ": " + axis + " " + std::to_string(size) +
                         " with padding " + std::to_string(s.padding) +
                         " is smaller than the window " + std::to_string(s.k) +
                         " (non-positive spatial output)");
    return (size + 2 * s.padding - s.k) / s.stride + 1;
}

template <typename T>
T parse_number(std::string_view text, const std::string& key, std::size_t line)
{
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end)
        throw GraphError("line " + std::to_string(line) + ": bad value '" + std::string(text) + "' for " + key);
    return value;
}

std::string format_double(double v)
{
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
            ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
            ++j;
        if (j > i)
            out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace

std::string_view to_string(LayerKind kind)
{
    for (const auto& [k, n] : kKindNames)
        if (k == kind)
            return n;
    return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view text)
{
    for (const auto& [k, n] : kKindNames)
        if (n == text)
            return k;
    return std::nullopt;
}

bool LayerSpec::has_params() const
{
    switch (kind) {
    case LayerKind::Conv:
    case LayerKind::Depthwise:
    case LayerKind::Pointwise:
    case LayerKind::BatchNorm:
    case LayerKind::Dense:
        return true;
    default:
        return false;
    }
}

Shape infer_output_shape(const LayerSpec& s, const std::vector<Shape>& in)
{
    const auto arity = [&](std::size_t lo, std::size_t hi) {
        if (in.size() < lo || in.size() > hi)
            throw GraphError(where(s) + ": expects " +
                             (lo == hi ? std::to_string(lo) : "at least " + std::to_string(lo)) +
                             " input(s), got " + std::to_string(in.size()));
    };
    constexpr std::size_t many = static_cast<std::size_t>(-1);

    switch (s.kind) {
    case LayerKind::Input:
        arity(0, 0);
        if (s.h < 1 || s.w < 1 || s.c < 1)
            throw GraphError(where(s) + ": h, w and c must be positive");
        return Shape{s.h, s.w, s.c};
    case LayerKind::Conv:
    case LayerKind::Pointwise: {
        arity(1, 1);
        const Shape x = spatial(s, in[0], "convolution");
        if (s.kind == LayerKind::Pointwise && s.k != 1)
            throw GraphError(where(s) + ": pointwise kernel must be 1");
        if (s.out < 1)
            throw GraphError(where(s) + ": out must be positive");
        return Shape{window(s, x[0], "height"), window(s, x[1], "width"), s.out};
    }
    case LayerKind::Depthwise: {
        arity(1, 1);
        const Shape x = spatial(s, in[0], "depthwise convolution");
        return Shape{window(s, x[0], "height"), window(s, x[1], "width"), x[2]};
    }
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
        arity(1, 1);
        const Shape x = spatial(s, in[0], "pooling");
        if (s.padding >= s.k)
            throw GraphError(where(s) + ": padding must be smaller than the window");
        return Shape{window(s, x[0], "height"), window(s, x[1], "width"), x[2]};
    }
    case LayerKind::BatchNorm:
        arity(1, 1);
        if (!(s.epsilon > 0.0) || !(s.momentum > 0.0 && s.momentum < 1.0))
            throw GraphError(where(s) + ": epsilon must be > 0 and momentum in (0, 1)");
        return in[0];
    case LayerKind::Relu:
        arity(1, 1);
        return in[0];
    case LayerKind::Dropout:
        arity(1, 1);
        if (!(s.rate >= 0.0 && s.rate < 1.0))
            throw GraphError(where(s) + ": rate must be in [0, 1)");
        return in[0];
    case LayerKind::Dense:
        arity(1, 1);
        if (in[0].rank() != 1)
            throw GraphError(where(s) + ": dense needs a flat (n) input, got " + in[0].str() + "; add a flatten layer");
        if (s.out < 1)
            throw GraphError(where(s) + ": out must be positive");
        return Shape{s.out};
    case LayerKind::Softmax:
        arity(1, 1);
        if (in[0].rank() != 1)
            throw GraphError(where(s) + ": softmax needs a flat (n) input, got " + in[0].str());
        return in[0];
    case LayerKind::Flatten:
        arity(1, 1);
        return Shape{in[0].numel()};
    case LayerKind::Add:
        arity(2, many);
        for (std::size_t i = 1; i < in.size(); ++i)
            if (!(in[i] == in[0]))
                throw GraphError(where(s) + ": add inputs disagree, " + in[0].str() + " vs " + in[i].str());
        return in[0];
    case LayerKind::Concat: {
        arity(2, many);
        Index channels = 0;
        for (const auto& x : in) {
            if (x.rank() != 3 || in[0].rank() != 3 || x[0] != in[0][0] || x[1] != in[0][1])
                throw GraphError(where(s) + ": concat inputs disagree on spatial dims, " + in[0].str() + " vs " +
                                 x.str());
            channels += x[2];
        }
        return Shape{in[0][0], in[0][1], channels};
    }
    }
    throw GraphError(where(s) + ": unknown kind");
}

// ---------------------------------------------------------------------------

ModelGraph ModelGraph::from_layers(std::vector<LayerSpec> layers, std::string name)
{
    if (layers.empty())
        throw GraphError("graph has no layers");
    ModelGraph g;
    g.name_ = std::move(name);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& s = layers[i];
        check_name(s.name);
        if (g.index_.count(s.name))
            throw GraphError("duplicate layer name '" + s.name + "'");
        if ((s.kind == LayerKind::Input) != (i == 0))
            throw GraphError(i == 0 ? "the first layer must be the single input node"
                                    : "graph has more than one input node ('" + s.name + "')");
        if (s.kind == LayerKind::Softmax && i + 1 != layers.size())
            throw GraphError("softmax '" + s.name + "' must be the last layer");
        if (i + 1 == layers.size() && s.kind != LayerKind::Softmax)
            throw GraphError("graph must end in a softmax output layer");

        std::vector<std::size_t> edges;
        std::vector<Shape> in;
        for (const auto& input : s.inputs) {
            const auto it = g.index_.find(input);
            if (it == g.index_.end())
                throw GraphError(where(s) + ": input '" + input + "' is not defined before it");
            edges.push_back(it->second);
            in.push_back(g.shapes_[it->second]);
        }
        g.shapes_.push_back(infer_output_shape(s, in));
        g.edges_.push_back(std::move(edges));
        g.index_.emplace(s.name, i);
    }
    g.layers_ = std::move(layers);
    return g;
}

std::size_t ModelGraph::index_of(std::string_view name) const
{
    const auto it = index_.find(name);
    if (it == index_.end())
        throw GraphError("no layer named '" + std::string(name) + "'");
    return it->second;
}

bool ModelGraph::contains(std::string_view name) const
{
    return index_.find(name) != index_.end();
}

Shape ModelGraph::input_shape_of(std::size_t i) const
{
    const auto& e = edges_.at(i);
    return e.empty() ? Shape{} : shapes_[e.front()];
}

int ModelGraph::count_blocks(std::string_view prefix) const
{
    std::set<std::string_view> labels;
    for (const auto& s : layers_)
        if (s.block.size() > prefix.size() && std::string_view(s.block).substr(0, prefix.size()) == prefix &&
            std::isdigit(static_cast<unsigned char>(s.block[prefix.size()])))
            labels.insert(s.block);
    return static_cast<int>(labels.size());
}

// ---------------------------------------------------------------------------

ModelGraph parse_graph(std::string_view text, std::string name)
{
    std::vector<LayerSpec> layers;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        auto tokens = split_ws(line);
        if (tokens.empty()) {
            if (eol == text.size())
                break;
            continue;
        }
        if (tokens.size() < 2)
            throw GraphError("line " + std::to_string(line_no) + ": expected 'name kind ...'");

        LayerSpec s;
        s.name = std::string(tokens[0]);
        const auto kind = parse_layer_kind(tokens[1]);
        if (!kind)
            throw GraphError("line " + std::to_string(line_no) + ": unknown layer kind '" + std::string(tokens[1]) + "'");
        s.kind = *kind;

        std::size_t t = 2;
        for (; t < tokens.size() && tokens[t] != "<-"; ++t) {
            const auto tok = tokens[t];
            const auto eq = tok.find('=');
            if (eq == std::string_view::npos)
                throw GraphError("line " + std::to_string(line_no) + ": expected key=value, got '" + std::string(tok) + "'");
            const std::string key(tok.substr(0, eq));
            const auto value = tok.substr(eq + 1);
            if (key == "k")
                s.k = parse_number<int>(value, key, line_no);
            else if (key == "stride")
                s.stride = parse_number<int>(value, key, line_no);
            else if (key == "pad")
                s.padding = parse_number<int>(value, key, line_no);
            else if (key == "out")
                s.out = parse_number<Index>(value, key, line_no);
            else if (key == "h")
                s.h = parse_number<Index>(value, key, line_no);
            else if (key == "w")
                s.w = parse_number<Index>(value, key, line_no);
            else if (key == "c")
                s.c = parse_number<Index>(value, key, line_no);
            else if (key == "eps")
                s.epsilon = parse_number<double>(value, key, line_no);
            else if (key == "momentum")
                s.momentum = parse_number<double>(value, key, line_no);
            else if (key == "rate")
                s.rate = parse_number<double>(value, key, line_no);
            else if (key == "block")
                s.block = std::string(value);
            else if (key == "act") {
                if (value == "relu")
                    s.activation = Activation::Relu;
                else if (value == "none")
                    s.activation = Activation::None;
                else
                    throw GraphError("line " + std::to_string(line_no) + ": act must be relu or none");
            } else
                throw GraphError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        if (t < tokens.size()) {
            std::string joined;
            for (++t; t < tokens.size(); ++t)
                joined += tokens[t];
            std::size_t start = 0;
            while (start <= joined.size()) {
                const std::size_t comma = std::min(joined.find(',', start), joined.size());
                if (comma > start)
                    s.inputs.emplace_back(joined.substr(start, comma - start));
                start = comma + 1;
            }
            if (s.inputs.empty())
                throw GraphError("line " + std::to_string(line_no) + ": '<-' without inputs");
        }
        layers.push_back(std::move(s));
        if (eol == text.size())
            break;
    }
    return ModelGraph::from_layers(std::move(layers), std::move(name));
}

ModelGraph load_graph(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open graph file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_graph(ss.str(), path.stem().string());
}

std::string format_graph(const ModelGraph& graph)
{
    std::ostringstream out;
    out << "# " << graph.name() << "\n";
    for (const auto& s : graph.layers()) {
        out << s.name << ' ' << to_string(s.kind);
        switch (s.kind) {
        case LayerKind::Input:
            out << " h=" << s.h << " w=" << s.w << " c=" << s.c;
            break;
        case LayerKind::Conv:
            out << " k=" << s.k << " stride=" << s.stride << " pad=" << s.padding << " out=" << s.out;
            break;
        case LayerKind::Depthwise:
        case LayerKind::AvgPool:
        case LayerKind::MaxPool:
            out << " k=" << s.k << " stride=" << s.stride << " pad=" << s.padding;
            break;
        case LayerKind::Pointwise:
            out << " stride=" << s.stride << " out=" << s.out;
            break;
        case LayerKind::Dense:
            out << " out=" << s.out << " act=" << (s.activation == Activation::Relu ? "relu" : "none");
            break;
        case LayerKind::BatchNorm:
            out << " eps=" << format_double(s.epsilon) << " momentum=" << format_double(s.momentum);
            break;
        case LayerKind::Dropout:
            out << " rate=" << format_double(s.rate);
            break;
        default:
            break;
        }
        if (!s.block.empty())
            out << " block=" << s.block;
        if (!s.inputs.empty()) {
            out << " <- ";
            for (std::size_t i = 0; i < s.inputs.size(); ++i)
                out << (i ? "," : "") << s.inputs[i];
        }
        out << '\n';
    }
    return out.str();
}

void save_graph(const ModelGraph& graph, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write graph file " + path.string());
    out << format_graph(graph);
    if (!out)
        throw IoError("failed writing graph file " + path.string());
}

// ---------------------------------------------------------------------------

GraphBuilder::GraphBuilder(Index height, Index width, Index channels, std::string input_name)
{
    LayerSpec in;
    in.name = std::move(input_name);
    in.kind = LayerKind::Input;
    in.h = height;
    in.w = width;
    in.c = channels;
    add(std::move(in));
}

const std::string& GraphBuilder::add(LayerSpec spec)
{
    check_name(spec.name);
    if (index_.count(spec.name))
        throw GraphError("duplicate layer name '" + spec.name + "'");
    std::vector<Shape> in;
    for (const auto& name : spec.inputs) {
        const auto it = index_.find(name);
        if (it == index_.end())
            throw GraphError(where(spec) + ": entry layer '" + name + "' does not exist");
        in.push_back(shapes_[it->second]);
    }
    shapes_.push_back(infer_output_shape(spec, in));
    index_.emplace(spec.name, layers_.size());
    layers_.push_back(std::move(spec));
    return layers_.back().name;
}

Shape GraphBuilder::shape_of(std::string_view name) const
{
    const auto it = index_.find(name);
    if (it == index_.end())
        throw GraphError("no layer named '" + std::string(name) + "'");
    return shapes_[it->second];
}

ModelGraph GraphBuilder::build(std::string name) const
{
    return ModelGraph::from_layers(layers_, std::move(name));
}

} // namespace resmo
